use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::log::EventLog;
use super::TrainConfig;
use crate::error::{bail, Result};
use crate::image::Image;
use crate::labelkit::{encode_onehot, CompositeLabel};
use crate::netcore::{Discriminator, FadeIn, Generator, Stage};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    pub stage: Stage,
    pub fade: FadeIn,
}

/// Everything except tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    /// Last completed phase, or the running phase for a periodic snapshot.
    pub phase: u8,
    /// Taken mid-phase.
    pub partial: bool,
    pub epoch: u32,
    pub generator: NetState,
    pub discriminator: NetState,
    pub adam_g: (AdamConfig, u64),
    pub adam_d: (AdamConfig, u64),
    pub log: EventLog,
}

/// Training snapshot: header plus named tensors. Tensor names are prefixed
/// `g/`, `d/` for weights and `adam_g.m/`, `adam_g.v/`, `adam_d.m/`,
/// `adam_d.v/` for optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub(crate) fn assemble(header: CheckpointHeader, g: &ParamStore, d: &ParamStore, opt_g: &Adam, opt_d: &Adam) -> Self {
        let mut tensors = Vec::new();
        let mut add = |prefix: &str, store: &ParamStore, moments: Option<&[Tensor]>| {
            for (id, name, t) in store.iter() {
                let t = moments.map_or(t, |m| &m[id.0]);
                tensors.push((alloc::format!("{prefix}/{name}"), t.clone()));
            }
        };
        add("g", g, None);
        add("d", d, None);
        add("adam_g.m", g, Some(&opt_g.first));
        add("adam_g.v", g, Some(&opt_g.second));
        add("adam_d.m", d, Some(&opt_d.first));
        add("adam_d.v", d, Some(&opt_d.second));
        Self { header, tensors }
    }

    fn prefixed(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let p = alloc::format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(p.as_str()).map(|s| (String::from(s), t.clone())))
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.header.class_names.len()
    }

    /// Reject checkpoints trained on a different class count.
    pub fn expect_classes(&self, num_classes: usize) -> Result<()> {
        if self.num_classes() != num_classes {
            bail!(Config, "checkpoint has {} classes, input has {num_classes}", self.num_classes());
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<Generator> {
        let h = &self.header;
        Generator::from_parts(
            h.config.generator_config(self.num_classes()),
            h.generator.stage,
            h.generator.fade,
            self.prefixed("g"),
        )
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        let h = &self.header;
        Discriminator::from_parts(
            h.config.discriminator_config(self.num_classes()),
            h.discriminator.stage,
            h.discriminator.fade,
            self.prefixed("d"),
        )
    }

    pub(crate) fn optimizers(&self, g: &ParamStore, d: &ParamStore) -> Result<(Adam, Adam)> {
        let build = |store: &ParamStore, (config, steps): (AdamConfig, u64), tag: &str| -> Result<Adam> {
            let mut first = Vec::with_capacity(store.len());
            let mut second = Vec::with_capacity(store.len());
            let (m, v) = (self.prefixed(&alloc::format!("{tag}.m")), self.prefixed(&alloc::format!("{tag}.v")));
            let mut scratch = store.clone();
            scratch.load(m)?;
            first.extend(scratch.iter().map(|(_, _, t)| t.clone()));
            scratch.load(v)?;
            second.extend(scratch.iter().map(|(_, _, t)| t.clone()));
            Ok(Adam {
                config,
                steps,
                first,
                second,
            })
        };
        Ok((build(g, self.header.adam_g, "adam_g")?, build(d, self.header.adam_d, "adam_d")?))
    }
}

/// Deterministic generator inference on a composite label.
pub fn synthesize(g: &Generator, composite: &CompositeLabel) -> Result<Image> {
    if composite.num_classes() != g.config().num_classes {
        bail!(
            Config,
            "composite has {} classes, generator expects {}",
            composite.num_classes(),
            g.config().num_classes
        );
    }
    let res = g.resolution();
    if composite.width() != res || composite.height() != res {
        bail!(Dimension, "composite is {}×{}, generator runs at {res}×{res}", composite.width(), composite.height());
    }
    let y = g.infer(encode_onehot(composite).tensor())?;
    Image::from_tensor(&y, 0)
}
