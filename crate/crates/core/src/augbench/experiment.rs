use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{gan_augment, traditional_augment, EditRanges, TradRanges};
use super::unet::UNet;
use crate::error::{bail, Error, Result};
use crate::image::Image;
use crate::labelkit::{EdgeSketch, LabelMap};
use crate::metrics::dice_per_class;
use crate::netcore::Generator;
use crate::nn::{Adam, AdamConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMode {
    None,
    Trad,
    TradGan,
}

impl AugMode {
    pub fn name(self) -> &'static str {
        match self {
            AugMode::None => "none",
            AugMode::Trad => "trad",
            AugMode::TradGan => "trad_gan",
        }
    }
}

impl FromStr for AugMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugMode::None),
            "trad" => Ok(AugMode::Trad),
            "trad_gan" => Ok(AugMode::TradGan),
            other => bail!(Parameter, "unknown augmentation policy {other:?}; expected none, trad or trad_gan"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPolicy {
    pub mode: AugMode,
    pub p: f64,
    pub trad: TradRanges,
    pub edits: EditRanges,
}

impl AugPolicy {
    pub fn new(mode: AugMode) -> Self {
        Self {
            mode,
            p: 0.3,
            trad: TradRanges::default(),
            edits: EditRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegConfig {
    pub width: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            width: 8,
            steps: 240,
            batch_size: 4,
            lr: 0.003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A corpus item; `id` is its path or other stable identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SegItem {
    pub id: String,
    pub split: Split,
    pub image: Image,
    pub label: LabelMap,
    pub sketch: EdgeSketch,
}

/// Every use of a corpus item during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub split: Split,
    /// `train`, `augment_trad`, `augment_gan` or `evaluate`.
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegRunReport {
    pub policy: AugMode,
    pub p: f64,
    pub fraction: f64,
    pub seed: u64,
    pub train_items_available: usize,
    pub train_items_used: usize,
    pub test_items: usize,
    pub class_names: Vec<String>,
    /// DICE per structure class (background excluded).
    pub dice: Vec<f64>,
    pub mean_dice: f64,
    pub trad_applied: usize,
    pub gan_applied: usize,
    pub audit: Vec<AuditEntry>,
}

impl SegRunReport {
    /// Test items that were ever augmented or synthesized from.
    pub fn audit_violations(&self) -> Vec<&AuditEntry> {
        self.audit
            .iter()
            .filter(|e| e.split == Split::Test && e.action != "evaluate")
            .collect()
    }
}

/// Train a U-Net on `⌈fraction·N⌉` training items under `policy` and
/// report DICE on the untouched test items.
pub fn run_seg_experiment(
    items: &[SegItem],
    policy: &AugPolicy,
    fraction: f64,
    seed: u64,
    config: &SegConfig,
    generator: Option<&Generator>,
) -> Result<SegRunReport> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Parameter, "data fraction must lie in (0, 1], got {fraction}");
    }
    if !(0.0..=1.0).contains(&policy.p) {
        bail!(Parameter, "augmentation probability must lie in [0, 1], got {}", policy.p);
    }
    let train: Vec<&SegItem> = items.iter().filter(|i| i.split == Split::Train).collect();
    let test: Vec<&SegItem> = items.iter().filter(|i| i.split == Split::Test).collect();
    if train.is_empty() || test.is_empty() {
        bail!(Data, "corpus needs both train and test items ({} / {})", train.len(), test.len());
    }
    let class_names = train[0].label.class_names().to_vec();
    if items.iter().any(|i| i.label.class_names() != class_names.as_slice()) {
        bail!(Data, "corpus items disagree on class names");
    }
    let g = match (policy.mode, generator) {
        (AugMode::TradGan, None) => bail!(Config, "trad_gan policy needs a generator checkpoint"),
        (AugMode::TradGan, Some(g)) => {
            if g.config().num_classes != class_names.len() {
                bail!(Config, "generator has {} classes, corpus has {}", g.config().num_classes, class_names.len());
            }
            Some(g)
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let used = libm::ceil(fraction * train.len() as f64) as usize;
    let chosen: Vec<&SegItem> = order[..used.min(train.len())].iter().map(|&i| train[i]).collect();

    let mut audit: Vec<AuditEntry> = chosen
        .iter()
        .map(|i| AuditEntry {
            id: i.id.clone(),
            split: i.split,
            action: "train".into(),
        })
        .collect();
    let k = class_names.len();
    let mut net = UNet::new(k, config.width, seed ^ 0x5e6);
    let mut opt = Adam::new(AdamConfig::new(config.lr, 0.9, 0.999), &net.params);
    let (mut trad_applied, mut gan_applied) = (0usize, 0usize);
    let mut cursor = chosen.len();
    let mut perm: Vec<usize> = Vec::new();
    let mut seen_aug = alloc::collections::BTreeSet::new();
    for _ in 0..config.steps {
        let mut imgs = Vec::with_capacity(config.batch_size);
        let mut targets = Vec::new();
        for _ in 0..config.batch_size {
            if cursor >= perm.len() {
                perm = (0..chosen.len()).collect();
                perm.shuffle(&mut rng);
                cursor = 0;
            }
            let item = chosen[perm[cursor]];
            cursor += 1;
            let (mut image, mut label) = (item.image.clone(), item.label.clone());
            if let Some(g) = g {
                if rng.random_bool(policy.p) {
                    let (i, l, _) = gan_augment(&label, &item.sketch, &policy.edits, g, &mut rng)?;
                    image = i;
                    label = l;
                    gan_applied += 1;
                    if seen_aug.insert((item.id.clone(), "augment_gan")) {
                        audit.push(AuditEntry {
                            id: item.id.clone(),
                            split: item.split,
                            action: "augment_gan".into(),
                        });
                    }
                }
            }
            if policy.mode != AugMode::None {
                let (i, l, op) = traditional_augment(&image, &label, policy.p, &policy.trad, &mut rng)?;
                if op.is_some() {
                    trad_applied += 1;
                    if seen_aug.insert((item.id.clone(), "augment_trad")) {
                        audit.push(AuditEntry {
                            id: item.id.clone(),
                            split: item.split,
                            action: "augment_trad".into(),
                        });
                    }
                }
                image = i;
                label = l;
            }
            imgs.push(image.to_tensor());
            targets.extend_from_slice(label.grid());
        }
        let x = Tensor::stack(&imgs)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = net.forward(&mut tape, xv, true)?;
        let loss = tape.softmax_cross_entropy(logits, &targets)?;
        let grads = tape.backward(loss).into_params();
        opt.step(&mut net.params, &grads);
    }
    let trained = net;

    let classes: Vec<u8> = (1..k as u8).collect();
    let mut sums = alloc::vec![0.0; classes.len()];
    for item in &test {
        audit.push(AuditEntry {
            id: item.id.clone(),
            split: item.split,
            action: "evaluate".into(),
        });
        let pred = trained.predict(&item.image.to_tensor())?;
        for (s, d) in sums.iter_mut().zip(dice_per_class(&pred[0], item.label.grid(), &classes)?) {
            *s += d;
        }
    }
    let dice: Vec<f64> = sums.iter().map(|s| s / test.len() as f64).collect();
    let mean_dice = dice.iter().sum::<f64>() / dice.len().max(1) as f64;
    Ok(SegRunReport {
        policy: policy.mode,
        p: policy.p,
        fraction,
        seed,
        train_items_available: train.len(),
        train_items_used: chosen.len(),
        test_items: test.len(),
        class_names,
        dice,
        mean_dice,
        trad_applied,
        gan_applied,
        audit,
    })
}
