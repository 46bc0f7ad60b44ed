use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointHeader, NetState};
use super::log::{EventKind, EventLog, Module, StepLosses};
use super::{TrainConfig, TrainSet};
use crate::error::{bail, Result};
use crate::fen::FeatureExtractor;
use crate::kernels::bilinear_up2;
use crate::losses::{d_objective_neg_var, generator_loss};
use crate::netcore::{Discriminator, Generator, Stage};
use crate::nn::Adam;
use crate::tape::Tape;
use crate::tensor::Tensor;

const GROW_SEED_G: u64 = 0x6772_6f77_5f67;
const GROW_SEED_D: u64 = 0x6772_6f77_5f64;
const L1_MIN_DELTA: f64 = 1e-4;

/// Four-phase progressive trainer.
///
/// 1. both networks at the base resolution;
/// 2. the discriminator grows and trains alone while its alpha ramps,
///    scoring bilinearly upsampled low-stage fakes;
/// 3. the generator grows and trains alone against the frozen grown
///    discriminator while its alpha ramps;
/// 4. both train jointly with alphas fixed at their maxima.
///
/// Alpha advances once per epoch in phases 2 and 3 and only for the
/// module being grown, so the two never move together.
pub struct Trainer {
    config: TrainConfig,
    class_names: Vec<String>,
    pub g: Generator,
    pub d: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    phase: u8,
    running: Option<u8>,
    epoch: u32,
    log: EventLog,
    fen: Box<dyn FeatureExtractor>,
}

impl Trainer {
    pub fn new(config: TrainConfig, class_names: Vec<String>, fen: Box<dyn FeatureExtractor>) -> Result<Self> {
        config.validate()?;
        fen.stage_index(&config.fen.layer)?;
        let c = class_names.len();
        let g = Generator::new(config.generator_config(c), config.fade_g()?, config.seed)?;
        let d = Discriminator::new(config.discriminator_config(c), config.fade_d()?, config.seed.wrapping_add(1))?;
        let opt_g = Adam::new(config.adam_g(), g.params());
        let opt_d = Adam::new(config.adam_d(), d.params());
        Ok(Self {
            config,
            class_names,
            g,
            d,
            opt_g,
            opt_d,
            phase: 0,
            running: None,
            epoch: 0,
            log: EventLog::new(),
            fen,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Last completed phase (0 before training).
    pub fn phase(&self) -> u8 {
        self.phase
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.config.batch_size)
    }

    fn alphas(&self) -> (f64, f64) {
        let g = if self.g.stage() == Stage::High { self.g.fade.alpha() } else { 0.0 };
        let d = if self.d.stage() == Stage::High { self.d.fade.alpha() } else { 0.0 };
        (g, d)
    }

    fn record(&mut self, kind: EventKind, losses: Option<StepLosses>) {
        let (phase, epoch, a) = (self.current_phase(), self.epoch, self.alphas());
        self.log.push(epoch, phase, kind, a, losses);
    }

    fn current_phase(&self) -> u8 {
        self.running.unwrap_or(self.phase)
    }

    /// Run phase `phase`, which must directly follow the last completed one.
    /// `on_checkpoint` receives periodic and end-of-phase snapshots.
    pub fn run_phase(&mut self, phase: u8, data: &TrainSet, on_checkpoint: &mut dyn FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        if data.is_empty() {
            bail!(Data, "training corpus is empty");
        }
        if data.class_names != self.class_names {
            bail!(Config, "corpus classes {:?} differ from model classes {:?}", data.class_names, self.class_names);
        }
        if !(1..=4).contains(&phase) || phase != self.phase + 1 {
            bail!(State, "cannot run phase {phase} after phase {}", self.phase);
        }
        match phase {
            2 => {
                self.d.grow_to_high(self.config.seed ^ GROW_SEED_D)?;
                self.opt_d.sync(self.d.params());
            }
            3 => {
                self.g.grow_to_high(self.config.seed ^ GROW_SEED_G)?;
                self.opt_g.sync(self.g.params());
            }
            _ => {}
        }
        self.running = Some(phase);
        self.record(EventKind::PhaseBegin, None);
        let epochs = self.config.epochs.get(phase);
        let (mut best_l1, mut stale) = (f64::INFINITY, 0u32);
        for _ in 0..epochs {
            self.epoch += 1;
            self.run_epoch(phase, data)?;
            match phase {
                2 => {
                    if self.d.fade.advance() {
                        self.record(EventKind::Alpha { module: Module::Discriminator }, None);
                    }
                }
                3 => {
                    if self.g.fade.advance() {
                        self.record(EventKind::Alpha { module: Module::Generator }, None);
                    }
                }
                _ => {}
            }
            self.record(EventKind::EpochEnd, None);
            if self.config.checkpoint_every > 0 && self.epoch % self.config.checkpoint_every == 0 {
                on_checkpoint(&self.checkpoint_inner(phase, true))?;
            }
            if phase == 1 && self.config.early_stop_patience > 0 {
                let l1 = self.log.epoch_l1(self.epoch).unwrap_or(f64::INFINITY);
                if l1 < best_l1 - L1_MIN_DELTA {
                    best_l1 = l1;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.config.early_stop_patience {
                        self.record(EventKind::EarlyStop, None);
                        break;
                    }
                }
            }
        }
        self.record(EventKind::PhaseEnd, None);
        self.running = None;
        self.phase = phase;
        on_checkpoint(&self.checkpoint())
    }

    fn run_epoch(&mut self, phase: u8, data: &TrainSet) -> Result<()> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (u64::from(self.epoch) << 32));
        order.shuffle(&mut rng);
        for chunk in order.chunks(self.config.batch_size) {
            match phase {
                1 => {
                    let (x, y) = data.batch(chunk, false)?;
                    self.step_d(&x, &y, None)?;
                    self.step_g(&x, &y)?;
                }
                2 => {
                    let (x_low, _) = data.batch(chunk, false)?;
                    let (x, y) = data.batch(chunk, true)?;
                    let fake = bilinear_up2(&self.g.infer(&x_low)?);
                    self.step_d(&x, &y, Some(fake))?;
                }
                3 => {
                    let (x, y) = data.batch(chunk, true)?;
                    self.step_g(&x, &y)?;
                }
                _ => {
                    let (x, y) = data.batch(chunk, true)?;
                    self.step_d(&x, &y, None)?;
                    self.step_g(&x, &y)?;
                }
            }
        }
        Ok(())
    }

    fn step_d(&mut self, x: &Tensor, y: &Tensor, fake: Option<Tensor>) -> Result<()> {
        let fake = match fake {
            Some(f) => f,
            None => self.g.infer(x)?,
        };
        let mut tape = Tape::new();
        let (xv, yv, fv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(fake));
        let sr = self.d.forward(&mut tape, xv, yv, true)?;
        let sf = self.d.forward(&mut tape, xv, fv, true)?;
        let loss = d_objective_neg_var(&mut tape, sr, sf)?;
        let d_obj = -tape.scalar_value(loss);
        let grads = tape.backward(loss).into_params();
        self.opt_d.step(self.d.params_mut(), &grads);
        self.record(
            EventKind::StepD,
            Some(StepLosses {
                d: d_obj,
                ..StepLosses::default()
            }),
        );
        Ok(())
    }

    fn step_g(&mut self, x: &Tensor, y: &Tensor) -> Result<()> {
        let weights = self.config.loss_weights()?;
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let fake = self.g.forward(&mut tape, xv, true)?;
        let sf = self.d.forward(&mut tape, xv, fake, false)?;
        let fen: &dyn FeatureExtractor = self.fen.as_ref();
        let gl = generator_loss(&mut tape, sf, yv, fake, weights, Some((fen, self.config.fen.layer.as_str())))?;
        let grads = tape.backward(gl.total).into_params();
        self.opt_g.step(self.g.params_mut(), &grads);
        self.record(
            EventKind::StepG,
            Some(StepLosses {
                d: 0.0,
                g_adv: gl.adv,
                l1: gl.l1,
                feature: gl.feature,
            }),
        );
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.checkpoint_inner(self.phase, false)
    }

    fn checkpoint_inner(&self, phase: u8, partial: bool) -> Checkpoint {
        let header = CheckpointHeader {
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            phase,
            partial,
            epoch: self.epoch,
            generator: NetState {
                stage: self.g.stage(),
                fade: self.g.fade,
            },
            discriminator: NetState {
                stage: self.d.stage(),
                fade: self.d.fade,
            },
            adam_g: (self.opt_g.config, self.opt_g.steps),
            adam_d: (self.opt_d.config, self.opt_d.steps),
            log: self.log.clone(),
        };
        Checkpoint::assemble(header, self.g.params(), self.d.params(), &self.opt_g, &self.opt_d)
    }

    /// Resume from a completed-phase checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, fen: Box<dyn FeatureExtractor>) -> Result<Self> {
        let h = &ckpt.header;
        if h.partial {
            bail!(State, "checkpoint was taken mid-phase and cannot be resumed");
        }
        let g = ckpt.generator()?;
        let d = ckpt.discriminator()?;
        let (opt_g, opt_d) = ckpt.optimizers(g.params(), d.params())?;
        fen.stage_index(&h.config.fen.layer)?;
        Ok(Self {
            config: h.config.clone(),
            class_names: h.class_names.clone(),
            g,
            d,
            opt_g,
            opt_d,
            phase: h.phase,
            running: None,
            epoch: h.epoch,
            log: h.log.clone(),
            fen,
        })
    }
}
