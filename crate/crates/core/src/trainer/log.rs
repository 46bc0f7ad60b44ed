use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PhaseBegin,
    StepD,
    StepG,
    /// One fade-in increment of a single module.
    Alpha { module: Module },
    EpochEnd,
    EarlyStop,
    PhaseEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StepLosses {
    /// Discriminator objective (maximized; ≤ 0).
    pub d: f64,
    pub g_adv: f64,
    pub l1: f64,
    pub feature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Global 1-based epoch; 0 before the first epoch of a run.
    pub epoch: u32,
    pub phase: u8,
    #[serde(flatten)]
    pub kind: EventKind,
    pub alpha_g: f64,
    pub alpha_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<StepLosses>,
}

/// Append-only training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub(crate) fn push(&mut self, epoch: u32, phase: u8, kind: EventKind, alpha: (f64, f64), losses: Option<StepLosses>) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            epoch,
            phase,
            kind,
            alpha_g: alpha.0,
            alpha_d: alpha.1,
            losses,
        });
    }

    /// Phases in the order they began.
    pub fn phases(&self) -> Vec<u8> {
        self.events.iter().filter(|e| e.kind == EventKind::PhaseBegin).map(|e| e.phase).collect()
    }

    /// Mean L1 of generator steps in the given global epoch.
    pub fn epoch_l1(&self, epoch: u32) -> Option<f64> {
        let v: Vec<f64> = self
            .events
            .iter()
            .filter(|e| e.epoch == epoch && e.kind == EventKind::StepG)
            .filter_map(|e| e.losses.map(|l| l.l1))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Replay the log against the schedule and list every violation.
    ///
    /// Checked: contiguous sequence numbers and monotone epochs; phases
    /// begin and end in order 1→4 with the configured epoch counts;
    /// per-phase step kinds (D only in 2, G only in 3, alternating D/G in
    /// 1 and 4); batches per epoch; alpha only ever moves one module at a
    /// time, by exactly one step, only for the module growing in that
    /// phase, stays at `min(k·step, max)`, and sits at both maxima in 4.
    pub fn audit(&self, config: &TrainConfig, batches_per_epoch: usize) -> Vec<String> {
        let mut bad = Vec::new();
        let div = f64::from(config.alpha_step_divisor);
        let ramp = |k: u32, max: f64| (f64::from(k) / div).min(max);
        let (mut prev_epoch, mut open_phase, mut last_phase) = (0u32, None::<u8>, 0u8);
        let (mut steps_g, mut steps_d) = (0u32, 0u32);
        let (mut prev_g, mut prev_d) = (None::<f64>, None::<f64>);
        let mut epochs_in_phase = 0u32;
        let mut early_stopped = false;
        let mut epoch_steps: Vec<EventKind> = Vec::new();

        for (i, e) in self.events.iter().enumerate() {
            let at = |msg: String| alloc::format!("event {}: {msg}", e.seq);
            if e.seq != i as u64 {
                bad.push(at(alloc::format!("sequence number {} out of order", e.seq)));
            }
            if e.epoch < prev_epoch {
                bad.push(at(alloc::format!("epoch went backwards {prev_epoch} → {}", e.epoch)));
            }
            prev_epoch = e.epoch;
            if e.alpha_g > config.alpha_max_g || e.alpha_g < 0.0 {
                bad.push(at(alloc::format!("alpha_g {} outside [0, {}]", e.alpha_g, config.alpha_max_g)));
            }
            if e.alpha_d > config.alpha_max_d || e.alpha_d < 0.0 {
                bad.push(at(alloc::format!("alpha_d {} outside [0, {}]", e.alpha_d, config.alpha_max_d)));
            }
            let phase_ok = open_phase == Some(e.phase);
            match e.kind {
                EventKind::PhaseBegin => {
                    if open_phase.is_some() {
                        bad.push(at("phase began while another was open".into()));
                    }
                    if e.phase != last_phase + 1 {
                        bad.push(at(alloc::format!("phase {} followed phase {last_phase}", e.phase)));
                    }
                    open_phase = Some(e.phase);
                    epochs_in_phase = 0;
                    early_stopped = false;
                    epoch_steps.clear();
                    if e.phase == 2 {
                        steps_d = 0;
                    }
                    if e.phase == 3 {
                        steps_g = 0;
                    }
                }
                _ if !phase_ok => bad.push(at(alloc::format!("event outside an open phase {}", e.phase))),
                EventKind::StepD | EventKind::StepG => {
                    let allowed = match e.phase {
                        2 => e.kind == EventKind::StepD,
                        3 => e.kind == EventKind::StepG,
                        _ => {
                            let want = if epoch_steps.len() % 2 == 0 { EventKind::StepD } else { EventKind::StepG };
                            e.kind == want
                        }
                    };
                    if !allowed {
                        bad.push(at(alloc::format!("{:?} not allowed here in phase {}", e.kind, e.phase)));
                    }
                    epoch_steps.push(e.kind);
                }
                EventKind::Alpha { module } => {
                    let grow = match e.phase {
                        2 => Some(Module::Discriminator),
                        3 => Some(Module::Generator),
                        _ => None,
                    };
                    if grow != Some(module) {
                        bad.push(at(alloc::format!("alpha update of {module:?} in phase {}", e.phase)));
                    }
                    let (pg, pd) = (prev_g.unwrap_or(0.0), prev_d.unwrap_or(0.0));
                    let moved_g = e.alpha_g != pg;
                    let moved_d = e.alpha_d != pd;
                    if moved_g && moved_d {
                        bad.push(at("alpha of both modules changed in one update".into()));
                    }
                    match module {
                        Module::Generator => {
                            steps_g += 1;
                            if moved_d || e.alpha_g != ramp(steps_g, config.alpha_max_g) {
                                bad.push(at(alloc::format!("alpha_g {} ≠ min({steps_g}/{div}, max)", e.alpha_g)));
                            }
                        }
                        Module::Discriminator => {
                            steps_d += 1;
                            if moved_g || e.alpha_d != ramp(steps_d, config.alpha_max_d) {
                                bad.push(at(alloc::format!("alpha_d {} ≠ min({steps_d}/{div}, max)", e.alpha_d)));
                            }
                        }
                    }
                }
                EventKind::EpochEnd => {
                    epochs_in_phase += 1;
                    let expect_steps = match e.phase {
                        2 | 3 => batches_per_epoch,
                        _ => 2 * batches_per_epoch,
                    };
                    if epoch_steps.len() != expect_steps {
                        bad.push(at(alloc::format!("{} steps in epoch, expected {expect_steps}", epoch_steps.len())));
                    }
                    epoch_steps.clear();
                }
                EventKind::EarlyStop => {
                    if e.phase != 1 {
                        bad.push(at("early stop outside phase 1".into()));
                    }
                    early_stopped = true;
                }
                EventKind::PhaseEnd => {
                    let want = config.epochs.get(e.phase);
                    if epochs_in_phase != want && !(early_stopped && epochs_in_phase < want) {
                        bad.push(at(alloc::format!("phase {} ran {epochs_in_phase} epochs, configured {want}", e.phase)));
                    }
                    last_phase = e.phase;
                    open_phase = None;
                }
            }
            // Outside alpha updates nothing may move alpha.
            if !matches!(e.kind, EventKind::Alpha { .. } | EventKind::PhaseBegin) {
                if prev_g.is_some_and(|p| p != e.alpha_g) || prev_d.is_some_and(|p| p != e.alpha_d) {
                    bad.push(at("alpha changed without an alpha update".into()));
                }
            }
            match e.phase {
                1 if e.alpha_g != 0.0 || e.alpha_d != 0.0 => bad.push(at("alpha nonzero at the low stage".into())),
                2 if e.alpha_g != 0.0 => bad.push(at("generator alpha nonzero before it grows".into())),
                4 if e.alpha_g != config.alpha_max_g || e.alpha_d != config.alpha_max_d => {
                    bad.push(at("alpha not at its maxima during joint training".into()))
                }
                _ => {}
            }
            prev_g = Some(e.alpha_g);
            prev_d = Some(e.alpha_d);
        }
        if open_phase.is_some() {
            bad.push("log ends inside an open phase".into());
        }
        bad
    }
}
