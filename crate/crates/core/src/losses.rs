//! Training objectives. Tape variants build differentiable graphs; the
//! plain functions evaluate the same formulas on tensors.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fen::FeatureExtractor;
use crate::tape::{Tape, Var, LOGIT_CLAMP};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// L1 weight.
    pub lambda1: f64,
    /// Feature-loss weight; zero drops the feature term.
    pub lambda2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            bail!(Parameter, "loss weights must be finite and non-negative, got {lambda1}, {lambda2}");
        }
        Ok(Self { lambda1, lambda2 })
    }
}

fn log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if x < 0.0 {
        x - libm::log1p(libm::exp(x))
    } else {
        -libm::log1p(libm::exp(-x))
    }
}

fn log_one_minus_sigmoid(x: f64) -> f64 {
    log_sigmoid(-x)
}

/// Mean of `ln(1 - σ(s))` over all patch units of the fake scores.
pub fn loss_g_adv(scores_fake: &Tensor) -> f64 {
    scores_fake.data().iter().map(|&s| log_one_minus_sigmoid(s)).sum::<f64>() / scores_fake.data().len() as f64
}

/// `mean ln σ(real) + mean ln(1 - σ(fake))`; the discriminator maximizes it.
pub fn loss_d(scores_real: &Tensor, scores_fake: &Tensor) -> f64 {
    let r = scores_real.data().iter().map(|&s| log_sigmoid(s)).sum::<f64>() / scores_real.data().len() as f64;
    r + loss_g_adv(scores_fake)
}

pub fn loss_l1(y: &Tensor, g: &Tensor) -> Result<f64> {
    if y.shape() != g.shape() {
        bail!(Dimension, "L1 loss between {} and {}", y.shape(), g.shape());
    }
    Ok(y.data().iter().zip(g.data()).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / y.data().len() as f64)
}

/// Mean absolute difference of per-channel feature means plus that of
/// variances, averaged over batch and channels.
pub fn loss_feature(real: &Tensor, fake: &Tensor, fen: &dyn FeatureExtractor, layer: &str) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let l = feature_loss_var(&mut tape, r, f, fen, layer)?;
    Ok(tape.scalar_value(l))
}

pub fn loss_g_total(adv: f64, l1: f64, feat: f64, w: LossWeights) -> f64 {
    adv + w.lambda1 * l1 + w.lambda2 * feat
}

pub fn g_adv_var(tape: &mut Tape, scores_fake: Var) -> Var {
    let l = tape.log_one_minus_sigmoid(scores_fake);
    tape.mean(l)
}

/// Negated discriminator objective, suitable for minimization.
pub fn d_objective_neg_var(tape: &mut Tape, scores_real: Var, scores_fake: Var) -> Result<Var> {
    let r = tape.log_sigmoid(scores_real);
    let r = tape.mean(r);
    let f = g_adv_var(tape, scores_fake);
    let total = tape.add(r, f)?;
    Ok(tape.scale(total, -1.0))
}

pub fn l1_var(tape: &mut Tape, y: Var, g: Var) -> Result<Var> {
    let d = tape.sub(y, g)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Mean absolute difference of per-channel feature means plus that of
/// per-channel variances, averaged over batch and channels.
pub fn feature_loss_var(tape: &mut Tape, real: Var, fake: Var, fen: &dyn FeatureExtractor, layer: &str) -> Result<Var> {
    let (rs, fs) = (tape.shape(real), tape.shape(fake));
    if rs != fs {
        bail!(Dimension, "feature loss between {rs} and {fs}");
    }
    let fr = fen.features(tape, real, layer)?;
    let ff = fen.features(tape, fake, layer)?;
    let (mr, mf) = (tape.channel_mean(fr), tape.channel_mean(ff));
    let (vr, vf) = (tape.channel_var(fr), tape.channel_var(ff));
    let dm = tape.sub(mr, mf)?;
    let dm = tape.abs(dm);
    let dm = tape.mean(dm);
    let dv = tape.sub(vr, vf)?;
    let dv = tape.abs(dv);
    let dv = tape.mean(dv);
    Ok(tape.add(dm, dv)?)
}

/// Generator objective `adv + λ1·L1 + λ2·feature`; the feature term is
/// skipped when `λ2 = 0` or no extractor is given.
pub struct GeneratorLoss {
    pub total: Var,
    pub adv: f64,
    pub l1: f64,
    pub feature: f64,
}

pub fn generator_loss(
    tape: &mut Tape,
    scores_fake: Var,
    real: Var,
    fake: Var,
    weights: LossWeights,
    fen: Option<(&dyn FeatureExtractor, &str)>,
) -> Result<GeneratorLoss> {
    let adv = g_adv_var(tape, scores_fake);
    let l1 = l1_var(tape, real, fake)?;
    let l1w = tape.scale(l1, weights.lambda1);
    let mut total = tape.add(adv, l1w)?;
    let mut feature = 0.0;
    if let (Some((fen, layer)), true) = (fen, weights.lambda2 > 0.0) {
        let f = feature_loss_var(tape, real, fake, fen, layer)?;
        feature = tape.scalar_value(f);
        let fw = tape.scale(f, weights.lambda2);
        total = tape.add(total, fw)?;
    }
    Ok(GeneratorLoss {
        total,
        adv: tape.scalar_value(adv),
        l1: tape.scalar_value(l1),
        feature,
    })
}
