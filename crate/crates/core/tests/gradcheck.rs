use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spgan_core::fen::RandomConvFen;
use spgan_core::losses::{generator_loss, LossWeights};
use spgan_core::netcore::*;
use spgan_core::nn::ParamId;
use spgan_core::tape::Tape;
use spgan_core::{Shape, Tensor};

struct Fixture {
    g: Generator,
    d: Discriminator,
    fen: RandomConvFen,
    x: Tensor,
    y: Tensor,
    w: LossWeights,
}

impl Fixture {
    fn new() -> Self {
        let g = Generator::new(
            GeneratorConfig {
                num_classes: 3,
                num_residual_blocks: 2,
                base_channels: 4,
                max_channels: 16,
                high_channels: 4,
                base_resolution: 32,
            },
            FadeIn::new(0.5, 50).unwrap(),
            17,
        )
        .unwrap();
        let d = Discriminator::new(
            DiscriminatorConfig {
                num_classes: 3,
                base_channels: 4,
                max_channels: 16,
                high_channels: 4,
                base_resolution: 32,
                output_size: 6,
                norm: DiscNorm::Instance,
            },
            FadeIn::new(1.0, 50).unwrap(),
            18,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut x = Tensor::zeros(Shape::new(2, 4, 32, 32));
        for n in 0..2 {
            for yy in 0..32 {
                for xx in 0..32 {
                    x.set(n, rng.random_range(0..4), yy, xx, 1.0);
                }
            }
        }
        let y = Tensor::from_fn(Shape::new(2, 1, 32, 32), |_, _, _, _| rng.random_range(-0.9..0.9));
        Self {
            g,
            d,
            fen: RandomConvFen::new(7),
            x,
            y,
            w: LossWeights::new(1.0, 10.0).unwrap(),
        }
    }

    fn loss(&self, g: &Generator, grads: bool) -> (f64, Vec<(ParamId, Tensor)>) {
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(self.x.clone()), tape.constant(self.y.clone()));
        let fake = g.forward(&mut tape, xv, grads).unwrap();
        let scores = self.d.forward(&mut tape, xv, fake, false).unwrap();
        let gl = generator_loss(&mut tape, scores, yv, fake, self.w, Some((&self.fen, "conv4"))).unwrap();
        let value = tape.scalar_value(gl.total);
        let grads = if grads { tape.backward(gl.total).into_params() } else { Vec::new() };
        (value, grads)
    }
}

#[test]
fn generator_objective_gradients_match_central_differences() {
    let start = std::time::Instant::now();
    let fx = Fixture::new();
    let (_, grads) = fx.loss(&fx.g, true);
    let analytic: std::collections::HashMap<usize, Tensor> = grads.into_iter().map(|(id, t)| (id.0, t)).collect();

    let ids: Vec<(ParamId, usize)> = fx.g.params().iter().map(|(id, _, t)| (id, t.data().len())).collect();
    let total: usize = ids.iter().map(|(_, n)| n).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    // The objective is piecewise smooth (ReLU, abs); a small step keeps
    // kinks out of the difference window. f64 leaves ample precision.
    let h = 1e-6;
    let samples = 300;
    let mut good = 0;
    let mut worst = Vec::new();
    for _ in 0..samples {
        let mut k = rng.random_range(0..total);
        let (id, idx) = ids
            .iter()
            .find_map(|&(id, n)| {
                if k < n {
                    Some((id, k))
                } else {
                    k -= n;
                    None
                }
            })
            .unwrap();
        let mut g = fx.g.clone();
        let orig = g.params().get(id).data()[idx];
        g.params_mut().get_mut(id).data_mut()[idx] = orig + h;
        let (lp, _) = fx.loss(&g, false);
        g.params_mut().get_mut(id).data_mut()[idx] = orig - h;
        let (lm, _) = fx.loss(&g, false);
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic.get(&id.0).map_or(0.0, |t| t.data()[idx]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        if rel < 1e-3 {
            good += 1;
        } else {
            worst.push((rel, a, numeric));
        }
    }
    let frac = good as f64 / samples as f64;
    assert!(frac >= 0.95, "only {frac} within tolerance; worst {:?}", &worst[..worst.len().min(5)]);
    assert!(start.elapsed().as_secs() < 120);
}
