use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv, Init, ParamStore, Scope};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Two-level encoder/decoder with skip connections.
#[derive(Debug, Clone)]
pub struct UNet {
    pub params: ParamStore,
    num_classes: usize,
    enc1: [Conv; 2],
    enc2: [Conv; 2],
    mid: [Conv; 2],
    dec2: [Conv; 2],
    dec1: [Conv; 2],
    head: Conv,
}

impl UNet {
    pub fn new(num_classes: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let g = ConvGeom::new(3, 1, 1);
        let mut pair = |p: &mut ParamStore, name: &str, cin: usize, cout: usize| {
            [
                Conv::new(p, &mut rng, &alloc::format!("{name}.0"), cin, cout, g, true, Init::He),
                Conv::new(p, &mut rng, &alloc::format!("{name}.1"), cout, cout, g, true, Init::He),
            ]
        };
        let (w1, w2, w3) = (width, 2 * width, 4 * width);
        let enc1 = pair(&mut p, "enc1", 1, w1);
        let enc2 = pair(&mut p, "enc2", w1, w2);
        let mid = pair(&mut p, "mid", w2, w3);
        let dec2 = pair(&mut p, "dec2", w3 + w2, w2);
        let dec1 = pair(&mut p, "dec1", w2 + w1, w1);
        let head = Conv::new(&mut p, &mut rng, "head", w1, num_classes, ConvGeom::new(1, 1, 0), true, Init::He);
        Self {
            params: p,
            num_classes,
            enc1,
            enc2,
            mid,
            dec2,
            dec1,
            head,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn block(s: &mut Scope<'_>, convs: &[Conv; 2], x: Var) -> Result<Var> {
        let mut h = x;
        for c in convs {
            h = c.forward(s, h)?;
            h = s.tape.relu(h);
        }
        Ok(h)
    }

    /// Class logits `[n, K, h, w]` for `[n, 1, h, w]` images; sides must be multiples of 4.
    pub fn forward(&self, tape: &mut Tape, x: Var, track: bool) -> Result<Var> {
        let sh = tape.shape(x);
        if sh.c != 1 || sh.h % 4 != 0 || sh.w % 4 != 0 {
            bail!(Dimension, "segmentation input must be [n, 1, 4k, 4k], got {sh}");
        }
        let pool = ConvGeom::new(2, 2, 0);
        let mut s = Scope::new(tape, &self.params, track);
        let e1 = Self::block(&mut s, &self.enc1, x)?;
        let p1 = s.tape.max_pool(e1, pool)?;
        let e2 = Self::block(&mut s, &self.enc2, p1)?;
        let p2 = s.tape.max_pool(e2, pool)?;
        let m = Self::block(&mut s, &self.mid, p2)?;
        let u2 = s.tape.bilinear_up2(m);
        let c2 = s.tape.concat(u2, e2)?;
        let d2 = Self::block(&mut s, &self.dec2, c2)?;
        let u1 = s.tape.bilinear_up2(d2);
        let c1 = s.tape.concat(u1, e1)?;
        let d1 = Self::block(&mut s, &self.dec1, c1)?;
        self.head.forward(&mut s, d1)
    }

    /// Per-pixel argmax class for each batch item.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<Vec<u8>>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let y = self.forward(&mut tape, x, false)?;
        let t = tape.value(y);
        let s = t.shape();
        let p = s.plane();
        Ok((0..s.n)
            .map(|n| {
                (0..p)
                    .map(|i| {
                        let mut best = 0;
                        for c in 1..s.c {
                            if t.data()[(n * s.c + c) * p + i] > t.data()[(n * s.c + best) * p + i] {
                                best = c;
                            }
                        }
                        best as u8
                    })
                    .collect()
            })
            .collect())
    }
}
