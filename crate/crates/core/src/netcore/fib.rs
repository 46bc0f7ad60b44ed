use rand::Rng;

use crate::error::{bail, Result};
use crate::kernels::{self, ConvGeom};
use crate::nn::{Conv, Init, ParamId, ParamStore, Scope};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Fresh fade-in layers start from a narrow normal.
pub(crate) const FIB_INIT: Init = Init::Normal(0.02);

/// `alpha·main + (1 - alpha)·side`.
pub fn fib_blend(main: &Tensor, side: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!(Parameter, "alpha must lie in [0, 1], got {alpha}");
    }
    main.zip_map(side, |m, s| alpha * m + (1.0 - alpha) * s)
}

/// Side branch of FIB-D: 2×2 average pooling.
pub fn fib_down(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        bail!(Dimension, "FIB-D needs even spatial size, got {s}");
    }
    Ok(kernels::avg_pool2(input))
}

/// Side branch of FIB-U: 2× bilinear interpolation.
pub fn fib_up(input: &Tensor) -> Tensor {
    kernels::bilinear_up2(input)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Act {
    /// Instance normalization followed by ReLU.
    NormRelu,
    Leaky(f64),
}

impl Act {
    fn apply(self, s: &mut Scope<'_>, x: Var) -> Var {
        match self {
            Act::NormRelu => {
                let n = s.tape.instance_norm(x);
                s.tape.relu(n)
            }
            Act::Leaky(slope) => s.tape.leaky_relu(x, slope),
        }
    }
}

/// Down-sampling fade-in block.
///
/// Main branch: 1×1 projection, 3×3 conv, stride-2 3×3 conv back to the
/// input channel count. Side branch: average pooling. With `alpha = 0` the
/// block is exactly the resize-only route.
#[derive(Debug, Clone, PartialEq)]
pub struct FadeInDown {
    from: Conv,
    conv: Conv,
    down: Conv,
    act: Act,
}

impl FadeInDown {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        hidden: usize,
        act: Act,
    ) -> Self {
        let mk = |store: &mut ParamStore, rng: &mut _, part: &str, cin, cout, g| {
            Conv::new(store, rng, &alloc::format!("{name}.{part}"), cin, cout, g, true, FIB_INIT)
        };
        Self {
            from: mk(store, rng, "from", channels, hidden, ConvGeom::new(1, 1, 0)),
            conv: mk(store, rng, "conv", hidden, hidden, ConvGeom::new(3, 1, 1)),
            down: mk(store, rng, "down", hidden, channels, ConvGeom::new(3, 2, 1)),
            act,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.from.params().chain(self.conv.params()).chain(self.down.params())
    }

    pub fn forward(&self, s: &mut Scope<'_>, x: Var, alpha: f64) -> Result<Var> {
        let side = s.tape.avg_pool2(x)?;
        let h = self.from.forward(s, x)?;
        let h = self.act.apply(s, h);
        let h = self.conv.forward(s, h)?;
        let h = self.act.apply(s, h);
        let main = self.down.forward(s, h)?;
        s.tape.blend(main, side, alpha)
    }
}

/// Up-sampling fade-in block.
///
/// Main branch: stride-2 deconvolution, 3×3 conv, 1×1 projection to image
/// channels, tanh. Side branch: bilinear doubling of the low-resolution
/// image the backbone already produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FadeInUp {
    up: Conv,
    conv: Conv,
    to_image: Conv,
}

impl FadeInUp {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        hidden: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            up: Conv::new_transposed(
                store,
                rng,
                &alloc::format!("{name}.up"),
                channels,
                hidden,
                ConvGeom::new(3, 2, 1),
                FIB_INIT,
            ),
            conv: Conv::new(
                store,
                rng,
                &alloc::format!("{name}.conv"),
                hidden,
                hidden,
                ConvGeom::new(3, 1, 1),
                true,
                FIB_INIT,
            ),
            to_image: Conv::new(
                store,
                rng,
                &alloc::format!("{name}.to_image"),
                hidden,
                out_channels,
                ConvGeom::new(1, 1, 0),
                true,
                FIB_INIT,
            ),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.up.params().chain(self.conv.params()).chain(self.to_image.params())
    }

    /// `features` feed the main branch, `side_image` is resized for the side branch.
    pub fn forward(&self, s: &mut Scope<'_>, features: Var, side_image: Var, alpha: f64) -> Result<Var> {
        let side = s.tape.bilinear_up2(side_image);
        let h = self.up.forward(s, features)?;
        let h = Act::NormRelu.apply(s, h);
        let h = self.conv.forward(s, h)?;
        let h = Act::NormRelu.apply(s, h);
        let h = self.to_image.forward(s, h)?;
        let main = s.tape.tanh(h);
        s.tape.blend(main, side, alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn blend_endpoints_and_midpoint() {
        let main = Tensor::full(Shape::new(1, 2, 3, 3), 2.0);
        let side = Tensor::zeros(Shape::new(1, 2, 3, 3));
        assert_eq!(fib_blend(&main, &side, 0.0).unwrap(), side);
        assert_eq!(fib_blend(&main, &side, 1.0).unwrap(), main);
        assert!(fib_blend(&main, &side, 0.5).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(fib_blend(&main, &side, 1.5).is_err());
        let other = Tensor::zeros(Shape::new(1, 2, 2, 3));
        assert!(matches!(fib_blend(&main, &other, 0.5), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn fib_down_rejects_odd_size() {
        let t = Tensor::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(fib_down(&t), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn constant_maps_survive_down_then_up() {
        let t = Tensor::full(Shape::new(1, 3, 8, 8), 0.375);
        let d = fib_down(&t).unwrap();
        assert_eq!(d.shape(), Shape::new(1, 3, 4, 4));
        assert!(d.data().iter().all(|&v| v == 0.375));
        assert_eq!(fib_up(&d), t);
    }
}
