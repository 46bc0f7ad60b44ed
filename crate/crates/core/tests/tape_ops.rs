use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spgan_core::kernels::ConvGeom;
use spgan_core::tape::{Tape, Var};
use spgan_core::{Shape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Compare the input gradient of `sum log σ(op(x) - t)` with central differences.
fn check(name: &str, shape: Shape, op: impl Fn(&mut Tape, Var) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let x = random(&mut rng, shape);
    let probe = {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = op(&mut tape, v);
        tape.value(y).shape()
    };
    let target = random(&mut rng, probe);
    let f = |x: &Tensor, grad: bool| {
        let mut tape = Tape::new();
        let v = if grad { tape.input(x.clone()) } else { tape.constant(x.clone()) };
        let y = op(&mut tape, v);
        let t = tape.constant(target.clone());
        let d = tape.sub(y, t).unwrap();
        let a = tape.log_sigmoid(d);
        let l = tape.sum(a);
        let value = tape.scalar_value(l);
        let g = grad.then(|| tape.backward(l).wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())));
        (value, g)
    };
    let (_, g) = f(&x, true);
    let g = g.unwrap();
    let h = 1e-6;
    for i in 0..x.data().len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let num = (f(&p, false).0 - f(&m, false).0) / (2.0 * h);
        let a = g.data()[i];
        assert!((a - num).abs() < 1e-4 * a.abs().max(num.abs()) + 1e-7, "{name}: element {i}: analytic {a} numeric {num}");
    }
}

fn weight(seed: u64, shape: Shape) -> Tensor {
    random(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

#[test]
fn convolution_gradients() {
    for (k, s, p, side) in [(3, 1, 1, 5), (3, 2, 1, 6), (3, 2, 0, 8), (3, 2, 0, 7), (4, 2, 1, 8), (1, 1, 0, 4), (5, 1, 0, 7)] {
        let w = weight(k as u64 * 10 + s as u64, Shape::new(3, 2, k, k));
        let b = weight(2, Shape::new(1, 3, 1, 1));
        check(&format!("conv k{k} s{s} p{p} n{side}"), Shape::new(2, 2, side, side), |t, x| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone().reshape(Shape::new(1, 1, 1, 3)).unwrap());
            t.conv2d(x, wv, Some(bv), ConvGeom::new(k, s, p)).unwrap()
        });
    }
}

#[test]
fn transposed_convolution_gradients() {
    let w = weight(3, Shape::new(2, 3, 3, 3));
    check("deconv", Shape::new(1, 2, 4, 4), |t, x| {
        let wv = t.constant(w.clone());
        t.conv_transpose2d(x, wv, None, ConvGeom::new(3, 2, 1), 1).unwrap()
    });
}

#[test]
fn pointwise_and_norm_gradients() {
    let s = Shape::new(2, 3, 4, 4);
    check("relu", s, |t, x| t.relu(x));
    check("leaky", s, |t, x| t.leaky_relu(x, 0.2));
    check("tanh", s, |t, x| t.tanh(x));
    check("scale", s, |t, x| t.scale(x, -1.7));
    check("instance_norm", s, |t, x| t.instance_norm(x));
    check("log_sigmoid", s, |t, x| t.log_sigmoid(x));
    check("log_one_minus_sigmoid", s, |t, x| t.log_one_minus_sigmoid(x));
    check("channel_affine", s, |t, x| t.channel_affine(x, &[0.5, -2.0, 1.5], &[0.1, 0.0, -0.3]).unwrap());
    check("add_sub", s, |t, x| {
        let y = t.tanh(x);
        let z = t.add(x, y).unwrap();
        t.sub(z, y).unwrap()
    });
    check("blend", s, |t, x| {
        let y = t.tanh(x);
        t.blend(x, y, 0.3).unwrap()
    });
}

#[test]
fn resize_and_reduction_gradients() {
    let s = Shape::new(1, 2, 6, 6);
    check("avg_pool2", s, |t, x| t.avg_pool2(x).unwrap());
    check("bilinear_up2", s, |t, x| t.bilinear_up2(x));
    check("max_pool", s, |t, x| t.max_pool(x, ConvGeom::new(2, 2, 0)).unwrap());
    check("concat", s, |t, x| {
        let y = t.tanh(x);
        t.concat(x, y).unwrap()
    });
    check("channel_mean", s, |t, x| t.channel_mean(x));
    check("channel_var", s, |t, x| t.channel_var(x));
    check("mean", s, |t, x| t.mean(x));
}

#[test]
fn cross_entropy_gradient() {
    let labels: Vec<u8> = (0..2 * 9).map(|i| (i * 7 % 3) as u8).collect();
    check("softmax_ce", Shape::new(2, 3, 3, 3), |t, x| t.softmax_cross_entropy(x, &labels).unwrap());
}
