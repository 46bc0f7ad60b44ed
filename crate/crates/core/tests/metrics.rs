use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spgan_core::datagen::{generate_phantom, PhantomSpec};
use spgan_core::fen::RandomConvFen;
use spgan_core::metrics::*;
use spgan_core::Image;

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, mean: &[f64], sigma: f64) -> FeatureSet {
    let noise = Normal::new(0.0, sigma).unwrap();
    let rows = (0..n).map(|_| mean.iter().map(|m| m + noise.sample(rng)).collect()).collect();
    FeatureSet::new("gauss", rows).unwrap()
}

fn phantom_images(n: usize, side: usize) -> Vec<Image> {
    (0..n).map(|i| generate_phantom(&PhantomSpec::new(100 + i as u64, side, 2)).unwrap().1).collect()
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let fen = RandomConvFen::new(7);
    let imgs = phantom_images(6, 64);
    let a = FeatureSet::from_images(&imgs, &fen).unwrap();
    assert!(fid(&a, &a).unwrap() <= 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = gaussian_set(&mut rng, 200, &[0.0; 5], 1.0);
    assert!(fid(&g, &g).unwrap() <= 1e-6);
}

#[test]
fn fid_of_shifted_gaussians_is_squared_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // v = (3, 4, 0, ...) so |v|^2 = 25.
    let mut v = vec![0.0; 8];
    v[0] = 3.0;
    v[1] = 4.0;
    let a = gaussian_set(&mut rng, 10_000, &[0.0; 8], 0.5);
    let b = gaussian_set(&mut rng, 10_000, &v, 0.5);
    let f = fid(&a, &b).unwrap();
    assert!((f - 25.0).abs() <= 0.25, "fid {f}");
    assert!((fid(&b, &a).unwrap() - f).abs() < 1e-9);

    // In one dimension the distance has a closed form in the sample moments.
    let a = gaussian_set(&mut rng, 10_000, &[0.0], 1.0);
    let b = gaussian_set(&mut rng, 10_000, &[2.0], 1.0);
    let moments = |s: &FeatureSet| {
        let n = s.len() as f64;
        let m = s.rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let v = s.rows.iter().map(|r| (r[0] - m) * (r[0] - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    };
    let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
    let want = (ma - mb).powi(2) + va + vb - 2.0 * (va * vb).sqrt();
    let f = fid(&a, &b).unwrap();
    assert!((f - want).abs() < 1e-9, "fid {f} closed form {want}");
    // Sampling error of the mean shift alone is about 1.4% at this size.
    assert!((f - 4.0).abs() <= 0.2, "fid {f}");
}

/// Unbiased MMD² written directly from its definition.
fn kid_oracle(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let d = a.dim() as f64;
    let k = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (a.len(), b.len());
    let mut xx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                xx += k(&a.rows[i], &a.rows[j]);
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                yy += k(&b.rows[i], &b.rows[j]);
            }
        }
    }
    let mut xy = 0.0;
    for i in 0..m {
        for j in 0..n {
            xy += k(&a.rows[i], &b.rows[j]);
        }
    }
    let (m, n) = (m as f64, n as f64);
    100.0 * (xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n))
}

#[test]
fn kid_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 3, 10, 50] {
        let a = gaussian_set(&mut rng, n, &[0.0; 6], 1.0);
        let b = gaussian_set(&mut rng, n, &[0.3; 6], 1.2);
        for (x, y) in [(&a, &b), (&a, &a), (&b, &a)] {
            let got = kid(x, y).unwrap();
            let want = kid_oracle(x, y);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "n={n}: {got} vs {want}");
        }
    }

    // Point masses at 1 and 0 in one dimension: k(1,1) = 8, k(0,0) = 1,
    // k(1,0) = 1, so MMD² = 8 + 1 - 2 = 7.
    let ones = FeatureSet::new("pm", vec![vec![1.0]; 3]).unwrap();
    let zeros = FeatureSet::new("pm", vec![vec![0.0]; 3]).unwrap();
    assert!((kid(&ones, &zeros).unwrap() - 700.0).abs() < 1e-9);
}

#[test]
fn kid_is_centred_for_one_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vals: Vec<f64> = (0..100)
        .map(|_| {
            let a = gaussian_set(&mut rng, 40, &[0.0; 4], 1.0);
            let b = gaussian_set(&mut rng, 40, &[0.0; 4], 1.0);
            kid(&a, &b).unwrap()
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / 100.0;
    let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 99.0).sqrt();
    assert!(mean.abs() <= 2.0 * sd / 10.0, "mean {mean} sd {sd}");

    let a = gaussian_set(&mut rng, 60, &[0.0; 4], 1.0);
    let b = gaussian_set(&mut rng, 60, &[0.0; 4], 1.0);
    let sub = kid_subsets(&a, &b, 20, 10, &mut rng).unwrap();
    assert!(sub.is_finite());
    assert!(kid_subsets(&a, &b, 100, 10, &mut rng).is_err());
}

#[test]
fn ms_ssim_identity_symmetry_and_inversion() {
    let imgs = phantom_images(4, 256);
    for x in &imgs {
        assert!((ms_ssim(x, x).unwrap() - 1.0).abs() <= 1e-6);
    }
    let (x, y) = (&imgs[0], &imgs[1]);
    let xy = ms_ssim(x, y).unwrap();
    assert!((0.0..=1.0).contains(&xy));
    assert!((xy - ms_ssim(y, x).unwrap()).abs() < 1e-12);
    for x in &imgs {
        let mut inv = x.clone();
        for v in inv.data_mut() {
            *v = -*v;
        }
        let s = ms_ssim(x, &inv).unwrap();
        assert!(s < 0.5, "inverted {s}");
    }
    let small = phantom_images(2, 128);
    assert!((ms_ssim_scales(&small[0], &small[0], 4).unwrap() - 1.0).abs() <= 1e-6);
    assert!(ms_ssim(&small[0], &small[1]).is_err());
}

#[test]
fn lpips_identity_and_noise_monotonicity() {
    let fen = RandomConvFen::new(7);
    let imgs = phantom_images(3, 64);
    for x in &imgs {
        let t = x.to_tensor();
        assert_eq!(lpips(&t, &t, &fen).unwrap(), vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..x.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = 0.0;
        for amp in [0.05, 0.1, 0.2] {
            let mut y = x.clone();
            for (v, n) in y.data_mut().iter_mut().zip(&noise) {
                *v = (*v + amp * n).clamp(-1.0, 1.0);
            }
            let d = lpips(&t, &y.to_tensor(), &fen).unwrap()[0];
            let back = lpips(&y.to_tensor(), &t, &fen).unwrap()[0];
            assert!(d > last, "amp {amp}: {d} <= {last}");
            assert!((d - back).abs() < 1e-12);
            last = d;
        }
    }
}

#[test]
fn dice_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = rng.random_range(1..200);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let inter = a.iter().zip(&b).filter(|(x, y)| **x == 1 && **y == 1).count();
        let total = a.iter().filter(|&&x| x == 1).count() + b.iter().filter(|&&x| x == 1).count();
        let want = if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 };
        assert_eq!(dice(&a, &b).unwrap(), want);
    }
    let (w, h) = (8, 6);
    let left: Vec<u8> = (0..w * h).map(|i| u8::from(i % w < w / 2)).collect();
    let full = vec![1u8; w * h];
    assert_eq!(dice(&left, &full).unwrap(), 2.0 / 3.0);
    assert_eq!(dice(&full, &full).unwrap(), 1.0);
    let right: Vec<u8> = left.iter().map(|v| 1 - v).collect();
    assert_eq!(dice(&left, &right).unwrap(), 0.0);
    assert!(dice(&left, &full[1..]).is_err());
    let per = dice_per_class(&[0, 1, 2, 2], &[0, 1, 1, 2], &[1, 2]).unwrap();
    assert_eq!(per, vec![2.0 / 3.0, 2.0 / 3.0]);
}

#[test]
fn evaluate_reports_every_column() {
    let fen = RandomConvFen::new(7);
    let real = phantom_images(4, 64);
    let report = evaluate(&real, &real, &fen).unwrap();
    assert!(report.fid <= 1e-6);
    assert!((report.ms_ssim - 1.0).abs() < 1e-6);
    assert_eq!(report.lpips, 0.0);
    assert_eq!(report.ms_ssim_scales, 3);
    assert_eq!(MetricReport::CSV_HEADER, "FID,KIDx100,MS-SSIM,LPIPS");
    assert_eq!(report.csv_row().split(',').count(), 4);
    assert!(evaluate(&real, &real[..3], &fen).is_err());
}
