use sigstack::synth::{
    fbm_covariance, gen_pen_strokes, generate_batch, hurst_dataset, rescaled_range_hurst, FbmSampler,
    HurstDatasetSpec, ProcessKind, PEN_STYLES,
};
use sigstack::signature;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn endpoints(kind: ProcessKind, len: usize, count: usize, seed: u64) -> Vec<f64> {
    generate_batch(kind, len, count, seed)
        .unwrap()
        .iter()
        .map(|s| s.point(s.len() - 1)[0])
        .collect()
}

#[test]
fn brownian_endpoint_has_unit_variance() {
    let (_, var) = mean_var(&endpoints(ProcessKind::Brownian, 100, 10_000, 1));
    assert!((0.94..=1.06).contains(&var), "{var}");
}

#[test]
fn brownian_increments_have_mean_zero() {
    let paths = generate_batch(ProcessKind::Brownian, 100, 10_000, 2).unwrap();
    let incs: Vec<f64> = paths.iter().flat_map(|p| p.increments()).collect();
    let (m, _) = mean_var(&incs);
    let bound = 3.0 / ((10_000 * 99) as f64).sqrt();
    assert!(m.abs() <= bound, "{m} vs {bound}");
}

#[test]
fn ou_reaches_its_stationary_variance() {
    let (theta, sigma) = (8.0, 1.0);
    let kind = ProcessKind::Ou { theta, mu: 0.0, sigma, x0: 0.0 };
    let (_, var) = mean_var(&endpoints(kind, 100, 5_000, 3));
    let target = sigma * sigma / (2.0 * theta);
    assert!((var / target - 1.0).abs() <= 0.1, "{var} vs {target}");
}

#[test]
fn fbm_endpoint_variance_is_one() {
    for (i, h) in [0.3, 0.7].into_iter().enumerate() {
        let (_, var) = mean_var(&endpoints(ProcessKind::Fbm { hurst: h }, 50, 5_000, 4 + i as u64));
        assert!((var - 1.0).abs() <= 0.1, "H={h}: {var}");
    }
}

#[test]
fn fbm_empirical_covariance_matches_kernel() {
    let h = 0.3;
    let paths = generate_batch(ProcessKind::Fbm { hurst: h }, 5, 20_000, 6).unwrap();
    // grid 0, 0.25, 0.5, 0.75, 1
    let a: Vec<f64> = paths.iter().map(|p| p.point(1)[0]).collect();
    let b: Vec<f64> = paths.iter().map(|p| p.point(3)[0]).collect();
    let (ma, _) = mean_var(&a);
    let (mb, _) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    let k = fbm_covariance(0.25, 0.75, h);
    assert!((cov / k - 1.0).abs() <= 0.1, "{cov} vs {k}");
}

#[test]
fn fbm_covariances_factor_with_small_jitter() {
    for h in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
        for n in [16, 128, 512] {
            let s = FbmSampler::new(h, n).unwrap();
            assert!(s.jitter <= 1e-10, "H={h} n={n}");
        }
    }
}

fn mean_rs(kind: ProcessKind) -> f64 {
    let paths = generate_batch(kind, 2049, 50, 7).unwrap();
    paths
        .iter()
        .map(|p| rescaled_range_hurst(&p.increments()).unwrap())
        .sum::<f64>()
        / 50.0
}

#[test]
fn rescaled_range_on_brownian_noise() {
    let m = mean_rs(ProcessKind::Brownian);
    assert!((m - 0.5).abs() <= 0.1, "{m}");
}

#[test]
fn rescaled_range_on_persistent_fbm() {
    let m = mean_rs(ProcessKind::Fbm { hurst: 0.8 });
    assert!(m > 0.6 && m < 0.95, "{m}");
}

#[test]
fn pen_styles_have_distinct_signatures() {
    let sigs: Vec<_> = (0..PEN_STYLES)
        .map(|s| signature(&gen_pen_strokes(s, 30, 0.0, 0).unwrap(), 4).unwrap())
        .collect();
    for i in 0..sigs.len() {
        for j in i + 1..sigs.len() {
            let d = sigs[i].sub(&sigs[j]).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(d > 1e-2, "styles {i} and {j}: {d}");
        }
    }
}

#[test]
fn hurst_dataset_is_a_function_of_its_seed() {
    let spec = HurstDatasetSpec { train: 6, test: 3, steps: 40, ..HurstDatasetSpec::default() };
    let a = hurst_dataset(&spec).unwrap();
    let b = hurst_dataset(&spec).unwrap();
    assert_eq!(a.train.len(), 6);
    assert_eq!(a.test.len(), 3);
    for (x, y) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
        assert_eq!(x.hurst, y.hurst);
        assert_eq!(x.path, y.path);
        assert!((0.2..0.8).contains(&x.hurst));
        assert_eq!(x.path.len(), 41);
        assert_eq!(x.path.channels(), 2);
    }
    let other = hurst_dataset(&HurstDatasetSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(other.train[0].hurst, a.train[0].hurst);
}
