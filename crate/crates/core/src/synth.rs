//! Seeded synthetic paths and the rescaled-range Hurst estimator.
//!
//! All generators take an explicit seed and use ChaCha8, so a spec and seed
//! always reproduce the same stream bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};
use crate::stream::{uniform_grid, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProcessKind {
    Brownian,
    Ou {
        theta: f64,
        mu: f64,
        sigma: f64,
        x0: f64,
    },
    Fbm {
        hurst: f64,
    },
}

impl ProcessKind {
    /// OU defaults: `theta = 8, mu = 0, sigma = 1, x0 = 0`.
    pub fn default_ou() -> Self {
        ProcessKind::Ou {
            theta: 8.0,
            mu: 0.0,
            sigma: 1.0,
            x0: 0.0,
        }
    }
}

/// A process sampled at `length` points of the uniform grid on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub length: usize,
    pub seed: u64,
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(SigError::InvalidArgument("process length must be >= 2".into()));
        }
        match self.kind {
            ProcessKind::Brownian => Ok(()),
            ProcessKind::Ou { theta, sigma, .. } => {
                if theta > 0.0 && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(SigError::InvalidArgument(
                        "OU needs theta > 0 and sigma >= 0".into(),
                    ))
                }
            }
            ProcessKind::Fbm { hurst } => {
                if hurst > 0.0 && hurst < 1.0 {
                    Ok(())
                } else {
                    Err(SigError::InvalidArgument("Hurst parameter must lie in (0, 1)".into()))
                }
            }
        }
    }

    pub fn generate(&self) -> Result<Stream> {
        match self.kind {
            ProcessKind::Brownian => gen_brownian(self),
            ProcessKind::Ou { .. } => gen_ou(self),
            ProcessKind::Fbm { .. } => gen_fbm(self),
        }
    }
}

/// Seed of the `index`-th item derived from a master seed (splitmix64 step).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn with_grid(values: Vec<f64>) -> Stream {
    let n = values.len();
    Stream::new(values, 1)
        .and_then(|s| s.with_times(uniform_grid(n)))
        .expect("grid stream is well formed")
}

/// Standard Brownian motion, `B_0 = 0`, increments `N(0, 1/(n-1))`.
pub fn gen_brownian(spec: &ProcessSpec) -> Result<Stream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / (spec.length - 1) as f64;
    let sd = dt.sqrt();
    let mut values = Vec::with_capacity(spec.length);
    let mut b = 0.0;
    values.push(b);
    for _ in 1..spec.length {
        let z: f64 = rng.sample(StandardNormal);
        b += sd * z;
        values.push(b);
    }
    Ok(with_grid(values))
}

/// Euler–Maruyama for `dX = theta (mu - X) dt + sigma dW` from `x0`.
pub fn gen_ou(spec: &ProcessSpec) -> Result<Stream> {
    spec.validate()?;
    let ProcessKind::Ou {
        theta,
        mu,
        sigma,
        x0,
    } = spec.kind
    else {
        return Err(SigError::InvalidArgument("gen_ou needs an OU spec".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / (spec.length - 1) as f64;
    let sd = sigma * dt.sqrt();
    let mut values = Vec::with_capacity(spec.length);
    let mut x = x0;
    values.push(x);
    for _ in 1..spec.length {
        let z: f64 = rng.sample(StandardNormal);
        x += theta * (mu - x) * dt + sd * z;
        values.push(x);
    }
    Ok(with_grid(values))
}

/// `K(s, t) = (s^{2H} + t^{2H} - |s - t|^{2H}) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.powf(h2) + t.powf(h2) - (s - t).abs().powf(h2))
}

/// Cholesky factor of the fBM covariance on the grid points `t_1..t_{n-1}`
/// (the path is pinned to 0 at `t_0 = 0`), reusable across samples.
#[derive(Clone, Debug)]
pub struct FbmSampler {
    hurst: f64,
    length: usize,
    factor: DMatrix<f64>,
    /// Diagonal jitter that was needed for a successful factorization.
    pub jitter: f64,
}

impl FbmSampler {
    pub fn new(hurst: f64, length: usize) -> Result<Self> {
        ProcessSpec {
            kind: ProcessKind::Fbm { hurst },
            length,
            seed: 0,
        }
        .validate()?;
        let grid = uniform_grid(length);
        let m = length - 1;
        let cov = DMatrix::from_fn(m, m, |i, j| fbm_covariance(grid[i + 1], grid[j + 1], hurst));
        for jitter in [0.0, 1e-14, 1e-12, 1e-10] {
            let mut c = cov.clone();
            for i in 0..m {
                c[(i, i)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                return Ok(Self {
                    hurst,
                    length,
                    factor: ch.unpack(),
                    jitter,
                });
            }
        }
        Err(SigError::Cholesky(format!(
            "fBM covariance with H = {hurst}, n = {length} is not positive definite even with jitter 1e-10"
        )))
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn sample(&self, seed: u64) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.length - 1;
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let path = &self.factor * z;
        let mut values = Vec::with_capacity(self.length);
        values.push(0.0);
        values.extend(path.iter());
        with_grid(values)
    }
}

/// Exact Gaussian fBM sample via Cholesky of the grid covariance.
pub fn gen_fbm(spec: &ProcessSpec) -> Result<Stream> {
    spec.validate()?;
    let ProcessKind::Fbm { hurst } = spec.kind else {
        return Err(SigError::InvalidArgument("gen_fbm needs an fBM spec".into()));
    };
    Ok(FbmSampler::new(hurst, spec.length)?.sample(spec.seed))
}

/// `count` independent paths of `kind`, item `i` seeded by `derive_seed(seed, i)`.
pub fn generate_batch(kind: ProcessKind, length: usize, count: usize, seed: u64) -> Result<Vec<Stream>> {
    if let ProcessKind::Fbm { hurst } = kind {
        let sampler = FbmSampler::new(hurst, length)?;
        return Ok((0..count)
            .into_par_iter()
            .map(|i| sampler.sample(derive_seed(seed, i as u64)))
            .collect());
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            ProcessSpec {
                kind,
                length,
                seed: derive_seed(seed, i as u64),
            }
            .generate()
        })
        .collect()
}

/// Classical rescaled-range estimate of the Hurst exponent of a noise series.
///
/// For dyadic window sizes `8, 16, ...` up to `n / 2`, the series is cut into
/// non-overlapping windows; each contributes the range of its mean-adjusted
/// cumulative sum divided by its (population) standard deviation. The slope
/// of `log(mean R/S)` against `log(window)` is clamped to `[0.01, 0.99]`.
pub fn rescaled_range_hurst(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 32 {
        return Err(SigError::InvalidArgument(format!(
            "rescaled range needs at least 32 values, got {n}"
        )));
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(SigError::NonFinite("rescaled range input".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut w = 8;
    while w <= n / 2 {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in series.chunks_exact(w) {
            let mean = chunk.iter().sum::<f64>() / w as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64;
            if var <= 0.0 {
                continue;
            }
            let mut cum = 0.0;
            let mut lo = 0.0f64;
            let mut hi = 0.0f64;
            for v in chunk {
                cum += v - mean;
                lo = lo.min(cum);
                hi = hi.max(cum);
            }
            total += (hi - lo) / var.sqrt();
            count += 1;
        }
        if count > 0 {
            xs.push((w as f64).ln());
            ys.push((total / count as f64).ln());
        }
        w *= 2;
    }
    if xs.len() < 2 {
        return Err(SigError::InvalidArgument(
            "series is constant: standard deviation vanishes".into(),
        ));
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok((sxy / sxx).clamp(0.01, 0.99))
}

/// Number of distinct pen-stroke templates.
pub const PEN_STYLES: usize = 4;

/// Smooth 2-D template curve, parameter `s` in `[0, 1]`.
fn pen_template(style: usize, s: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    match style % PEN_STYLES {
        // loop like a "0": ellipse traced slightly past one turn
        0 => {
            let a = PI / 2.0 + 2.1 * PI * s;
            [0.35 * a.cos(), 0.5 * a.sin()]
        }
        // "2": top hook sweeping down into a flat-ish tail
        1 => {
            let a = PI * (1.0 - 1.3 * s);
            let hook = [0.3 * a.cos(), 0.25 + 0.25 * a.sin()];
            let tail = s * s;
            [hook[0] + 0.4 * tail, hook[1] - 0.9 * tail]
        }
        // "3": two stacked bumps
        2 => {
            let a = 2.0 * PI * s;
            [0.3 * (0.5 * a).sin() + 0.12 * a.sin(), 0.5 - s + 0.08 * (2.0 * a).sin()]
        }
        // "6": spiral falling into a small loop
        _ => {
            let a = 3.0 * PI * s;
            let r = 0.45 - 0.28 * s;
            [r * (a + 0.3).cos() - 0.1, r * (a + 0.3).sin() + 0.3 * (1.0 - s) - 0.15]
        }
    }
}

/// `n` points tracing template `style` with Gaussian jitter of size `noise`.
pub fn gen_pen_strokes(style: usize, n: usize, noise: f64, seed: u64) -> Result<Stream> {
    if n < 8 {
        return Err(SigError::InvalidArgument("pen strokes need at least 8 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(2 * n);
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let p = pen_template(style, s);
        for v in p {
            let z: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            pts.push(v + noise * z);
        }
    }
    Stream::new(pts, 2)
}

/// One sample of the Hurst regression task.
#[derive(Clone, Debug)]
pub struct HurstSample {
    pub hurst: f64,
    /// Time-augmented path `(t_i, B^H_{t_i})`.
    pub path: Stream,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HurstDatasetSpec {
    pub train: usize,
    pub test: usize,
    /// Number of time steps; each path has `steps + 1` points.
    pub steps: usize,
    pub hurst_min: f64,
    pub hurst_max: f64,
    pub seed: u64,
}

impl Default for HurstDatasetSpec {
    fn default() -> Self {
        Self {
            train: 600,
            test: 100,
            steps: 300,
            hurst_min: 0.2,
            hurst_max: 0.8,
            seed: 0,
        }
    }
}

pub struct HurstDataset {
    pub train: Vec<HurstSample>,
    pub test: Vec<HurstSample>,
}

/// Train and test sets as a pure function of `spec`; `H` uniform on the range.
pub fn hurst_dataset(spec: &HurstDatasetSpec) -> Result<HurstDataset> {
    let total = spec.train + spec.test;
    let samples: Vec<HurstSample> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
            let hurst = rng.random_range(spec.hurst_min..spec.hurst_max);
            let sampler = FbmSampler::new(hurst, spec.steps + 1)?;
            let path = crate::signature::time_augment(&sampler.sample(rng.random()));
            Ok(HurstSample { hurst, path })
        })
        .collect::<Result<_>>()?;
    let mut train = samples;
    let test = train.split_off(spec.train);
    Ok(HurstDataset { train, test })
}
