//! Normalized truncated-signature kernel and the MMD two-sample statistic.
//!
//! Each stream's signature is rescaled level-wise by `lambda^k`, with
//! `lambda` chosen so that the non-constant tail has a fixed norm. The kernel
//! is the dot product of the rescaled levels `1..=M`, so it has the explicit
//! feature map [`normalized_features`] and the MMD is a squared distance
//! between mean feature vectors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};
use crate::signature::signature;
use crate::stream::{Stream, StreamBatch};
use crate::tensor::TruncatedTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub depth: usize,
    /// Tail norm every normalized signature is scaled to.
    pub target: f64,
    /// Relative bracket width at which bisection stops.
    pub tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            target: 1.0,
            tolerance: 1e-15,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(SigError::InvalidDepth(0));
        }
        if !(self.target > 0.0) || !(self.tolerance > 0.0) {
            return Err(SigError::InvalidArgument(
                "kernel target and tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `lambda` with `sum_k lambda^{2k} |S_k|^2 = target^2`; `1` for a trivial signature.
pub fn normalizing_lambda(sig: &TruncatedTensor, target: f64) -> f64 {
    normalizing_lambda_tol(sig, target, KernelConfig::default().tolerance)
}

pub fn normalizing_lambda_tol(sig: &TruncatedTensor, target: f64, tolerance: f64) -> f64 {
    let norms = sig.level_sq_norms();
    if norms[1..].iter().all(|&n| n == 0.0) {
        return 1.0;
    }
    let goal = target * target;
    let f = |lambda: f64| {
        let l2 = lambda * lambda;
        let mut p = 1.0;
        let mut s = 0.0;
        for &n in &norms[1..] {
            p *= l2;
            s += p * n;
        }
        s - goal
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while f(hi * 0.5) > 0.0 && hi > f64::MIN_POSITIVE {
        hi *= 0.5;
    }
    if lo == 0.0 {
        lo = hi * 0.5;
    }
    for _ in 0..200 {
        if hi - lo <= tolerance * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A stream's normalized signature and the quantities needed to differentiate it.
#[derive(Clone, Debug)]
pub struct NormalizedSig {
    pub signature: TruncatedTensor,
    pub lambda: f64,
    /// Rescaled levels `1..=M`, flattened.
    pub features: Vec<f64>,
}

impl NormalizedSig {
    pub fn from_signature(signature: TruncatedTensor, cfg: &KernelConfig) -> Self {
        let lambda = normalizing_lambda_tol(&signature, cfg.target, cfg.tolerance);
        let features = signature.scale_levels(lambda).flatten_nonconstant();
        Self {
            signature,
            lambda,
            features,
        }
    }

    /// Pull a cotangent on the features back to the raw signature, including
    /// the dependence of `lambda` on the signature.
    pub fn vjp(&self, g_features: &[f64]) -> Result<TruncatedTensor> {
        let s = &self.signature;
        if g_features.len() != s.as_slice().len() - 1 {
            return Err(SigError::shape("feature cotangent length"));
        }
        let lambda = self.lambda;
        let mut g = TruncatedTensor::from_flat(
            s.channels(),
            s.depth(),
            std::iter::once(0.0).chain(g_features.iter().copied()).collect(),
        )?;
        let norms = s.level_sq_norms();
        let trivial = norms[1..].iter().all(|&n| n == 0.0);
        let mut dl_dlambda = 0.0;
        let mut f_lambda = 0.0;
        let mut pk = 1.0;
        for k in 1..=s.depth() {
            let pk_prev = pk;
            pk *= lambda;
            let dot: f64 = g.level(k).iter().zip(s.level(k)).map(|(a, b)| a * b).sum();
            dl_dlambda += k as f64 * pk_prev * dot;
            f_lambda += 2.0 * k as f64 * pk * pk_prev * norms[k];
            for v in g.level_mut(k) {
                *v *= pk;
            }
        }
        if !trivial && f_lambda > 0.0 {
            let coef = dl_dlambda / f_lambda;
            let mut p2k = 1.0;
            for k in 1..=s.depth() {
                p2k *= lambda * lambda;
                let sk = s.level(k).to_vec();
                for (gv, sv) in g.level_mut(k).iter_mut().zip(sk) {
                    *gv -= coef * 2.0 * p2k * sv;
                }
            }
        }
        Ok(g)
    }
}

pub fn normalized_features(x: &Stream, cfg: &KernelConfig) -> Result<NormalizedSig> {
    cfg.validate()?;
    Ok(NormalizedSig::from_signature(signature(x, cfg.depth)?, cfg))
}

/// `(Sig(lambda_x x), Sig(lambda_y y))` over levels `1..=M`.
pub fn sig_kernel(x: &Stream, y: &Stream, cfg: &KernelConfig) -> Result<f64> {
    let fx = normalized_features(x, cfg)?;
    let fy = normalized_features(y, cfg)?;
    if fx.features.len() != fy.features.len() {
        return Err(SigError::shape("streams differ in channel count"));
    }
    Ok(dot(&fx.features, &fy.features))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn batch_features(streams: &[Stream], cfg: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    streams
        .par_iter()
        .map(|s| normalized_features(s, cfg).map(|f| f.features))
        .collect()
}

/// Biased V-statistic from precomputed features, summing kernel entries as
/// `mean k(a,a') - 2 mean k(a,b) + mean k(b,b')`.
pub fn mmd_from_features(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> Result<f64> {
    if fa.is_empty() || fb.is_empty() {
        return Err(SigError::InvalidArgument("MMD needs two non-empty batches".into()));
    }
    let block = |p: &[Vec<f64>], q: &[Vec<f64>]| -> f64 {
        let s: f64 = p
            .par_iter()
            .map(|u| q.iter().map(|v| dot(u, v)).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        s / (p.len() * q.len()) as f64
    };
    Ok(block(fa, fa) - 2.0 * block(fa, fb) + block(fb, fb))
}

pub fn mmd_statistic(a: &StreamBatch, b: &StreamBatch, cfg: &KernelConfig) -> Result<f64> {
    let fa = batch_features(a.streams(), cfg)?;
    let fb = batch_features(b.streams(), cfg)?;
    mmd_from_features(&fa, &fb)
}

/// Mean of feature vectors.
pub fn mean_feature(f: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; f.first().map_or(0, Vec::len)];
    for v in f {
        for (o, x) in m.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = f.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `|mean(fa) - mean(fb)|^2`, the same statistic through the feature map.
pub fn mmd_explicit(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> f64 {
    let ma = mean_feature(fa);
    let mb = mean_feature(fb);
    ma.iter().zip(&mb).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
    pub permutations: usize,
}

/// Permutation p-value `(1 + #{T_perm >= T_obs}) / (1 + permutations)`.
pub fn permutation_test(
    a: &StreamBatch,
    b: &StreamBatch,
    cfg: &KernelConfig,
    permutations: usize,
    seed: u64,
) -> Result<PermutationResult> {
    let fa = batch_features(a.streams(), cfg)?;
    let fb = batch_features(b.streams(), cfg)?;
    permutation_test_features(&fa, &fb, permutations, seed)
}

pub fn permutation_test_features(
    fa: &[Vec<f64>],
    fb: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if permutations < 100 {
        return Err(SigError::InvalidArgument(
            "at least 100 permutations are required".into(),
        ));
    }
    if fa.is_empty() || fb.is_empty() {
        return Err(SigError::InvalidArgument("MMD needs two non-empty batches".into()));
    }
    let observed = mmd_explicit(fa, fb);
    let pooled: Vec<&Vec<f64>> = fa.iter().chain(fb.iter()).collect();
    let n = fa.len();
    let dim = fa[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let mut orders = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        idx.shuffle(&mut rng);
        orders.push(idx.clone());
    }
    let stats: Vec<f64> = orders
        .par_iter()
        .map(|order| {
            let mut ma = vec![0.0; dim];
            let mut mb = vec![0.0; dim];
            for (pos, &i) in order.iter().enumerate() {
                let dst = if pos < n { &mut ma } else { &mut mb };
                for (o, x) in dst.iter_mut().zip(pooled[i]) {
                    *o += x;
                }
            }
            let (na, nb) = (n as f64, (order.len() - n) as f64);
            ma.iter()
                .zip(&mb)
                .map(|(a, b)| (a / na - b / nb).powi(2))
                .sum()
        })
        .collect();
    let exceed = stats.iter().filter(|&&t| t >= observed).count();
    Ok(PermutationResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        n: fa.len(),
        m: fb.len(),
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let s = TruncatedTensor::from_levels(1, vec![vec![1.0], vec![2.0]]).unwrap();
        assert!((normalizing_lambda(&s, 1.0) - 0.5).abs() < 1e-12);

        let id = TruncatedTensor::identity(2, 3).unwrap();
        assert_eq!(normalizing_lambda(&id, 1.0), 1.0);

        let s = TruncatedTensor::from_levels(1, vec![vec![1.0], vec![0.6], vec![0.8]]).unwrap();
        assert!((normalizing_lambda(&s, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_kernel_is_target_squared() {
        let x = Stream::new(vec![0.0, 0.0, 0.3, 1.0, 1.2, 0.4], 2).unwrap();
        let cfg = KernelConfig {
            target: 0.7,
            ..KernelConfig::default()
        };
        assert!((sig_kernel(&x, &x, &cfg).unwrap() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn mmd_of_identical_batches_is_zero() {
        let s: Vec<Stream> = (0..4)
            .map(|i| Stream::new((0..10).map(|j| ((i * 10 + j) as f64).sin()).collect(), 2).unwrap())
            .collect();
        let b = StreamBatch::new(s).unwrap();
        assert_eq!(mmd_statistic(&b, &b, &KernelConfig::default()).unwrap(), 0.0);
        let r = permutation_test(&b, &b, &KernelConfig::default(), 100, 0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(permutation_test(&b, &b, &KernelConfig::default(), 99, 0).is_err());
    }

    #[test]
    fn feature_vjp_matches_finite_differences() {
        let sig = crate::signature::signature(
            &Stream::new(vec![0.0, 0.0, 0.5, 0.2, 0.9, -0.4, 1.4, 0.3], 2).unwrap(),
            3,
        )
        .unwrap();
        let cfg = KernelConfig {
            depth: 3,
            ..KernelConfig::default()
        };
        let cot: Vec<f64> = (0..sig.as_slice().len() - 1).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = |s: &TruncatedTensor| dot(&NormalizedSig::from_signature(s.clone(), &cfg).features, &cot);
        let g = NormalizedSig::from_signature(sig.clone(), &cfg).vjp(&cot).unwrap();
        let h = 1e-6;
        for i in 1..sig.as_slice().len() {
            let mut up = sig.clone();
            up.as_mut_slice()[i] += h;
            let mut dn = sig.clone();
            dn.as_mut_slice()[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() < 1e-7, "entry {i}: {fd} vs {}", g.as_slice()[i]);
        }
    }
}
