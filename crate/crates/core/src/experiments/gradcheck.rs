//! Finite-difference sweep over the signature VJP and every experiment model.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::ExperimentReport;
use super::train::{self, random_stream, GateConfig};
use super::{gan, hurst::HurstModel, inversion};
use crate::autodiff::signature_vjp;
use crate::error::Result;
use crate::signature::signature;
use crate::stream::Stream;
use crate::streamnet::gradcheck::GradCheckReport;
use crate::synth::derive_seed;
use crate::tensor::TruncatedTensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GradSweepConfig {
    pub max_points: usize,
    pub max_channels: usize,
    pub max_depth: usize,
    pub step: f64,
    /// Entries where both gradients are at most this large are skipped.
    pub magnitude_floor: f64,
    pub core_tolerance: f64,
    pub model_tolerance: f64,
    pub seed: u64,
}

impl Default for GradSweepConfig {
    fn default() -> Self {
        Self {
            max_points: 8,
            max_channels: 3,
            max_depth: 5,
            step: 1e-6,
            magnitude_floor: 1e-8,
            core_tolerance: 1e-5,
            model_tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn from_report(name: String, r: &GradCheckReport) -> Self {
        Self {
            name,
            checked: r.checked,
            max_rel_err: r.max_rel_err,
            tolerance: r.tolerance,
            passed: r.passed,
        }
    }
}

/// Check `signature_vjp` for a random `points x channels` stream against
/// central differences of `<cotangent, signature(x)>` in every coordinate.
pub fn vjp_check(points: usize, channels: usize, depth: usize, cfg: &GradSweepConfig, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_stream(points, channels, &mut rng)?;
    let mut c = TruncatedTensor::zeros(channels, depth)?;
    for v in c.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let analytic = signature_vjp(&x, depth, &c)?;
    let pair = |p: &[f64]| -> Result<f64> { signature(&Stream::new(p.to_vec(), channels)?, depth)?.dot(&c) };
    let mut buf = x.points().to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..buf.len() {
        let orig = buf[i];
        buf[i] = orig + cfg.step;
        let up = pair(&buf)?;
        buf[i] = orig - cfg.step;
        let dn = pair(&buf)?;
        buf[i] = orig;
        let fd = (up - dn) / (2.0 * cfg.step);
        let a = analytic.as_slice()[i];
        let scale = a.abs().max(fd.abs());
        if scale <= cfg.magnitude_floor {
            continue;
        }
        checked += 1;
        worst = worst.max((a - fd).abs() / scale);
    }
    Ok(CheckOutcome {
        name: format!("signature_vjp n={points} d={channels} N={depth}"),
        checked,
        max_rel_err: worst,
        tolerance: cfg.core_tolerance,
        passed: worst <= cfg.core_tolerance,
    })
}

/// Every core and model check of the sweep, in a fixed order.
pub fn run_checks(cfg: &GradSweepConfig) -> Result<Vec<CheckOutcome>> {
    let mut cases = Vec::new();
    for n in 2..=cfg.max_points {
        for d in 1..=cfg.max_channels {
            for depth in 1..=cfg.max_depth {
                cases.push((n, d, depth));
            }
        }
    }
    let mut out: Vec<CheckOutcome> = cases
        .par_iter()
        .enumerate()
        .map(|(i, &(n, d, depth))| vjp_check(n, d, depth, cfg, derive_seed(cfg.seed, i as u64)))
        .collect::<Result<_>>()?;

    let gate_cfg = GateConfig {
        tolerance: cfg.model_tolerance,
        step: cfg.step,
        ..GateConfig::default()
    };
    for model in [HurstModel::Feedforward, HurstModel::NeuralSig, HurstModel::DeepSig] {
        let spec = model.spec(16).expect("trainable model");
        let r = train::gate(&spec, 16, derive_seed(cfg.seed, 0x100), &gate_cfg)?;
        out.push(CheckOutcome::from_report(format!("hurst {}", model.name()), &r));
    }
    let r = gan::gate(derive_seed(cfg.seed, 0x200))?;
    out.push(CheckOutcome::from_report("gan generator".into(), &r));
    let r = inversion::gate(derive_seed(cfg.seed, 0x300))?;
    out.push(CheckOutcome::from_report("inversion loss".into(), &r));
    Ok(out)
}

pub fn run_gradcheck(cfg: &GradSweepConfig) -> Result<(ExperimentReport, Vec<CheckOutcome>)> {
    let started = Instant::now();
    let mut report = ExperimentReport::new("gradcheck", cfg, cfg.seed);
    let checks = run_checks(cfg)?;
    let worst = |core: bool| {
        checks
            .iter()
            .filter(|c| c.name.starts_with("signature_vjp") == core)
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    };
    report.metric("core_max_rel_err", worst(true));
    report.metric("model_max_rel_err", worst(false));
    report.metric("checks", checks.len() as f64);
    report.metric("failures", checks.iter().filter(|c| !c.passed).count() as f64);
    report.details = json!({ "checks": checks });
    Ok((report.finish(started), checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_passes() {
        let cfg = GradSweepConfig {
            max_points: 3,
            max_channels: 2,
            max_depth: 3,
            ..GradSweepConfig::default()
        };
        let checks = run_checks(&cfg).unwrap();
        assert_eq!(checks.len(), 2 * 2 * 3 + 5);
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
