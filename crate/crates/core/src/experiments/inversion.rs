//! Signature inversion of synthetic pen strokes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::ExperimentReport;
use super::train::random_stream;
use crate::autodiff::{increment_rmse, invert_signature, inversion_loss, inversion_loss_grad, InversionConfig};
use crate::error::{Result, SigError};
use crate::signature::signature;
use crate::stream::Stream;
use crate::streamnet::gradcheck::{self, GradCheckReport};
use crate::synth::{gen_pen_strokes, PEN_STYLES};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionExperimentConfig {
    pub styles: Vec<usize>,
    pub points: usize,
    pub depth: usize,
    /// Jitter added to the stroke templates.
    pub noise: f64,
    pub optimizer: InversionConfig,
    /// Keep every `trace_every`-th loss in the report (the last one always).
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for InversionExperimentConfig {
    fn default() -> Self {
        Self {
            styles: (0..PEN_STYLES).collect(),
            points: 30,
            depth: 12,
            noise: 0.0,
            optimizer: InversionConfig::default(),
            trace_every: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StrokeOutcome {
    pub style: usize,
    pub original: Stream,
    pub recovered: Stream,
    pub final_loss: f64,
    pub increment_rmse: f64,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
}

/// Every `every`-th entry of `trace` plus its last entry.
pub fn thin(trace: &[f64], every: usize) -> Vec<f64> {
    let every = every.max(1);
    let mut out: Vec<f64> = trace.iter().copied().step_by(every).collect();
    if (trace.len() - 1) % every != 0 {
        out.push(trace[trace.len() - 1]);
    }
    out
}

/// Finite-difference check of the inversion loss gradient on a small stream.
pub fn gate(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_stream(6, 2, &mut rng)?;
    let y = random_stream(6, 2, &mut rng)?;
    let target = signature(&x, 4)?;
    let (_, g) = inversion_loss_grad(&y, &target, 4)?;
    let idx: Vec<usize> = (0..y.points().len()).collect();
    gradcheck::check(y.points(), g.as_slice(), &idx, 1e-6, 1e-6, 1e-4, |p| {
        inversion_loss(&Stream::new(p.to_vec(), 2)?, &target, 4)
    })
}

pub fn run_inversion(cfg: &InversionExperimentConfig) -> Result<(ExperimentReport, Vec<StrokeOutcome>)> {
    if cfg.styles.is_empty() {
        return Err(SigError::InvalidArgument("no stroke styles selected".into()));
    }
    cfg.optimizer.validate()?;
    let started = Instant::now();
    let mut report = ExperimentReport::new("invert", cfg, cfg.seed);

    let g = gate(cfg.seed)?;
    if !g.passed {
        return Err(SigError::GradientCheck(format!(
            "inversion loss: max relative error {:.3e} exceeds {:.0e}",
            g.max_rel_err, g.tolerance
        )));
    }

    let outcomes: Vec<StrokeOutcome> = cfg
        .styles
        .par_iter()
        .map(|&style| {
            let original = gen_pen_strokes(style, cfg.points, cfg.noise, cfg.seed)?;
            let target = signature(&original, cfg.depth)?;
            let r = invert_signature(&target, cfg.points, &cfg.optimizer, cfg.seed, Some(original.point(0)))?;
            Ok(StrokeOutcome {
                style,
                increment_rmse: increment_rmse(&original, &r.recovered)?,
                original,
                recovered: r.recovered,
                final_loss: r.final_loss,
                iterations: r.iterations_used,
                loss_trace: r.loss_trace,
            })
        })
        .collect::<Result<_>>()?;

    let longest = outcomes.iter().map(|o| o.loss_trace.len()).max().unwrap_or(0);
    let summed: Vec<f64> = (0..longest)
        .map(|i| {
            outcomes
                .iter()
                .map(|o| o.loss_trace[i.min(o.loss_trace.len() - 1)])
                .sum()
        })
        .collect();
    report.loss_trace = thin(&summed, cfg.trace_every);
    let worst = |f: fn(&StrokeOutcome) -> f64| outcomes.iter().map(f).fold(0.0, f64::max);
    report.metric("max_final_loss", worst(|o| o.final_loss));
    report.metric("max_increment_rmse", worst(|o| o.increment_rmse));
    report.metric("max_iterations", worst(|o| o.iterations as f64));
    report.details = json!({
        "strokes": outcomes.iter().map(|o| json!({
            "style": o.style,
            "final_loss": o.final_loss,
            "increment_rmse": o.increment_rmse,
            "iterations": o.iterations,
            "loss_trace": thin(&o.loss_trace, cfg.trace_every),
        })).collect::<Vec<_>>(),
    });
    Ok((report.finish(started), outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thinning_keeps_endpoints() {
        assert_eq!(thin(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 3.0, 4.0]);
        assert_eq!(thin(&[1.0, 2.0, 3.0], 2), vec![1.0, 3.0]);
        assert_eq!(thin(&[5.0], 10), vec![5.0]);
    }

    #[test]
    fn gate_passes() {
        assert!(gate(1).unwrap().passed);
    }

    #[test]
    fn short_run_reports_each_stroke() {
        let cfg = InversionExperimentConfig {
            styles: vec![1, 2],
            points: 10,
            depth: 4,
            optimizer: InversionConfig {
                max_iterations: 50,
                ..InversionConfig::default()
            },
            ..InversionExperimentConfig::default()
        };
        let (r, out) = run_inversion(&cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].style, 1);
        assert!(out.iter().all(|o| o.iterations <= 50));
        assert_eq!(r.details["strokes"].as_array().unwrap().len(), 2);
        assert!(r.metrics["max_final_loss"] < out[0].loss_trace[0].max(out[1].loss_trace[0]));
    }
}
