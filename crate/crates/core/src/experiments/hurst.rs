//! Hurst-parameter regression on fractional Brownian paths.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::ExperimentReport;
use super::train::{self, GateConfig};
use crate::error::{Result, SigError};
use crate::stream::Stream;
use crate::streamnet::{
    Activation, AdamConfig, AdamState, BlockSpec, DeepSigModel, HeadKind, HeadSpec, Lift,
    MapKind, MapSpec, ModelSpec,
};
use crate::synth::{derive_seed, hurst_dataset, rescaled_range_hurst, HurstDatasetSpec, HurstSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HurstModel {
    Feedforward,
    NeuralSig,
    DeepSig,
    /// Rescaled-range statistic; nothing is trained.
    Rr,
}

impl HurstModel {
    pub const ALL: [HurstModel; 4] = [
        HurstModel::Feedforward,
        HurstModel::NeuralSig,
        HurstModel::DeepSig,
        HurstModel::Rr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HurstModel::Feedforward => "feedforward",
            HurstModel::NeuralSig => "neural-sig",
            HurstModel::DeepSig => "deep-sig",
            HurstModel::Rr => "rr",
        }
    }

    /// Network for time-augmented paths of `points` points; `None` for `Rr`.
    pub fn spec(self, points: usize) -> Option<ModelSpec> {
        let head = |hidden: Vec<usize>| HeadSpec {
            kind: HeadKind::Flatten,
            hidden,
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        };
        let blocks = match self {
            HurstModel::Rr => return None,
            HurstModel::Feedforward => {
                return Some(ModelSpec {
                    input_channels: 2,
                    input_length: Some(points),
                    blocks: Vec::new(),
                    head: head(vec![16, 16, 16]),
                })
            }
            HurstModel::NeuralSig => vec![BlockSpec {
                map: None,
                lift: Lift::Trivial,
                depth: 4,
            }],
            HurstModel::DeepSig => vec![BlockSpec {
                map: Some(MapSpec {
                    kind: MapKind::Windowed {
                        window: 3,
                        stride: 1,
                    },
                    hidden: Vec::new(),
                    outputs: 3,
                    preserve_original: true,
                    inputs: Some(vec![1]),
                    hidden_activation: Activation::Relu,
                    output_activation: Activation::Relu,
                }),
                lift: Lift::Trivial,
                depth: 3,
            }],
        };
        let hidden = match self {
            HurstModel::NeuralSig => vec![64, 64, 32, 32, 16, 16],
            _ => vec![32; 5],
        };
        Some(ModelSpec {
            input_channels: 2,
            input_length: Some(points),
            blocks,
            head: head(hidden),
        })
    }
}

impl FromStr for HurstModel {
    type Err = SigError;

    fn from_str(s: &str) -> Result<Self> {
        HurstModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SigError::InvalidArgument(format!("unknown Hurst model '{s}'")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HurstConfig {
    pub model: HurstModel,
    pub dataset: HurstDatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for HurstConfig {
    fn default() -> Self {
        Self {
            model: HurstModel::DeepSig,
            dataset: HurstDatasetSpec::default(),
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            runs: 3,
            seed: 0,
        }
    }
}

impl HurstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.runs == 0 {
            return Err(SigError::InvalidArgument("batch size and runs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SigError::InvalidArgument("learning rate must be positive".into()));
        }
        if self.dataset.train == 0 || self.dataset.test == 0 {
            return Err(SigError::InvalidArgument("train and test sets must be non-empty".into()));
        }
        Ok(())
    }
}

fn split(samples: &[HurstSample]) -> (Vec<&Stream>, Vec<f64>) {
    samples.iter().map(|s| (&s.path, s.hurst)).unzip()
}

/// Rescaled-range estimate from a time-augmented path.
pub fn rr_estimate(path: &Stream) -> Result<f64> {
    let values: Vec<f64> = path.rows().map(|r| r[r.len() - 1]).collect();
    let noise: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    rescaled_range_hurst(&noise)
}

/// Finite-difference gate on a miniature instance of `model`.
pub fn gate(model: HurstModel, seed: u64) -> Result<()> {
    let Some(spec) = model.spec(16) else {
        return Ok(());
    };
    let report = train::gate(&spec, 16, seed, &GateConfig::default())?;
    if report.passed {
        Ok(())
    } else {
        Err(SigError::GradientCheck(format!(
            "{}: max relative error {:.3e} at parameter {:?} exceeds {:.0e}",
            model.name(),
            report.max_rel_err,
            report.worst_index,
            report.tolerance
        )))
    }
}

pub fn run_hurst(cfg: &HurstConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = ExperimentReport::new("hurst", cfg, cfg.seed);
    let data = hurst_dataset(&cfg.dataset)?;
    let (train_x, train_y) = split(&data.train);
    let (test_x, test_y) = split(&data.test);

    let Some(spec) = cfg.model.spec(cfg.dataset.steps + 1) else {
        let train_pred: Vec<f64> = train_x.iter().map(|x| rr_estimate(x)).collect::<Result<_>>()?;
        let test_pred: Vec<f64> = test_x.iter().map(|x| rr_estimate(x)).collect::<Result<_>>()?;
        report.metric("train_mse", train::mean_sq_err(&train_pred, &train_y));
        let test = train::mean_sq_err(&test_pred, &test_y);
        report.metric("test_mse", test);
        report.metric("final_test_mse_mean", test);
        report.notes.push("rr is deterministic; runs, epochs and learning rate are unused".into());
        return Ok(report.finish(started));
    };

    gate(cfg.model, derive_seed(cfg.seed, 0x6a7e))?;

    let mut runs = Vec::with_capacity(cfg.runs);
    let mut test_traces = Vec::with_capacity(cfg.runs);
    let mut param_count = 0;
    for r in 0..cfg.runs {
        let (model, mut params) = DeepSigModel::build(&spec, derive_seed(cfg.seed, 100 + r as u64))?;
        param_count = params.len();
        let adam_cfg = AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(params.len());
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 200 + r as u64));
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        let mut train_trace = vec![train::mse(&model, &params, &train_x, &train_y)?];
        let mut test_trace = vec![train::mse(&model, &params, &test_x, &test_y)?];
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let bx: Vec<&Stream> = batch.iter().map(|&i| train_x[i]).collect();
                let by: Vec<f64> = batch.iter().map(|&i| train_y[i]).collect();
                let (loss, grad) = train::mse_grad(&model, &params, &bx, &by)?;
                if !loss.is_finite() {
                    return Err(SigError::NonFinite(format!("training loss in epoch {epoch}")));
                }
                total += loss * batch.len() as f64;
                adam.step(&adam_cfg, &mut params.values, &grad);
            }
            train_trace.push(total / train_x.len() as f64);
            test_trace.push(train::mse(&model, &params, &test_x, &test_y)?);
        }
        let final_test = *test_trace.last().expect("initial entry");
        runs.push(json!({
            "run": r,
            "final_test_mse": final_test,
            "train_mse": train_trace,
            "test_mse": test_trace,
        }));
        test_traces.push(test_trace);
    }
    let epochs = cfg.epochs + 1;
    report.loss_trace = (0..epochs)
        .map(|e| test_traces.iter().map(|t| t[e]).sum::<f64>() / cfg.runs as f64)
        .collect();
    let finals: Vec<f64> = test_traces.iter().map(|t| t[epochs - 1]).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let var = finals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / finals.len() as f64;
    report.metric("final_test_mse_mean", mean);
    report.metric("final_test_mse_std", var.sqrt());
    report.metric("param_count", param_count as f64);
    report.details = json!({ "model": cfg.model.name(), "runs": runs });
    Ok(report.finish(started))
}
