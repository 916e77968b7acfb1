//! Generative moment matching: a deep signature generator trained against the
//! fixed normalized-signature MMD on Ornstein–Uhlenbeck paths.
//!
//! The generator maps time-augmented Brownian motion through a pointwise
//! network that keeps the original channels, an expanding-window lift, a
//! depth-`N` signature and a pointwise linear head. Its output at prefix `i`
//! is the generated value at grid time `t_{i+1}`, so generated paths cover
//! `t_1..t_{n-1}`; real paths are compared on the same times.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::ExperimentReport;
use crate::autodiff::SigTape;
use crate::error::{Result, SigError};
use crate::kernel::{mean_feature, permutation_test_features, KernelConfig, NormalizedSig};
use crate::signature::time_augment;
use crate::stream::Stream;
use crate::streamnet::gradcheck::{self, GradCheckReport};
use crate::streamnet::{
    Activation, AdamConfig, AdamState, BlockSpec, DeepSigModel, ForwardTrace, HeadKind, HeadSpec, Lift,
    MapKind, MapSpec, ModelParams, ModelSpec,
};
use crate::synth::{derive_seed, generate_batch, ProcessKind};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    /// Real training paths; the generator gets as many noise paths.
    pub paths: usize,
    /// Held-out real paths for the final two-sample test.
    pub test_paths: usize,
    pub length: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub generator_depth: usize,
    pub hidden: Vec<usize>,
    pub kernel: KernelConfig,
    pub target: ProcessKind,
    pub permutations: usize,
    pub sample_paths: usize,
    /// Draw fresh generator noise every epoch instead of one fixed set.
    pub resample_noise: bool,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            paths: 256,
            test_paths: 256,
            length: 100,
            epochs: 200,
            learning_rate: 1e-2,
            generator_depth: 3,
            hidden: vec![8, 8],
            kernel: KernelConfig::default(),
            target: ProcessKind::default_ou(),
            permutations: 500,
            sample_paths: 32,
            resample_noise: false,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.test_paths == 0 {
            return Err(SigError::InvalidArgument("path counts must be positive".into()));
        }
        if self.length < 3 {
            return Err(SigError::InvalidArgument("paths need at least 3 points".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SigError::InvalidArgument("learning rate must be positive".into()));
        }
        if self.generator_depth == 0 {
            return Err(SigError::InvalidDepth(0));
        }
        self.kernel.validate()
    }
}

/// The generator: pointwise net keeping the input, expanding lift, signature,
/// pointwise linear read-out.
pub fn generator_spec(depth: usize, hidden: &[usize]) -> ModelSpec {
    ModelSpec {
        input_channels: 2,
        input_length: None,
        blocks: vec![BlockSpec {
            map: Some(MapSpec {
                kind: MapKind::Pointwise,
                hidden: hidden.to_vec(),
                outputs: 2,
                preserve_original: true,
                inputs: None,
                hidden_activation: Activation::Relu,
                output_activation: Activation::Identity,
            }),
            lift: Lift::Expanding,
            depth,
        }],
        head: HeadSpec {
            kind: HeadKind::Pointwise,
            hidden: Vec::new(),
            outputs: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        },
    }
}

/// Real path restricted to the times the generator produces.
pub fn align_real(path: &Stream) -> Stream {
    path.slice(1, path.len())
}

/// Time-augmented discriminator input for generated values on `times`.
fn disc_stream(values: Vec<f64>, times: &[f64]) -> Result<Stream> {
    Ok(time_augment(&Stream::new(values, 1)?.with_times(times.to_vec())?))
}

/// Normalized discriminator features of each stream.
pub fn features(streams: &[Stream], kernel: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    streams
        .par_iter()
        .map(|s| crate::kernel::normalized_features(&time_augment(s), kernel).map(|f| f.features))
        .collect()
}

/// Generated paths (one channel, times `t_1..t_{n-1}`) for each noise path.
pub fn generate(
    model: &DeepSigModel,
    params: &ModelParams,
    noise: &[Stream],
) -> Result<Vec<Stream>> {
    noise
        .par_iter()
        .map(|b| {
            let times = b.time_grid()[1..].to_vec();
            let out = model.forward(params, &time_augment(b))?;
            Stream::new(out.values().to_vec(), 1)?.with_times(times)
        })
        .collect()
}

/// `T = |mean generated feature - real_mean|^2` and its parameter gradient.
pub fn loss_grad(
    model: &DeepSigModel,
    params: &ModelParams,
    noise: &[Stream],
    real_mean: &[f64],
    kernel: &KernelConfig,
) -> Result<(f64, Vec<f64>)> {
    struct Fwd {
        trace: ForwardTrace,
        tape: SigTape,
        norm: NormalizedSig,
    }
    let fwd: Vec<Fwd> = noise
        .par_iter()
        .map(|b| {
            let times = &b.time_grid()[1..];
            let (out, trace) = model.forward_traced(params, &time_augment(b))?;
            let disc = disc_stream(out.values().to_vec(), times)?;
            let tape = SigTape::record(&disc, kernel.depth)?;
            let norm = NormalizedSig::from_signature(tape.signature().clone(), kernel);
            Ok(Fwd { trace, tape, norm })
        })
        .collect::<Result<_>>()?;
    let feats: Vec<Vec<f64>> = fwd.iter().map(|f| f.norm.features.clone()).collect();
    let mean = mean_feature(&feats);
    if mean.len() != real_mean.len() {
        return Err(SigError::shape("real and generated feature sizes differ"));
    }
    let diff: Vec<f64> = mean.iter().zip(real_mean).map(|(a, b)| a - b).collect();
    let t: f64 = diff.iter().map(|v| v * v).sum();
    let scale = 2.0 / noise.len() as f64;
    let g_feat: Vec<f64> = diff.iter().map(|v| scale * v).collect();
    let grads: Vec<Vec<f64>> = fwd
        .par_iter()
        .map(|f| {
            let g_sig = f.norm.vjp(&g_feat)?;
            let g_path = f.tape.backward(&g_sig)?;
            let g_values: Vec<f64> = g_path.as_slice().chunks_exact(2).map(|r| r[1]).collect();
            let (g, _) = model.backward(params, &f.trace, &g_values)?;
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut grad = params.zeros_like();
    for g in &grads {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((t, grad))
}

fn brownian_noise(cfg: &GanConfig, count: usize, seed: u64) -> Result<Vec<Stream>> {
    generate_batch(ProcessKind::Brownian, cfg.length, count, seed)
}

/// Finite-difference check of [`loss_grad`] on a miniature instance.
pub fn gate(seed: u64) -> Result<GradCheckReport> {
    let cfg = GanConfig {
        length: 8,
        ..GanConfig::default()
    };
    let spec = generator_spec(cfg.generator_depth, &cfg.hidden);
    let (model, params) = DeepSigModel::build(&spec, seed)?;
    let noise = brownian_noise(&cfg, 4, derive_seed(seed, 1))?;
    let real: Vec<Stream> = generate_batch(cfg.target, cfg.length, 4, derive_seed(seed, 2))?
        .iter()
        .map(align_real)
        .collect();
    let real_mean = mean_feature(&features(&real, &cfg.kernel)?);
    let (_, analytic) = loss_grad(&model, &params, &noise, &real_mean, &cfg.kernel)?;
    let idx = gradcheck::pick_indices(params.len(), 64, seed);
    let mut probe = params.clone();
    gradcheck::check(&params.values, &analytic, &idx, 1e-6, 1e-6, 1e-4, |p| {
        probe.values.copy_from_slice(p);
        let gen = generate(&model, &probe, &noise)?;
        let f = features(&gen, &cfg.kernel)?;
        let m = mean_feature(&f);
        Ok(m.iter().zip(&real_mean).map(|(a, b)| (a - b) * (a - b)).sum())
    })
}

/// Trained report plus `sample_paths` generated paths.
pub fn run_gan(cfg: &GanConfig) -> Result<(ExperimentReport, Vec<Stream>)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = ExperimentReport::new("gan", cfg, cfg.seed);
    if cfg.target == ProcessKind::default_ou() {
        report
            .notes
            .push("target OU parameters are the defaults theta=8, mu=0, sigma=1, x0=0".into());
    }

    let g = gate(derive_seed(cfg.seed, 0x6a7e))?;
    if !g.passed {
        return Err(SigError::GradientCheck(format!(
            "generator: max relative error {:.3e} at parameter {:?} exceeds {:.0e}",
            g.max_rel_err, g.worst_index, g.tolerance
        )));
    }

    let spec = generator_spec(cfg.generator_depth, &cfg.hidden);
    let (model, mut params) = DeepSigModel::build(&spec, derive_seed(cfg.seed, 1))?;
    let real: Vec<Stream> = generate_batch(cfg.target, cfg.length, cfg.paths, derive_seed(cfg.seed, 2))?
        .iter()
        .map(align_real)
        .collect();
    let real_test: Vec<Stream> =
        generate_batch(cfg.target, cfg.length, cfg.test_paths, derive_seed(cfg.seed, 3))?
            .iter()
            .map(align_real)
            .collect();
    let real_mean = mean_feature(&features(&real, &cfg.kernel)?);

    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let fixed_noise = brownian_noise(cfg, cfg.paths, derive_seed(cfg.seed, 1000))?;
    for epoch in 0..=cfg.epochs {
        let fresh;
        let noise = if cfg.resample_noise && epoch > 0 {
            fresh = brownian_noise(cfg, cfg.paths, derive_seed(cfg.seed, 1000 + epoch as u64))?;
            &fresh
        } else {
            &fixed_noise
        };
        let (t, grad) = loss_grad(&model, &params, noise, &real_mean, &cfg.kernel)?;
        if !t.is_finite() {
            return Err(SigError::NonFinite(format!("MMD statistic at epoch {epoch}")));
        }
        trace.push(t);
        if epoch < cfg.epochs {
            adam.step(&adam_cfg, &mut params.values, &grad);
        }
    }

    let eval_noise = brownian_noise(cfg, cfg.test_paths, derive_seed(cfg.seed, 4))?;
    let generated = generate(&model, &params, &eval_noise)?;
    let fg = features(&generated, &cfg.kernel)?;
    let ft = features(&real_test, &cfg.kernel)?;
    let test = permutation_test_features(&fg, &ft, cfg.permutations, derive_seed(cfg.seed, 5))?;

    report.metric("initial_t", trace[0]);
    report.metric("final_t", *trace.last().expect("non-empty"));
    report.metric("test_t", test.statistic);
    report.metric("test_p_value", test.p_value);
    report.metric("param_count", params.len() as f64);
    report.loss_trace = trace;
    report.details = json!({ "permutation_test": test });
    let samples = generated.into_iter().take(cfg.sample_paths).collect();
    Ok((report.finish(started), samples))
}
