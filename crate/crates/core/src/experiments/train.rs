//! Batch losses, gradients and the pre-training gradient gate for models with
//! a single scalar output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SigError};
use crate::stream::Stream;
use crate::streamnet::gradcheck::{self, GradCheckReport};
use crate::streamnet::{DeepSigModel, ModelParams, ModelSpec};

fn scalar(model: &DeepSigModel, params: &ModelParams, x: &Stream) -> Result<f64> {
    let out = model.forward(params, x)?;
    match out.values() {
        [v] => Ok(*v),
        v => Err(SigError::shape(format!("expected a scalar output, got {} values", v.len()))),
    }
}

/// Model outputs for every stream, in order.
pub fn predict(model: &DeepSigModel, params: &ModelParams, xs: &[&Stream]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| scalar(model, params, x)).collect()
}

/// Mean squared error over a batch.
pub fn mse(model: &DeepSigModel, params: &ModelParams, xs: &[&Stream], ys: &[f64]) -> Result<f64> {
    let pred = predict(model, params, xs)?;
    Ok(mean_sq_err(&pred, ys))
}

pub fn mean_sq_err(pred: &[f64], ys: &[f64]) -> f64 {
    pred.iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / ys.len().max(1) as f64
}

/// Batch mean squared error and its gradient with respect to the parameters.
pub fn mse_grad(
    model: &DeepSigModel,
    params: &ModelParams,
    xs: &[&Stream],
    ys: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(SigError::shape(format!("{} inputs for {} targets", xs.len(), ys.len())));
    }
    let scale = 2.0 / xs.len() as f64;
    let per: Vec<(f64, Vec<f64>)> = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, &y)| {
            let (out, trace) = model.forward_traced(params, x)?;
            let r = out.values()[0] - y;
            let (g, _) = model.backward(params, &trace, &[scale * r])?;
            Ok((r * r, g))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    for (l, g) in &per {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss / xs.len() as f64, grad))
}

/// Settings for the finite-difference gate.
#[derive(Clone, Copy, Debug)]
pub struct GateConfig {
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub coordinates: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            tolerance: 1e-4,
            samples: 4,
            coordinates: 64,
        }
    }
}

/// Random stream with the given shape, scaled like a unit-time path.
pub fn random_stream(len: usize, channels: usize, rng: &mut impl Rng) -> Result<Stream> {
    let mut pts = Vec::with_capacity(len * channels);
    let mut cur = vec![0.0; channels];
    for _ in 0..len {
        for c in &mut cur {
            *c += rng.random_range(-0.5..0.5);
        }
        pts.extend(&cur);
    }
    Stream::new(pts, channels)
}

/// Central finite-difference check of [`mse_grad`] for `spec` rebuilt on
/// streams of length `len`, over a random subset of parameters.
pub fn gate(spec: &ModelSpec, len: usize, seed: u64, cfg: &GateConfig) -> Result<GradCheckReport> {
    let mut mini = spec.clone();
    if mini.input_length.is_some() {
        mini.input_length = Some(len);
    }
    let (model, params) = DeepSigModel::build(&mini, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let xs: Vec<Stream> = (0..cfg.samples)
        .map(|_| random_stream(len, mini.input_channels, &mut rng))
        .collect::<Result<_>>()?;
    let ys: Vec<f64> = (0..cfg.samples).map(|_| rng.random_range(0.2..0.8)).collect();
    let refs: Vec<&Stream> = xs.iter().collect();
    let (_, analytic) = mse_grad(&model, &params, &refs, &ys)?;
    let idx = gradcheck::pick_indices(params.len(), cfg.coordinates, seed);
    let mut probe = params.clone();
    gradcheck::check(
        &params.values,
        &analytic,
        &idx,
        cfg.step,
        cfg.floor,
        cfg.tolerance,
        |p| {
            probe.values.copy_from_slice(p);
            mse(&model, &probe, &refs, &ys)
        },
    )
}
