//! Flat parameter storage with named segments, and the Adam optimizer.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Index range of one segment inside [`ModelParams::values`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn slice<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.offset..self.offset + self.len]
    }

    pub fn slice_mut<'a>(&self, v: &'a mut [f64]) -> &'a mut [f64] {
        &mut v[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Append a segment initialized uniformly in `[-bound, bound]`.
    pub fn push_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> ParamRange {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.values
            .extend((0..len).map(|_| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 }));
        self.segments.push(Segment {
            name: name.into(),
            shape,
            offset,
            len,
        });
        ParamRange { offset, len }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Raw little-endian `f64` values to `path`, segment table to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        let sidecar = sidecar_path(path);
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.segments)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let segments: Vec<Segment> =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(SigError::shape("parameter file is not a whole number of f64 values"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let total: usize = segments.iter().map(|s| s.len).sum();
        if total != values.len() {
            return Err(SigError::shape(format!(
                "segments describe {total} values, file holds {}",
                values.len()
            )));
        }
        Ok(Self { values, segments })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer state length mismatch");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Functional form: returns updated parameters, leaves the input untouched.
pub fn adam_step(
    params: &ModelParams,
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> ModelParams {
    let mut out = params.clone();
    state.step(cfg, &mut out.values, grads);
    out
}
