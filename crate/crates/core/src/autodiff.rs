//! Reverse-mode gradients of the signature map and gradient-descent inversion.
//!
//! [`SigTape`] records the forward Chen fold (every segment exponential and
//! every partial product). The backward pass walks the fold in reverse using
//! the adjoints of the bilinear product and of the exponential's level
//! recurrence `E_k = E_{k-1} (x) v / k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};
use crate::stream::Stream;
use crate::streamnet::params::{AdamConfig, AdamState};
use crate::tensor::{level_offset, TruncatedTensor};

/// Per-point cotangent, entry `(i, j)` is `dL / dx_i[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigGradient {
    per_point: Vec<f64>,
    channels: usize,
}

impl SigGradient {
    pub fn zeros(len: usize, channels: usize) -> Self {
        Self {
            per_point: vec![0.0; len * channels],
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.per_point.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.per_point[i * self.channels..(i + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.per_point
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.per_point
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.per_point
    }

    pub fn is_finite(&self) -> bool {
        self.per_point.iter().all(|v| v.is_finite())
    }
}

/// Adjoint of `C = A (x) B`: given `dL/dC`, accumulate `dL/dA` and `dL/dB`.
pub fn mul_adjoint(
    a: &TruncatedTensor,
    b: &TruncatedTensor,
    grad_out: &TruncatedTensor,
    grad_a: &mut TruncatedTensor,
    grad_b: &mut TruncatedTensor,
) {
    let d = a.channels();
    for k in 0..=a.depth() {
        let g = grad_out.level(k);
        for j in 0..=k {
            let aj = a.level(j);
            let bm = b.level(k - j);
            let width = bm.len();
            let ga_off = level_offset(d, j);
            let gb_off = level_offset(d, k - j);
            for (ia, &av) in aj.iter().enumerate() {
                let row = &g[ia * width..(ia + 1) * width];
                let mut acc = 0.0;
                for (&gv, &bv) in row.iter().zip(bm) {
                    acc += gv * bv;
                }
                grad_a.as_mut_slice()[ga_off + ia] += acc;
                if av != 0.0 {
                    let gb = &mut grad_b.as_mut_slice()[gb_off..gb_off + width];
                    for (o, &gv) in gb.iter_mut().zip(row) {
                        *o += av * gv;
                    }
                }
            }
        }
    }
}

/// Adjoint of `C = A (x) exp(v)` as computed by [`TruncatedTensor::mul_exp`]:
/// accumulate `dL/dA` into `grad_a` and `dL/dv` into `grad_v`.
pub fn mul_exp_adjoint(
    a: &TruncatedTensor,
    v: &[f64],
    grad_out: &TruncatedTensor,
    grad_a: &mut TruncatedTensor,
    grad_v: &mut [f64],
) {
    let d = a.channels();
    let depth = a.depth();
    // Horner partials B_0..B_{k-1} for one output level, packed like the levels.
    let mut partial = vec![0.0; level_offset(d, depth)];
    let top = d.pow(depth as u32);
    let mut g = vec![0.0; top];
    let mut g_prev = vec![0.0; top];
    grad_a.as_mut_slice()[0] += grad_out.as_slice()[0];
    for k in 1..=depth {
        partial[0] = a.as_slice()[0];
        for m in 1..k {
            let (head, tail) = partial.split_at_mut(level_offset(d, m));
            let prev = &head[level_offset(d, m - 1)..];
            crate::tensor::horner_step(prev, v, 1.0 / (k - m + 1) as f64, a.level(m), tail);
        }
        let out = grad_out.level(k);
        g[..out.len()].copy_from_slice(out);
        for m in (1..=k).rev() {
            let c = 1.0 / (k - m + 1) as f64;
            let width = d.pow(m as u32);
            for (o, gv) in grad_a.level_mut(m).iter_mut().zip(&g[..width]) {
                *o += gv;
            }
            let prev = &partial[level_offset(d, m - 1)..level_offset(d, m)];
            for ((row, &p), gp) in g[..width]
                .chunks_exact(d)
                .zip(prev)
                .zip(g_prev.iter_mut())
            {
                let mut acc = 0.0;
                let cp = c * p;
                for ((gv_out, &gr), &va) in grad_v.iter_mut().zip(row).zip(v) {
                    acc += gr * va;
                    *gv_out += cp * gr;
                }
                *gp = c * acc;
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
        grad_a.as_mut_slice()[0] += g[0];
    }
}

/// Adjoint of `v -> exp(v)` truncated at the depth of `grad_out`.
pub fn exp_adjoint(v: &[f64], grad_out: &TruncatedTensor) -> Result<Vec<f64>> {
    let d = v.len();
    let depth = grad_out.depth();
    let e = TruncatedTensor::exp(v, depth)?;
    let mut g = grad_out.clone();
    let mut gv = vec![0.0; d];
    for k in (1..=depth).rev() {
        let inv_k = 1.0 / k as f64;
        let prev_off = level_offset(d, k - 1);
        let cur_off = level_offset(d, k);
        let prev_len = cur_off - prev_off;
        let prev = e.level(k - 1);
        let (head, tail) = g.as_mut_slice().split_at_mut(cur_off);
        let gprev = &mut head[prev_off..prev_off + prev_len];
        let gcur = &tail[..prev_len * d];
        for (i, (&p, gp)) in prev.iter().zip(gprev.iter_mut()).enumerate() {
            let row = &gcur[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for (a, &gc) in row.iter().enumerate() {
                acc += gc * v[a];
                gv[a] += p * gc * inv_k;
            }
            *gp += acc * inv_k;
        }
    }
    Ok(gv)
}

/// Recorded forward pass of the Chen fold for one stream.
pub struct SigTape {
    increments: Vec<Vec<f64>>,
    partials: Vec<TruncatedTensor>,
    len: usize,
    channels: usize,
}

impl SigTape {
    pub fn record(x: &Stream, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(SigError::InvalidDepth(0));
        }
        if x.len() < 2 {
            return Err(SigError::StreamTooShort {
                len: x.len(),
                needed: "at least 2 points required".into(),
            });
        }
        if !x.is_finite() {
            return Err(SigError::NonFinite("stream points".into()));
        }
        let increments: Vec<Vec<f64>> = x
            .rows()
            .zip(x.rows().skip(1))
            .map(|(a, b)| b.iter().zip(a).map(|(q, p)| q - p).collect())
            .collect();
        let mut partials = Vec::with_capacity(increments.len());
        partials.push(TruncatedTensor::exp(&increments[0], depth)?);
        for v in &increments[1..] {
            let next = partials.last().expect("non-empty").mul_exp(v)?;
            partials.push(next);
        }
        Ok(Self {
            increments,
            partials,
            len: x.len(),
            channels: x.channels(),
        })
    }

    pub fn signature(&self) -> &TruncatedTensor {
        self.partials.last().expect("tape is non-empty")
    }

    /// Signatures of every prefix `(x_1..x_{k+2})`, in order.
    pub fn prefixes(&self) -> &[TruncatedTensor] {
        &self.partials
    }

    /// Vector-Jacobian product for a cotangent on the full signature.
    pub fn backward(&self, cotangent: &TruncatedTensor) -> Result<SigGradient> {
        let last = self.partials.len() - 1;
        let mut per_prefix = vec![None; self.partials.len()];
        per_prefix[last] = Some(cotangent);
        self.backward_prefixes(&per_prefix)
    }

    /// Vector-Jacobian product when every prefix signature carries its own
    /// cotangent (`None` for zero). Entry `k` belongs to prefix `x_1..x_{k+2}`.
    pub fn backward_prefixes(
        &self,
        cotangents: &[Option<&TruncatedTensor>],
    ) -> Result<SigGradient> {
        if cotangents.len() != self.partials.len() {
            return Err(SigError::shape(format!(
                "{} prefix cotangents for {} prefixes",
                cotangents.len(),
                self.partials.len()
            )));
        }
        let reference = self.signature();
        for c in cotangents.iter().flatten() {
            reference.check_shape(c, "cotangent")?;
            if !c.is_finite() {
                return Err(SigError::NonFinite("cotangent".into()));
            }
        }
        let d = self.channels;
        let depth = reference.depth();
        let mut grad = SigGradient::zeros(self.len, d);
        let mut g = TruncatedTensor::zeros(d, depth)?;
        for i in (0..self.partials.len()).rev() {
            if let Some(c) = cotangents[i] {
                for (o, v) in g.as_mut_slice().iter_mut().zip(c.as_slice()) {
                    *o += v;
                }
            }
            let gv = if i == 0 {
                exp_adjoint(&self.increments[0], &g)?
            } else {
                let mut g_left = TruncatedTensor::zeros(d, depth)?;
                let mut gv = vec![0.0; d];
                mul_exp_adjoint(
                    &self.partials[i - 1],
                    &self.increments[i],
                    &g,
                    &mut g_left,
                    &mut gv,
                );
                g = g_left;
                gv
            };
            let per = grad.as_mut_slice();
            for (c, gc) in gv.iter().enumerate() {
                per[(i + 1) * d + c] += gc;
                per[i * d + c] -= gc;
            }
        }
        if !grad.is_finite() {
            return Err(SigError::NonFinite("signature gradient".into()));
        }
        Ok(grad)
    }
}

/// Exact vector-Jacobian product of `x -> signature(x, depth)`.
pub fn signature_vjp(
    x: &Stream,
    depth: usize,
    cotangent: &TruncatedTensor,
) -> Result<SigGradient> {
    if cotangent.channels() != x.channels() || cotangent.depth() != depth {
        return Err(SigError::shape(format!(
            "cotangent (channels {}, depth {}) for signature (channels {}, depth {depth})",
            cotangent.channels(),
            cotangent.depth(),
            x.channels()
        )));
    }
    SigTape::record(x, depth)?.backward(cotangent)
}

fn check_target(y: &Stream, target: &TruncatedTensor, depth: usize) -> Result<()> {
    if target.channels() != y.channels() || target.depth() != depth {
        return Err(SigError::shape(format!(
            "target signature (channels {}, depth {}) vs stream channels {} at depth {depth}",
            target.channels(),
            target.depth(),
            y.channels()
        )));
    }
    Ok(())
}

/// Squared distance between `signature(y, depth)` and `target` over levels `1..=N`.
pub fn inversion_loss(y: &Stream, target: &TruncatedTensor, depth: usize) -> Result<f64> {
    check_target(y, target, depth)?;
    let sig = crate::signature::signature(y, depth)?;
    Ok(sig.as_slice()[1..]
        .iter()
        .zip(&target.as_slice()[1..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Loss and its gradient with respect to every point of `y`.
pub fn inversion_loss_grad(
    y: &Stream,
    target: &TruncatedTensor,
    depth: usize,
) -> Result<(f64, SigGradient)> {
    check_target(y, target, depth)?;
    let tape = SigTape::record(y, depth)?;
    let mut diff = tape.signature().sub(target)?;
    diff.as_mut_slice()[0] = 0.0;
    let loss = diff.as_slice().iter().map(|v| v * v).sum();
    for v in diff.as_mut_slice() {
        *v *= 2.0;
    }
    Ok((loss, tape.backward(&diff)?))
}

/// Optimizer settings for [`invert_signature`].
///
/// The learning rate decays geometrically from `adam.learning_rate` to
/// `final_learning_rate` over `max_iterations`. A curvature penalty
/// `mu * sum |dy_{i+1} - dy_i|^2` on consecutive increments suppresses the
/// near tree-like spikes the signature barely sees; `mu` decays geometrically
/// from `smoothing_weight` to `final_smoothing_weight` over the first
/// `smoothing_fraction` of the run and is zero afterwards. Reported losses
/// never include the penalty.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub adam: AdamConfig,
    pub final_learning_rate: f64,
    pub smoothing_weight: f64,
    pub final_smoothing_weight: f64,
    pub smoothing_fraction: f64,
    pub max_iterations: usize,
    /// Stop once the loss falls below this value.
    pub early_stop: f64,
    /// Half-width of the uniform initialization box.
    pub init_half_width: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            final_learning_rate: 1e-3,
            smoothing_weight: 1.0,
            final_smoothing_weight: 1e-9,
            smoothing_fraction: 0.9,
            max_iterations: 20_000,
            early_stop: 1e-10,
            init_half_width: 0.01,
        }
    }
}

impl InversionConfig {
    /// Plain Adam at a fixed step with no penalty.
    pub fn constant(learning_rate: f64) -> Self {
        Self {
            adam: AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            final_learning_rate: learning_rate,
            smoothing_weight: 0.0,
            final_smoothing_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning rate", self.adam.learning_rate),
            ("final learning rate", self.final_learning_rate),
            ("init half-width", self.init_half_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SigError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smoothing_weight >= 0.0 && self.final_smoothing_weight >= 0.0) {
            return Err(SigError::InvalidArgument("smoothing weights must be non-negative".into()));
        }
        if self.smoothing_weight > 0.0 && self.final_smoothing_weight == 0.0 {
            return Err(SigError::InvalidArgument(
                "final smoothing weight must be positive when the penalty is on".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.smoothing_fraction) {
            return Err(SigError::InvalidArgument("smoothing fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn schedule(&self, iteration: usize) -> (f64, f64) {
        let frac = if self.max_iterations == 0 {
            0.0
        } else {
            iteration as f64 / self.max_iterations as f64
        };
        let lr0 = self.adam.learning_rate;
        let lr = lr0 * (self.final_learning_rate / lr0).powf(frac);
        let mu = if self.smoothing_weight == 0.0 || frac >= self.smoothing_fraction {
            0.0
        } else {
            let t = frac / self.smoothing_fraction;
            self.smoothing_weight * (self.final_smoothing_weight / self.smoothing_weight).powf(t)
        };
        (lr, mu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub recovered: Stream,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub iterations_used: usize,
}

/// Recover a length-`n` stream whose signature matches `target` by Adam descent.
///
/// The result is translated so its first point sits at `start` (the origin
/// when `None`); the signature cannot see translations.
pub fn invert_signature(
    target: &TruncatedTensor,
    n: usize,
    config: &InversionConfig,
    seed: u64,
    start: Option<&[f64]>,
) -> Result<InversionResult> {
    if n < 2 {
        return Err(SigError::StreamTooShort {
            len: n,
            needed: "inversion needs at least 2 points".into(),
        });
    }
    config.validate()?;
    let d = target.channels();
    let depth = target.depth();
    let origin = match start {
        Some(s) if s.len() == d => s.to_vec(),
        Some(s) => {
            return Err(SigError::shape(format!(
                "start point has {} entries, expected {d}",
                s.len()
            )))
        }
        None => vec![0.0; d],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.init_half_width;
    let mut pts: Vec<f64> = (0..n * d).map(|_| rng.random_range(-h..=h)).collect();
    let shift: Vec<f64> = (0..d).map(|c| origin[c] - pts[c]).collect();
    for row in pts.chunks_exact_mut(d) {
        for (v, s) in row.iter_mut().zip(&shift) {
            *v += s;
        }
    }
    let mut y = Stream::new(pts, d)?;
    let mut adam = AdamState::new(n * d);
    let mut adam_cfg = config.adam;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (loss, grad) = inversion_loss_grad(&y, target, depth)?;
        if !loss.is_finite() {
            return Err(SigError::NonFinite(format!(
                "inversion loss at iteration {iterations}"
            )));
        }
        trace.push(loss);
        if loss < config.early_stop || iterations >= config.max_iterations {
            break;
        }
        let (lr, mu) = config.schedule(iterations);
        let mut grad = grad.into_vec();
        if mu > 0.0 {
            let inc = y.increments();
            let mut g_inc = vec![0.0; inc.len()];
            for j in 0..inc.len().saturating_sub(d) {
                let r = 2.0 * mu * (inc[j + d] - inc[j]);
                g_inc[j + d] += r;
                g_inc[j] -= r;
            }
            for (j, gv) in g_inc.iter().enumerate() {
                grad[j + d] += gv;
                grad[j] -= gv;
            }
        }
        adam_cfg.learning_rate = lr;
        adam.step(&adam_cfg, y.points_mut(), &grad);
        iterations += 1;
    }
    let first = y.point(0).to_vec();
    let offset: Vec<f64> = origin.iter().zip(&first).map(|(o, f)| o - f).collect();
    let recovered = y.translate(&offset);
    let final_loss = *trace.last().expect("at least one evaluation");
    Ok(InversionResult {
        recovered,
        loss_trace: trace,
        final_loss,
        iterations_used: iterations,
    })
}

/// Root-mean-square difference between the increments of two equal-shape streams.
pub fn increment_rmse(a: &Stream, b: &Stream) -> Result<f64> {
    if a.len() != b.len() || a.channels() != b.channels() {
        return Err(SigError::shape("streams differ in shape"));
    }
    let da = a.increments();
    let db = b.increments();
    if da.is_empty() {
        return Ok(0.0);
    }
    let mse = da
        .iter()
        .zip(&db)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / da.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::signature;

    fn stream(rows: &[&[f64]]) -> Stream {
        Stream::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn level_one_cotangent_sees_only_endpoints() {
        let x = stream(&[&[0.0, 1.0], &[0.5, -0.2], &[0.9, 0.4], &[1.3, 0.0]]);
        let mut c = TruncatedTensor::zeros(2, 3).unwrap();
        c.level_mut(1).copy_from_slice(&[1.0, 1.0]);
        let g = signature_vjp(&x, 3, &c).unwrap();
        assert_eq!(g.row(0), &[-1.0, -1.0]);
        assert_eq!(g.row(3), &[1.0, 1.0]);
        for i in 1..3 {
            for v in g.row(i) {
                assert!(v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn product_adjoint_matches_differences() {
        let fill = |seed: f64| {
            let mut t = TruncatedTensor::zeros(2, 3).unwrap();
            for (i, v) in t.as_mut_slice().iter_mut().enumerate() {
                *v = (seed * (i as f64 + 1.0)).sin();
            }
            t
        };
        let (a, b, g) = (fill(0.7), fill(1.3), fill(2.1));
        let mut ga = TruncatedTensor::zeros(2, 3).unwrap();
        let mut gb = TruncatedTensor::zeros(2, 3).unwrap();
        mul_adjoint(&a, &b, &g, &mut ga, &mut gb);
        let pair = |a: &TruncatedTensor, b: &TruncatedTensor| a.mul(b).unwrap().dot(&g).unwrap();
        let h = 1e-6;
        for i in 0..a.as_slice().len() {
            let (mut up, mut dn) = (a.clone(), a.clone());
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            assert!(((pair(&up, &b) - pair(&dn, &b)) / (2.0 * h) - ga.as_slice()[i]).abs() < 1e-8);
            let (mut up, mut dn) = (b.clone(), b.clone());
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            assert!(((pair(&a, &up) - pair(&a, &dn)) / (2.0 * h) - gb.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn vjp_rejects_bad_shapes() {
        let x = stream(&[&[0.0, 1.0], &[0.5, -0.2]]);
        let c = TruncatedTensor::zeros(3, 2).unwrap();
        assert!(signature_vjp(&x, 2, &c).is_err());
        let c = TruncatedTensor::zeros(2, 3).unwrap();
        assert!(signature_vjp(&x, 2, &c).is_err());
        let bad = stream(&[&[0.0, f64::NAN], &[0.5, -0.2]]);
        let c = TruncatedTensor::zeros(2, 2).unwrap();
        assert!(matches!(
            signature_vjp(&bad, 2, &c),
            Err(SigError::NonFinite(_))
        ));
    }

    #[test]
    fn inversion_loss_examples() {
        let x = stream(&[&[0.0, 0.0], &[0.4, 0.1], &[1.0, 0.7]]);
        let t = signature(&x, 3).unwrap();
        assert_eq!(inversion_loss(&x, &t, 3).unwrap(), 0.0);

        let flat = stream(&[&[2.0, 2.0], &[2.0, 2.0]]);
        let id = TruncatedTensor::identity(2, 3).unwrap();
        assert_eq!(inversion_loss(&flat, &id, 3).unwrap(), 0.0);

        let y = stream(&[&[0.0], &[1.5]]);
        let x = stream(&[&[1.0], &[1.25]]);
        let t = signature(&x, 1).unwrap();
        let l = inversion_loss(&y, &t, 1).unwrap();
        assert!((l - (1.5 - 0.25_f64).powi(2)).abs() < 1e-15);

        assert!(inversion_loss(&y, &t, 2).is_err());
    }

    #[test]
    fn two_point_inversion_recovers_increment() {
        let x = stream(&[&[0.0, 0.0], &[0.7, -0.4]]);
        let t = signature(&x, 2).unwrap();
        // the default stop at 1e-10 only pins the increment to ~1e-5
        let cfg = InversionConfig {
            early_stop: 1e-16,
            ..InversionConfig::default()
        };
        let r = invert_signature(&t, 2, &cfg, 3, None).unwrap();
        assert!(r.iterations_used < cfg.max_iterations);
        assert_eq!(r.recovered.point(0), &[0.0, 0.0]);
        for (a, b) in r.recovered.point(1).iter().zip(x.point(1)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(r.final_loss, *r.loss_trace.last().unwrap());
    }
}
