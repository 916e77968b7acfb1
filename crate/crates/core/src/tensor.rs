//! Dense truncated tensor algebra over `R^d`.
//!
//! A [`TruncatedTensor`] of depth `N` stores the levels `0..=N` contiguously,
//! level `k` holding `d^k` entries in row-major multi-index order. Signatures
//! live here; the only operations the rest of the crate needs are the graded
//! product, the exponential of a vector, level scaling, and inner products.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};

/// Number of scalars in levels `0..=depth`, i.e. `sum_k d^k`.
///
/// With `include_constant == false` the single level-0 entry is not counted.
/// `d = 1` is handled by direct summation, where the closed form
/// `(d^{N+1} - 1) / (d - 1)` is undefined.
pub fn sig_dim(channels: usize, depth: usize, include_constant: bool) -> usize {
    let total = level_offset(channels, depth + 1);
    if include_constant {
        total
    } else {
        total - 1
    }
}

/// Offset of level `k` within the flat storage (sum of sizes of levels `< k`).
pub(crate) fn level_offset(channels: usize, k: usize) -> usize {
    let mut off = 0;
    let mut size = 1;
    for _ in 0..k {
        off += size;
        size *= channels;
    }
    off
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTensor {
    channels: usize,
    depth: usize,
    data: Vec<f64>,
}

impl TruncatedTensor {
    /// All-zero tensor, including level 0.
    pub fn zeros(channels: usize, depth: usize) -> Result<Self> {
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        Ok(Self {
            channels,
            depth,
            data: vec![0.0; sig_dim(channels, depth, true)],
        })
    }

    /// The multiplicative unit `(1, 0, 0, ...)`.
    pub fn identity(channels: usize, depth: usize) -> Result<Self> {
        let mut t = Self::zeros(channels, depth)?;
        t.data[0] = 1.0;
        Ok(t)
    }

    /// Build from explicit levels; level `k` must hold `d^k` entries.
    pub fn from_levels(channels: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        if levels.is_empty() {
            return Err(SigError::shape("at least level 0 is required"));
        }
        let depth = levels.len() - 1;
        let mut data = Vec::with_capacity(sig_dim(channels, depth, true));
        let mut size = 1;
        for (k, level) in levels.into_iter().enumerate() {
            if level.len() != size {
                return Err(SigError::shape(format!(
                    "level {k} has {} entries, expected {size}",
                    level.len()
                )));
            }
            data.extend(level);
            size *= channels;
        }
        Ok(Self {
            channels,
            depth,
            data,
        })
    }

    /// Build from the flat level-major layout including the constant term.
    pub fn from_flat(channels: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        let expected = sig_dim(channels, depth, true);
        if data.len() != expected {
            return Err(SigError::shape(format!(
                "flat tensor has {} entries, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            depth,
            data,
        })
    }

    /// Inverse of [`TruncatedTensor::flatten_nonconstant`]; level 0 is set to 1.
    pub fn unflatten_nonconstant(channels: usize, depth: usize, flat: &[f64]) -> Result<Self> {
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        let expected = sig_dim(channels, depth, false);
        if flat.len() != expected {
            return Err(SigError::shape(format!(
                "flattened signature has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut data = Vec::with_capacity(expected + 1);
        data.push(1.0);
        data.extend_from_slice(flat);
        Ok(Self {
            channels,
            depth,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let start = level_offset(self.channels, k);
        let end = level_offset(self.channels, k + 1);
        &self.data[start..end]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let start = level_offset(self.channels, k);
        let end = level_offset(self.channels, k + 1);
        &mut self.data[start..end]
    }

    /// Flat level-major storage, constant term first.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn levels(&self) -> Vec<Vec<f64>> {
        (0..=self.depth).map(|k| self.level(k).to_vec()).collect()
    }

    /// Levels `1..=N` concatenated in level order, each row-major.
    pub fn flatten_nonconstant(&self) -> Vec<f64> {
        self.data[1..].to_vec()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.depth == other.depth
    }

    pub(crate) fn check_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SigError::shape(format!(
                "{what}: (channels {}, depth {}) vs (channels {}, depth {})",
                self.channels, self.depth, other.channels, other.depth
            )))
        }
    }

    /// Truncated tensor product: `C_k = sum_{j=0}^{k} A_j (x) B_{k-j}`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_shape(other, "tensor product")?;
        let mut out = Self::zeros(self.channels, self.depth)?;
        for k in 0..=self.depth {
            let start = level_offset(self.channels, k);
            let end = level_offset(self.channels, k + 1);
            let dst = &mut out.data[start..end];
            for j in 0..=k {
                let a = self.level(j);
                let b = other.level(k - j);
                let width = b.len();
                for (ia, &av) in a.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let row = &mut dst[ia * width..(ia + 1) * width];
                    for (o, &bv) in row.iter_mut().zip(b) {
                        *o += av * bv;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self (x) exp(v)` by Horner's scheme, without forming `exp(v)`.
    ///
    /// Level `k` is `((a_0 v/k + a_1) v/(k-1) + ... + a_{k-1}) v/1 + a_k`.
    pub fn mul_exp(&self, v: &[f64]) -> Result<Self> {
        let d = self.channels;
        if v.len() != d {
            return Err(SigError::shape(format!(
                "increment of dimension {} for a tensor over {d} channels",
                v.len()
            )));
        }
        let mut out = Self::zeros(d, self.depth)?;
        out.data[0] = self.data[0];
        let top = d.pow(self.depth as u32);
        let mut cur = vec![0.0; top];
        let mut next = vec![0.0; top];
        for k in 1..=self.depth {
            cur[0] = self.data[0];
            let mut len = 1;
            for m in 1..=k {
                horner_step(&cur[..len], v, 1.0 / (k - m + 1) as f64, self.level(m), &mut next);
                std::mem::swap(&mut cur, &mut next);
                len *= d;
            }
            out.level_mut(k).copy_from_slice(&cur[..len]);
        }
        Ok(out)
    }

    /// Tensor exponential `(v^{(x)k} / k!)_k` of a single vector.
    pub fn exp(increment: &[f64], depth: usize) -> Result<Self> {
        let d = increment.len();
        let mut out = Self::identity(d, depth)?;
        for k in 1..=depth {
            let prev_start = level_offset(d, k - 1);
            let start = level_offset(d, k);
            let (head, tail) = out.data.split_at_mut(start);
            let prev = &head[prev_start..];
            let cur = &mut tail[..prev.len() * d];
            let inv_k = 1.0 / k as f64;
            for (i, &p) in prev.iter().enumerate() {
                let scaled = p * inv_k;
                for (a, &v) in increment.iter().enumerate() {
                    cur[i * d + a] = scaled * v;
                }
            }
        }
        Ok(out)
    }

    /// Multiply level `k` by `lambda^k`.
    pub fn scale_levels(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        let mut factor = 1.0;
        for k in 1..=self.depth {
            factor *= lambda;
            for v in out.level_mut(k) {
                *v *= factor;
            }
        }
        out
    }

    /// Euclidean norm over levels `1..=N`.
    pub fn norm_tail(&self) -> f64 {
        self.data[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Squared Euclidean norm of each level, index `k` for level `k`.
    pub fn level_sq_norms(&self) -> Vec<f64> {
        (0..=self.depth)
            .map(|k| self.level(k).iter().map(|v| v * v).sum())
            .collect()
    }

    /// Sum over all levels of entrywise products.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_shape(other, "dot product")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other, "difference")?;
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference, all levels.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_shape(other, "comparison")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = prev (x) v * c + add`, where `add` has `prev.len() * v.len()` entries.
pub(crate) fn horner_step(prev: &[f64], v: &[f64], c: f64, add: &[f64], out: &mut [f64]) {
    match v.len() {
        1 => horner_fixed::<1>(prev, v, c, add, out),
        2 => horner_fixed::<2>(prev, v, c, add, out),
        3 => horner_fixed::<3>(prev, v, c, add, out),
        4 => horner_fixed::<4>(prev, v, c, add, out),
        d => {
            let n = prev.len() * d;
            for ((dst, src), &p) in out[..n]
                .chunks_exact_mut(d)
                .zip(add[..n].chunks_exact(d))
                .zip(prev)
            {
                let s = p * c;
                for ((o, &va), &ad) in dst.iter_mut().zip(v).zip(src) {
                    *o = s * va + ad;
                }
            }
        }
    }
}

fn horner_fixed<const D: usize>(prev: &[f64], v: &[f64], c: f64, add: &[f64], out: &mut [f64]) {
    let v: [f64; D] = v.try_into().expect("width checked by caller");
    let n = prev.len() * D;
    for ((dst, src), &p) in out[..n]
        .chunks_exact_mut(D)
        .zip(add[..n].chunks_exact(D))
        .zip(prev)
    {
        let s = p * c;
        for a in 0..D {
            dst[a] = s * v[a] + src[a];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_mul(a: &TruncatedTensor, b: &TruncatedTensor) -> Vec<Vec<f64>> {
        // nested loops over explicit multi-indices
        let d = a.channels();
        let n = a.depth();
        let mut out = Vec::new();
        for k in 0..=n {
            let mut level = vec![0.0; d.pow(k as u32)];
            for (idx, slot) in level.iter_mut().enumerate() {
                for j in 0..=k {
                    let left = idx / d.pow((k - j) as u32);
                    let right = idx % d.pow((k - j) as u32);
                    *slot += a.level(j)[left] * b.level(k - j)[right];
                }
            }
            out.push(level);
        }
        out
    }

    #[test]
    fn identity_levels() {
        let t = TruncatedTensor::identity(2, 2).unwrap();
        assert_eq!(t.levels(), vec![vec![1.0], vec![0.0, 0.0], vec![0.0; 4]]);
        let t = TruncatedTensor::identity(1, 0).unwrap();
        assert_eq!(t.levels(), vec![vec![1.0]]);
        assert!(matches!(
            TruncatedTensor::identity(0, 3),
            Err(SigError::ZeroChannels)
        ));
    }

    #[test]
    fn scalar_exponential_product() {
        let a = TruncatedTensor::from_levels(1, vec![vec![1.0], vec![2.0], vec![2.0]]).unwrap();
        let b = TruncatedTensor::from_levels(1, vec![vec![1.0], vec![3.0], vec![4.5]]).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.levels(), vec![vec![1.0], vec![5.0], vec![12.5]]);
    }

    #[test]
    fn basis_vectors_multiply_to_single_entry() {
        let mut a = TruncatedTensor::identity(2, 2).unwrap();
        a.level_mut(1)[0] = 1.0;
        let mut b = TruncatedTensor::identity(2, 2).unwrap();
        b.level_mut(1)[1] = 1.0;
        let c = a.mul(&b).unwrap();
        assert_eq!(c.level(1), &[1.0, 1.0]);
        assert_eq!(c.level(2), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(c.levels(), brute_mul(&a, &b));
    }

    #[test]
    fn mul_rejects_mismatch() {
        let a = TruncatedTensor::identity(2, 2).unwrap();
        let b = TruncatedTensor::identity(3, 2).unwrap();
        let c = TruncatedTensor::identity(2, 3).unwrap();
        assert!(a.mul(&b).is_err());
        assert!(a.mul(&c).is_err());
        assert!(a.dot(&c).is_err());
    }

    #[test]
    fn mul_exp_matches_dense_product() {
        let a = TruncatedTensor::exp(&[0.4, -1.1, 0.3], 4)
            .unwrap()
            .mul(&TruncatedTensor::exp(&[-0.2, 0.5, 0.9], 4).unwrap())
            .unwrap();
        let v = [0.7, 0.1, -0.6];
        let dense = a.mul(&TruncatedTensor::exp(&v, 4).unwrap()).unwrap();
        assert!(a.mul_exp(&v).unwrap().max_abs_diff(&dense).unwrap() < 1e-14);
        assert!(a.mul_exp(&[1.0]).is_err());
    }

    #[test]
    fn exp_values() {
        let e = TruncatedTensor::exp(&[0.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(e, TruncatedTensor::identity(3, 3).unwrap());

        let e = TruncatedTensor::exp(&[1.0, 2.0], 2).unwrap();
        // outer(v, v) / 2
        let v = [1.0, 2.0];
        let outer: Vec<f64> = (0..4).map(|i| v[i / 2] * v[i % 2] / 2.0).collect();
        assert_eq!(e.level(1), &[1.0, 2.0]);
        assert_eq!(e.level(2), outer.as_slice());

        let e = TruncatedTensor::exp(&[2.0], 3).unwrap();
        let expect = [1.0, 2.0, 2.0, 4.0 / 3.0];
        for (k, want) in expect.iter().enumerate() {
            assert!((e.level(k)[0] - want).abs() < 1e-15);
        }
        assert!(TruncatedTensor::exp(&[], 2).is_err());
    }

    #[test]
    fn norms_and_dot() {
        let t = TruncatedTensor::from_levels(1, vec![vec![1.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(t.norm_tail(), 5.0);
        let id = TruncatedTensor::identity(2, 3).unwrap();
        assert_eq!(id.norm_tail(), 0.0);
        assert_eq!(id.dot(&id).unwrap(), 1.0);
        let dd = t.dot(&t).unwrap();
        assert!((dd - (t.norm_tail().powi(2) + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn scale_levels_special_values() {
        let t = TruncatedTensor::exp(&[0.3, -0.7], 3).unwrap();
        assert_eq!(t.scale_levels(1.0), t);
        assert_eq!(
            t.scale_levels(0.0),
            TruncatedTensor::identity(2, 3).unwrap()
        );
    }

    #[test]
    fn flatten_roundtrip_and_dims() {
        assert_eq!(sig_dim(4, 3, false), 84);
        assert_eq!(sig_dim(2, 3, true), 15);
        assert_eq!(sig_dim(1, 5, true), 6);
        let mut t = TruncatedTensor::identity(2, 1).unwrap();
        t.level_mut(1).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(t.flatten_nonconstant(), vec![3.0, 4.0]);
        let back = TruncatedTensor::unflatten_nonconstant(2, 1, &[3.0, 4.0]).unwrap();
        assert_eq!(back, t);
        let big = TruncatedTensor::exp(&[0.1, 0.2, 0.3, 0.4], 3).unwrap();
        assert_eq!(big.flatten_nonconstant().len(), 84);
    }
}
