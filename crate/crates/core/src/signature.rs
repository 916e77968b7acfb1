//! Truncated signatures of piecewise-linear streams.
//!
//! The signature of a stream is the left fold of tensor exponentials of its
//! increments, `exp(x_2 - x_1) (x) ... (x) exp(x_n - x_{n-1})`.
//! [`update_signature`] is one step of that fold, so streaming a path one
//! point at a time reproduces [`signature`] exactly.

use rayon::prelude::*;

use crate::error::{Result, SigError};
use crate::stream::{Stream, StreamBatch};
use crate::tensor::TruncatedTensor;

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 {
        Err(SigError::InvalidDepth(depth))
    } else {
        Ok(())
    }
}

fn check_len(x: &Stream, needed: usize) -> Result<()> {
    if x.len() < needed {
        Err(SigError::StreamTooShort {
            len: x.len(),
            needed: format!("at least {needed} points required"),
        })
    } else {
        Ok(())
    }
}

fn increment(x: &Stream, i: usize) -> Vec<f64> {
    x.point(i + 1)
        .iter()
        .zip(x.point(i))
        .map(|(b, a)| b - a)
        .collect()
}

/// Depth-`depth` signature of `x`. Ignores the time grid.
pub fn signature(x: &Stream, depth: usize) -> Result<TruncatedTensor> {
    check_depth(depth)?;
    check_len(x, 2)?;
    let mut sig = TruncatedTensor::exp(&increment(x, 0), depth)?;
    for i in 1..x.len() - 1 {
        sig = sig.mul_exp(&increment(x, i))?;
    }
    Ok(sig)
}

/// Extend `sig` by the segment `prev_point -> new_point`.
pub fn update_signature(
    sig: &TruncatedTensor,
    prev_point: &[f64],
    new_point: &[f64],
) -> Result<TruncatedTensor> {
    if prev_point.len() != sig.channels() || new_point.len() != sig.channels() {
        return Err(SigError::shape(format!(
            "points of dimension {} / {} for a signature over {} channels",
            prev_point.len(),
            new_point.len(),
            sig.channels()
        )));
    }
    let inc: Vec<f64> = new_point
        .iter()
        .zip(prev_point)
        .map(|(b, a)| b - a)
        .collect();
    sig.mul_exp(&inc)
}

/// Signatures of the prefixes `(x_1, x_2), (x_1, x_2, x_3), ..., x`.
pub fn prefix_signatures(x: &Stream, depth: usize) -> Result<Vec<TruncatedTensor>> {
    check_depth(depth)?;
    check_len(x, 2)?;
    let mut out = Vec::with_capacity(x.len() - 1);
    let mut sig = TruncatedTensor::exp(&increment(x, 0), depth)?;
    out.push(sig.clone());
    for i in 1..x.len() - 1 {
        sig = update_signature(&sig, x.point(i), x.point(i + 1))?;
        out.push(sig.clone());
    }
    Ok(out)
}

/// Per-stream signatures of a batch, evaluated independently.
pub fn signature_batch(batch: &StreamBatch, depth: usize) -> Result<Vec<TruncatedTensor>> {
    batch
        .streams()
        .par_iter()
        .map(|s| signature(s, depth))
        .collect()
}

/// Prepend the time channel: supplied times, else the uniform grid `i/(n-1)`.
pub fn time_augment(x: &Stream) -> Stream {
    let grid = x.time_grid();
    let d = x.channels();
    let mut points = Vec::with_capacity(x.len() * (d + 1));
    for (t, row) in grid.iter().zip(x.rows()) {
        points.push(*t);
        points.extend_from_slice(row);
    }
    let out = Stream::new(points, d + 1).expect("augmented stream keeps its shape");
    match x.times() {
        Some(t) => out
            .with_times(t.to_vec())
            .expect("times already validated"),
        None => out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(rows: &[&[f64]]) -> Stream {
        Stream::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_segment_is_the_exponential() {
        let x = stream(&[&[0.0, 0.0], &[1.0, 2.0]]);
        let s = signature(&x, 2).unwrap();
        assert_eq!(s.level(0), &[1.0]);
        assert_eq!(s.level(1), &[1.0, 2.0]);
        assert_eq!(s.level(2), &[0.5, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn constant_stream_has_trivial_signature() {
        let x = stream(&[&[0.3, 1.0], &[0.3, 1.0], &[0.3, 1.0]]);
        assert_eq!(
            signature(&x, 4).unwrap(),
            TruncatedTensor::identity(2, 4).unwrap()
        );
    }

    #[test]
    fn collinear_points_collapse() {
        let two = stream(&[&[0.0, 0.0], &[1.0, 2.0]]);
        let three = stream(&[&[0.0, 0.0], &[0.3, 0.6], &[1.0, 2.0]]);
        let a = signature(&two, 4).unwrap();
        let b = signature(&three, 4).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = stream(&[&[0.0]]);
        assert!(matches!(
            signature(&x, 2),
            Err(SigError::StreamTooShort { .. })
        ));
        let x = stream(&[&[0.0], &[1.0]]);
        assert!(matches!(signature(&x, 0), Err(SigError::InvalidDepth(0))));
    }

    #[test]
    fn update_matches_fold_and_unit_step() {
        let x = stream(&[&[0.0, 0.1], &[0.4, -0.2], &[1.0, 0.5]]);
        let s2 = signature(&x.slice(0, 2), 3).unwrap();
        let s3 = update_signature(&s2, x.point(1), x.point(2)).unwrap();
        assert_eq!(s3, signature(&x, 3).unwrap());
        let same = update_signature(&s3, x.point(2), x.point(2)).unwrap();
        assert_eq!(same, s3);
        assert!(update_signature(&s3, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn time_augment_grids() {
        let x = stream(&[&[5.0], &[7.0]]);
        let a = time_augment(&x);
        assert_eq!(a.to_rows(), vec![vec![0.0, 5.0], vec![1.0, 7.0]]);

        let x = stream(&[&[5.0], &[7.0], &[9.0]])
            .with_times(vec![0.0, 0.1, 1.0])
            .unwrap();
        let a = time_augment(&x);
        assert_eq!(
            a.to_rows(),
            vec![vec![0.0, 5.0], vec![0.1, 7.0], vec![1.0, 9.0]]
        );
    }

    #[test]
    fn prefix_signatures_match_direct() {
        let x = stream(&[&[0.0, 0.0], &[1.0, 0.3], &[0.2, 0.9], &[-0.5, 0.1]]);
        let prefixes = prefix_signatures(&x, 3).unwrap();
        assert_eq!(prefixes.len(), 3);
        for (k, p) in prefixes.iter().enumerate() {
            assert_eq!(*p, signature(&x.slice(0, k + 2), 3).unwrap());
        }
    }
}
