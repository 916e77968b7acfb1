//! Central finite-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - f| / max(|a|, |f|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Up to `count` distinct indices below `len`, fixed by `seed`, in ascending order.
pub fn pick_indices(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, len, count.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

/// Compare `analytic[i]` with central differences of `loss` at `point` for
/// every `i` in `indices`.
pub fn check<F>(
    point: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    floor: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut worst = 0.0;
    let mut worst_index = None;
    let mut buf = point.to_vec();
    for &i in indices {
        let orig = buf[i];
        buf[i] = orig + step;
        let up = loss(&buf)?;
        buf[i] = orig - step;
        let dn = loss(&buf)?;
        buf[i] = orig;
        let fd = (up - dn) / (2.0 * step);
        let e = rel_err(analytic[i], fd, floor);
        if e > worst || worst_index.is_none() {
            worst = e;
            worst_index = Some(i);
        }
    }
    Ok(GradCheckReport {
        checked: indices.len(),
        max_rel_err: worst,
        worst_index,
        tolerance,
        passed: worst <= tolerance,
    })
}
