//! Lifts from a stream to a stream of streams, and stream-wise signatures.

use serde::{Deserialize, Serialize};

use crate::autodiff::SigTape;
use crate::error::{Result, SigError};
use crate::stream::Stream;
use crate::tensor::{sig_dim, TruncatedTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lift {
    /// Prefixes `(x_1, x_2), (x_1, x_2, x_3), ..., x`.
    Expanding,
    /// Disjoint pairs; a trailing odd point is dropped.
    Block,
    /// Overlapping windows of `window` consecutive points.
    Sliding { window: usize },
    /// The whole stream as a single element.
    Trivial,
}

impl Default for Lift {
    fn default() -> Self {
        Lift::Trivial
    }
}

impl Lift {
    pub fn sliding() -> Self {
        Lift::Sliding { window: 3 }
    }

    fn min_len(&self) -> usize {
        match *self {
            Lift::Sliding { window } => window.max(2),
            _ => 2,
        }
    }

    /// `(start, end)` point ranges of every lifted stream.
    pub fn ranges(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        if n < self.min_len() {
            return Err(SigError::StreamTooShort {
                len: n,
                needed: format!("{self:?} lift needs at least {} points", self.min_len()),
            });
        }
        Ok(match *self {
            Lift::Expanding => (2..=n).map(|k| (0, k)).collect(),
            Lift::Block => (0..n / 2).map(|i| (2 * i, 2 * i + 2)).collect(),
            Lift::Sliding { window } => (0..=n - window).map(|i| (i, i + window)).collect(),
            Lift::Trivial => vec![(0, n)],
        })
    }

    pub fn output_len(&self, n: usize) -> Result<usize> {
        Ok(self.ranges(n)?.len())
    }

    pub fn apply(&self, x: &Stream) -> Result<Vec<Stream>> {
        Ok(self
            .ranges(x.len())?
            .into_iter()
            .map(|(a, b)| x.slice(a, b))
            .collect())
    }
}

/// Recorded forward pass of [`sig_of_lift`].
pub struct LiftTape {
    lift: Lift,
    ranges: Vec<(usize, usize)>,
    tapes: Vec<SigTape>,
    channels: usize,
    depth: usize,
    len: usize,
}

/// Stream whose `i`-th point is the flattened non-constant signature of the
/// `i`-th lifted stream.
pub fn sig_of_lift(lift: Lift, x: &Stream, depth: usize) -> Result<Stream> {
    Ok(sig_of_lift_recorded(lift, x, depth)?.0)
}

pub fn sig_of_lift_recorded(lift: Lift, x: &Stream, depth: usize) -> Result<(Stream, LiftTape)> {
    let ranges = lift.ranges(x.len())?;
    let width = sig_dim(x.channels(), depth, false);
    let mut points = Vec::with_capacity(ranges.len() * width);
    let tapes = if lift == Lift::Expanding {
        // every prefix signature comes out of one fold over the whole stream
        let tape = SigTape::record(x, depth)?;
        for p in tape.prefixes() {
            points.extend_from_slice(&p.as_slice()[1..]);
        }
        vec![tape]
    } else {
        let mut tapes = Vec::with_capacity(ranges.len());
        for &(a, b) in &ranges {
            let tape = SigTape::record(&x.slice(a, b), depth)?;
            points.extend_from_slice(&tape.signature().as_slice()[1..]);
            tapes.push(tape);
        }
        tapes
    };
    let out = Stream::new(points, width)?;
    Ok((
        out,
        LiftTape {
            lift,
            ranges,
            tapes,
            channels: x.channels(),
            depth,
            len: x.len(),
        },
    ))
}

impl LiftTape {
    /// Cotangent on the input points given a cotangent on the signature stream.
    pub fn backward(&self, g_out: &[f64]) -> Result<Vec<f64>> {
        let d = self.channels;
        let width = sig_dim(d, self.depth, false);
        if g_out.len() != self.ranges.len() * width {
            return Err(SigError::shape("cotangent does not match the signature stream"));
        }
        let as_tensor = |i: usize| {
            TruncatedTensor::unflatten_nonconstant(d, self.depth, &g_out[i * width..(i + 1) * width])
                .map(|mut t| {
                    t.as_mut_slice()[0] = 0.0;
                    t
                })
        };
        let mut g_in = vec![0.0; self.len * d];
        if self.lift == Lift::Expanding {
            let cots = (0..self.ranges.len())
                .map(as_tensor)
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<Option<&TruncatedTensor>> = cots.iter().map(Some).collect();
            let g = self.tapes[0].backward_prefixes(&refs)?;
            for (o, v) in g_in.iter_mut().zip(g.as_slice()) {
                *o += v;
            }
        } else {
            for (i, (&(a, _), tape)) in self.ranges.iter().zip(&self.tapes).enumerate() {
                let g = tape.backward(&as_tensor(i)?)?;
                for (o, v) in g_in[a * d..].iter_mut().zip(g.as_slice()) {
                    *o += v;
                }
            }
        }
        Ok(g_in)
    }
}
