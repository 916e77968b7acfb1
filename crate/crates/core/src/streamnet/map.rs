//! Stream-preserving maps: pointwise, strided window, and recurrent.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{Result, SigError};
use crate::stream::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MapKind {
    Pointwise,
    Windowed { window: usize, stride: usize },
    /// `Phi_k = net(x_k..x_{k+m-1}, Phi_{k-1})`, `Phi_0 = 0`.
    Recurrent { window: usize },
}

impl MapKind {
    pub fn window(&self) -> usize {
        match *self {
            MapKind::Pointwise => 1,
            MapKind::Windowed { window, .. } | MapKind::Recurrent { window } => window,
        }
    }

    fn stride(&self) -> usize {
        match *self {
            MapKind::Windowed { stride, .. } => stride,
            _ => 1,
        }
    }

    /// Output length for an input of length `n`, `None` if `n` is too short.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        let m = self.window();
        if n < m || m == 0 {
            return None;
        }
        Some((n - m) / self.stride() + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamMap {
    pub kind: MapKind,
    pub net: Mlp,
    pub in_channels: usize,
    /// Input channels seen by the network, in order.
    pub selected: Vec<usize>,
    /// Prepend the input point (last point of each window) to every output.
    pub preserve_original: bool,
}

/// Saved state for [`StreamMap::backward`].
#[derive(Clone, Debug, Default)]
pub struct MapCache {
    caches: Vec<MlpCache>,
}

impl StreamMap {
    pub fn net_outputs(&self) -> usize {
        self.net.outputs()
    }

    pub fn out_channels(&self) -> usize {
        self.net_outputs() + if self.preserve_original { self.in_channels } else { 0 }
    }

    /// Network input width implied by the kind and channel selection.
    pub fn expected_net_inputs(kind: MapKind, selected: usize, state: usize) -> usize {
        match kind {
            MapKind::Pointwise => selected,
            MapKind::Windowed { window, .. } => window * selected,
            MapKind::Recurrent { window } => window * selected + state,
        }
    }

    fn window_start(&self, j: usize) -> usize {
        j * self.kind.stride()
    }

    fn gather(&self, x: &Stream, start: usize, buf: &mut Vec<f64>) {
        buf.clear();
        for p in start..start + self.kind.window() {
            let row = x.point(p);
            buf.extend(self.selected.iter().map(|&c| row[c]));
        }
    }

    pub fn output_len(&self, n: usize) -> Result<usize> {
        self.kind.output_len(n).ok_or_else(|| SigError::StreamTooShort {
            len: n,
            needed: format!("window of {} points", self.kind.window()),
        })
    }

    pub fn apply(&self, params: &[f64], x: &Stream) -> Result<Stream> {
        Ok(self.forward(params, x)?.0)
    }

    pub fn forward(&self, params: &[f64], x: &Stream) -> Result<(Stream, MapCache)> {
        if x.channels() != self.in_channels {
            return Err(SigError::shape(format!(
                "map expects {} channels, stream has {}",
                self.in_channels,
                x.channels()
            )));
        }
        let len = self.output_len(x.len())?;
        let m = self.kind.window();
        let e = self.net_outputs();
        let mut points = Vec::with_capacity(len * self.out_channels());
        let mut cache = MapCache::default();
        let mut buf = Vec::new();
        let mut state = vec![0.0; e];
        for j in 0..len {
            let start = self.window_start(j);
            self.gather(x, start, &mut buf);
            if matches!(self.kind, MapKind::Recurrent { .. }) {
                buf.extend_from_slice(&state);
            }
            let (out, c) = self.net.forward_cached(params, &buf);
            if self.preserve_original {
                points.extend_from_slice(x.point(start + m - 1));
            }
            points.extend_from_slice(&out);
            state = out;
            cache.caches.push(c);
        }
        Ok((Stream::new(points, self.out_channels())?, cache))
    }

    /// Accumulate parameter gradients; return the cotangent on the input points.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Stream,
        cache: &MapCache,
        g_out: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let d = self.in_channels;
        let oc = self.out_channels();
        let m = self.kind.window();
        let e = self.net_outputs();
        let sel = self.selected.len();
        let offset = if self.preserve_original { d } else { 0 };
        let mut g_in = vec![0.0; x.len() * d];
        let mut g_state = vec![0.0; e];
        for j in (0..cache.caches.len()).rev() {
            let start = self.window_start(j);
            let row = &g_out[j * oc..(j + 1) * oc];
            if self.preserve_original {
                let p = start + m - 1;
                for (gi, gv) in g_in[p * d..(p + 1) * d].iter_mut().zip(&row[..d]) {
                    *gi += gv;
                }
            }
            let mut g_net: Vec<f64> = row[offset..].to_vec();
            for (g, s) in g_net.iter_mut().zip(&g_state) {
                *g += s;
            }
            let gx = self.net.backward(params, &cache.caches[j], &g_net, grads);
            for w in 0..m {
                let p = start + w;
                for (k, &c) in self.selected.iter().enumerate() {
                    g_in[p * d + c] += gx[w * sel + k];
                }
            }
            if matches!(self.kind, MapKind::Recurrent { .. }) {
                g_state.copy_from_slice(&gx[m * sel..]);
            }
        }
        g_in
    }
}

#[cfg(test)]
mod tests {
    use super::super::mlp::Activation;
    use super::super::params::ModelParams;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize, d: usize) -> Stream {
        Stream::new((0..n * d).map(|i| (i as f64 * 0.37).sin()).collect(), d).unwrap()
    }

    fn make(kind: MapKind, d: usize, out: usize, preserve: bool, seed: u64) -> (StreamMap, ModelParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::default();
        let state = if matches!(kind, MapKind::Recurrent { .. }) { out } else { 0 };
        let inputs = StreamMap::expected_net_inputs(kind, d, state);
        let act = if state > 0 { Activation::Tanh } else { Activation::Identity };
        let net = Mlp::init(&mut p, "phi", &[inputs, 5, out], Activation::Tanh, act, &mut rng);
        let map = StreamMap {
            kind,
            net,
            in_channels: d,
            selected: (0..d).collect(),
            preserve_original: preserve,
        };
        (map, p)
    }

    #[test]
    fn output_lengths() {
        let x = ramp(5, 2);
        let (m, p) = make(MapKind::Windowed { window: 3, stride: 1 }, 2, 4, false, 0);
        assert_eq!(m.apply(&p.values, &x).unwrap().len(), 3);
        let (m, p) = make(MapKind::Windowed { window: 2, stride: 2 }, 2, 4, true, 0);
        let y = m.apply(&p.values, &ramp(7, 2)).unwrap();
        assert_eq!(y.len(), 3);
        assert_eq!(y.channels(), 6);
        let (m, p) = make(MapKind::Recurrent { window: 2 }, 2, 3, false, 0);
        assert_eq!(m.apply(&p.values, &x).unwrap().len(), 4);
        let (m, p) = make(MapKind::Windowed { window: 6, stride: 1 }, 2, 3, false, 0);
        assert!(m.apply(&p.values, &x).is_err());
    }

    #[test]
    fn recurrent_zero_weights_give_zero_stream() {
        let (m, mut p) = make(MapKind::Recurrent { window: 2 }, 2, 3, false, 0);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let y = m.apply(&p.values, &ramp(6, 2)).unwrap();
        assert_eq!(y.len(), 5);
        assert!(y.points().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in [
            MapKind::Pointwise,
            MapKind::Windowed { window: 3, stride: 2 },
            MapKind::Recurrent { window: 2 },
        ] {
            let x = ramp(7, 2);
            let (m, p) = make(kind, 2, 3, true, 5);
            let (y, cache) = m.forward(&p.values, &x).unwrap();
            let cot: Vec<f64> = (0..y.points().len()).map(|i| ((i * 7) as f64).cos()).collect();
            let f = |params: &[f64], xs: &Stream| -> f64 {
                let y = m.apply(params, xs).unwrap();
                y.points().iter().zip(&cot).map(|(a, b)| a * b).sum()
            };
            let mut g = p.zeros_like();
            let gx = m.backward(&p.values, &x, &cache, &cot, &mut g);
            let h = 1e-6;
            for i in 0..p.len() {
                let mut up = p.values.clone();
                up[i] += h;
                let mut dn = p.values.clone();
                dn[i] -= h;
                let fd = (f(&up, &x) - f(&dn, &x)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{kind:?} param {i}");
            }
            for i in 0..x.points().len() {
                let mut up = x.clone();
                up.points_mut()[i] += h;
                let mut dn = x.clone();
                dn.points_mut()[i] -= h;
                let fd = (f(&p.values, &up) - f(&p.values, &dn)) / (2.0 * h);
                assert!((fd - gx[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{kind:?} input {i}");
            }
        }
    }
}
