//! Dense feedforward networks with hand-written adjoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
}

impl Dense {
    /// Weights and bias uniform in `+-sqrt(1 / fan_in)`.
    pub fn init<R: Rng>(
        params: &mut ModelParams,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / inputs.max(1) as f64).sqrt();
        let weight = params.push_uniform(format!("{name}.weight"), vec![outputs, inputs], bound, rng);
        let bias = params.push_uniform(format!("{name}.bias"), vec![outputs], bound, rng);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = self.weight.slice(params);
        let b = self.bias.slice(params);
        out.clear();
        for (o, &bo) in b.iter().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = bo;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }

    /// Accumulate parameter gradients; return the input cotangent.
    fn backward(&self, params: &[f64], x: &[f64], g_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let w = self.weight.slice(params);
        let mut g_in = vec![0.0; self.inputs];
        {
            let gw = self.weight.slice_mut(grads);
            for (o, &go) in g_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for ((gwv, &xv), (gi, &wv)) in grow.iter_mut().zip(x).zip(g_in.iter_mut().zip(row)) {
                    *gwv += go * xv;
                    *gi += go * wv;
                }
            }
        }
        let gb = self.bias.slice_mut(grads);
        for (gbv, &go) in gb.iter_mut().zip(g_out) {
            *gbv += go;
        }
        g_in
    }
}

/// Stack of dense layers: `hidden` activation between layers, `output`
/// activation after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn init<R: Rng>(
        params: &mut ModelParams,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len + l.bias.len).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_cached(params, x).0
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(x.len(), self.inputs());
        let mut cache = MlpCache::default();
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(layer.outputs);
            layer.forward(params, &cur, &mut pre);
            let act = self.activation(i);
            let out: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut cur, out.clone()));
            cache.pre.push(pre);
            cache.outputs.push(out);
        }
        (cur, cache)
    }

    /// Accumulate parameter gradients into `grads`; return `dL/dx`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        g_out: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let mut g = g_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = self.activation(i);
            for ((gv, &x), &y) in g.iter_mut().zip(&cache.pre[i]).zip(&cache.outputs[i]) {
                *gv *= act.derivative(x, y);
            }
            g = layer.backward(params, &cache.inputs[i], &g, grads);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::default();
        let net = Mlp::init(&mut p, "f", &[3, 2], Activation::Relu, Activation::Identity, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let (_, cache) = net.forward_cached(&p.values, &x);
        let cot = [0.3, -0.7];
        let mut g = p.zeros_like();
        net.backward(&p.values, &cache, &cot, &mut g);
        let gw = net.layers[0].weight.slice(&g);
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(gw[o * 3 + i], cot[o] * x[i]);
            }
        }
        assert_eq!(net.layers[0].bias.slice(&g), &cot);
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::default();
        let net = Mlp::init(&mut p, "f", &[4, 8, 1], Activation::Relu, Activation::Sigmoid, &mut rng);
        let (_, cache) = net.forward_cached(&p.values, &[0.1, 0.2, 0.3, 0.4]);
        let mut g = p.zeros_like();
        let gx = net.backward(&p.values, &cache, &[0.0], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::default();
        let net = Mlp::init(&mut p, "f", &[3, 5, 4, 2], Activation::Tanh, Activation::Sigmoid, &mut rng);
        let x = [0.2, -0.4, 0.9];
        let cot = [1.0, -0.5];
        let loss = |v: &[f64]| -> f64 {
            net.forward(v, &x).iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward_cached(&p.values, &x);
        let mut g = p.zeros_like();
        net.backward(&p.values, &cache, &cot, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.values.clone();
            up[i] += h;
            let mut dn = p.values.clone();
            dn[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }
}
