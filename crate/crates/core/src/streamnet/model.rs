//! Deep signature models: alternating stream maps, lifts and stream-wise
//! signatures, finished by a head network.
//!
//! A model is declared by a [`ModelSpec`] (serializable, loadable from TOML)
//! and built into a [`DeepSigModel`] plus a flat [`ModelParams`] vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lift::{sig_of_lift_recorded, Lift, LiftTape};
use super::map::{MapCache, MapKind, StreamMap};
use super::mlp::{Activation, Mlp, MlpCache};
use super::params::ModelParams;
use crate::error::{Result, SigError};
use crate::stream::Stream;
use crate::tensor::sig_dim;

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(flatten)]
    pub kind: MapKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Network output width (the state size for recurrent maps).
    pub outputs: usize,
    #[serde(default)]
    pub preserve_original: bool,
    /// Channels fed to the network; all channels when absent.
    #[serde(default)]
    pub inputs: Option<Vec<usize>>,
    #[serde(default = "relu")]
    pub hidden_activation: Activation,
    /// Ignored for recurrent maps, whose cell output is always `tanh`.
    #[serde(default)]
    pub output_activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(default)]
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub lift: Lift,
    pub depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Applied to every point; the model stays stream-preserving.
    Pointwise,
    /// Consumes the whole (fixed-length) final stream, flattened row-major.
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub outputs: usize,
    #[serde(default = "relu")]
    pub hidden_activation: Activation,
    #[serde(default)]
    pub output_activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    /// Required when the head flattens the final stream.
    #[serde(default)]
    pub input_length: Option<usize>,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigBlock {
    pub map: Option<StreamMap>,
    pub lift: Lift,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Pointwise(Mlp),
    Flatten(Mlp),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelOutput {
    Stream(Stream),
    Vector(Vec<f64>),
}

impl ModelOutput {
    pub fn values(&self) -> &[f64] {
        match self {
            ModelOutput::Stream(s) => s.points(),
            ModelOutput::Vector(v) => v,
        }
    }

    pub fn into_stream(self) -> Option<Stream> {
        match self {
            ModelOutput::Stream(s) => Some(s),
            ModelOutput::Vector(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSigModel {
    pub input_channels: usize,
    pub blocks: Vec<SigBlock>,
    pub head: Head,
    pub spec: ModelSpec,
}

struct BlockTrace {
    input: Stream,
    map_cache: Option<MapCache>,
    lift_tape: LiftTape,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    blocks: Vec<BlockTrace>,
    head_input: Stream,
    head_caches: Vec<MlpCache>,
}

fn chain_err(block: usize, e: impl std::fmt::Display) -> SigError {
    SigError::ModelChain {
        block,
        msg: e.to_string(),
    }
}

impl DeepSigModel {
    /// Validate the channel/length chain and initialize parameters from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Self, ModelParams)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::default();
        let mut channels = spec.input_channels;
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        let mut length = spec.input_length;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (b, bs) in spec.blocks.iter().enumerate() {
            if bs.depth == 0 {
                return Err(chain_err(b, "signature depth must be at least 1"));
            }
            let map = match &bs.map {
                None => None,
                Some(ms) => {
                    let selected = ms.inputs.clone().unwrap_or_else(|| (0..channels).collect());
                    if selected.is_empty() || selected.iter().any(|&c| c >= channels) {
                        return Err(chain_err(
                            b,
                            format!("input selection {selected:?} invalid for {channels} channels"),
                        ));
                    }
                    let recurrent = matches!(ms.kind, MapKind::Recurrent { .. });
                    let state = if recurrent { ms.outputs } else { 0 };
                    let mut sizes =
                        vec![StreamMap::expected_net_inputs(ms.kind, selected.len(), state)];
                    sizes.extend(&ms.hidden);
                    sizes.push(ms.outputs);
                    let out_act = if recurrent {
                        Activation::Tanh
                    } else {
                        ms.output_activation
                    };
                    let net = Mlp::init(
                        &mut params,
                        &format!("block{b}.map"),
                        &sizes,
                        ms.hidden_activation,
                        out_act,
                        &mut rng,
                    );
                    let map = StreamMap {
                        kind: ms.kind,
                        net,
                        in_channels: channels,
                        selected,
                        preserve_original: ms.preserve_original,
                    };
                    if let Some(n) = length {
                        length = Some(map.output_len(n).map_err(|e| chain_err(b, e))?);
                    }
                    channels = map.out_channels();
                    Some(map)
                }
            };
            if let Some(n) = length {
                length = Some(bs.lift.output_len(n).map_err(|e| chain_err(b, e))?);
            }
            channels = sig_dim(channels, bs.depth, false);
            blocks.push(SigBlock {
                map,
                lift: bs.lift,
                depth: bs.depth,
            });
        }
        let hs = &spec.head;
        let head_in = match hs.kind {
            HeadKind::Pointwise => channels,
            HeadKind::Flatten => {
                let n = length.ok_or_else(|| {
                    chain_err(
                        spec.blocks.len(),
                        "a flatten head needs a known input length",
                    )
                })?;
                n * channels
            }
        };
        let mut sizes = vec![head_in];
        sizes.extend(&hs.hidden);
        sizes.push(hs.outputs);
        let net = Mlp::init(
            &mut params,
            "head",
            &sizes,
            hs.hidden_activation,
            hs.output_activation,
            &mut rng,
        );
        let head = match hs.kind {
            HeadKind::Pointwise => Head::Pointwise(net),
            HeadKind::Flatten => Head::Flatten(net),
        };
        Ok((
            Self {
                input_channels: spec.input_channels,
                blocks,
                head,
                spec: spec.clone(),
            },
            params,
        ))
    }

    pub fn param_count(&self) -> usize {
        let head = match &self.head {
            Head::Pointwise(m) | Head::Flatten(m) => m.param_count(),
        };
        head + self
            .blocks
            .iter()
            .filter_map(|b| b.map.as_ref())
            .map(|m| m.net.param_count())
            .sum::<usize>()
    }

    /// Output length of a stream-preserving model for an input of length `n`.
    pub fn output_len(&self, n: usize) -> Result<usize> {
        let mut len = n;
        for (b, block) in self.blocks.iter().enumerate() {
            if let Some(m) = &block.map {
                len = m.output_len(len).map_err(|e| chain_err(b, e))?;
            }
            len = block.lift.output_len(len).map_err(|e| chain_err(b, e))?;
        }
        Ok(match self.head {
            Head::Pointwise(_) => len,
            Head::Flatten(_) => 1,
        })
    }

    pub fn forward(&self, params: &ModelParams, x: &Stream) -> Result<ModelOutput> {
        Ok(self.forward_traced(params, x)?.0)
    }

    pub fn forward_traced(
        &self,
        params: &ModelParams,
        x: &Stream,
    ) -> Result<(ModelOutput, ForwardTrace)> {
        if x.channels() != self.input_channels {
            return Err(chain_err(
                0,
                format!(
                    "input has {} channels, model expects {}",
                    x.channels(),
                    self.input_channels
                ),
            ));
        }
        let p = &params.values;
        let mut cur = x.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let (mapped, map_cache) = match &block.map {
                Some(m) => {
                    let (y, c) = m.forward(p, &cur).map_err(|e| chain_err(b, e))?;
                    (y, Some(c))
                }
                None => (cur.clone(), None),
            };
            let (sigs, lift_tape) =
                sig_of_lift_recorded(block.lift, &mapped, block.depth).map_err(|e| chain_err(b, e))?;
            traces.push(BlockTrace {
                input: cur,
                map_cache,
                lift_tape,
            });
            cur = sigs;
        }
        let (out, head_caches) = match &self.head {
            Head::Pointwise(net) => {
                if cur.channels() != net.inputs() {
                    return Err(chain_err(self.blocks.len(), "head width mismatch"));
                }
                let mut pts = Vec::with_capacity(cur.len() * net.outputs());
                let mut caches = Vec::with_capacity(cur.len());
                for row in cur.rows() {
                    let (o, c) = net.forward_cached(p, row);
                    pts.extend(o);
                    caches.push(c);
                }
                (ModelOutput::Stream(Stream::new(pts, net.outputs())?), caches)
            }
            Head::Flatten(net) => {
                if cur.points().len() != net.inputs() {
                    return Err(chain_err(
                        self.blocks.len(),
                        format!(
                            "flatten head expects {} inputs, final stream has {}",
                            net.inputs(),
                            cur.points().len()
                        ),
                    ));
                }
                let (o, c) = net.forward_cached(p, cur.points());
                (ModelOutput::Vector(o), vec![c])
            }
        };
        Ok((
            out,
            ForwardTrace {
                blocks: traces,
                head_input: cur,
                head_caches,
            },
        ))
    }

    /// Parameter gradients and the input cotangent for an output cotangent
    /// laid out like [`ModelOutput::values`].
    pub fn backward(
        &self,
        params: &ModelParams,
        trace: &ForwardTrace,
        cotangent: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = &params.values;
        let mut grads = params.zeros_like();
        let mut g = match &self.head {
            Head::Pointwise(net) => {
                let o = net.outputs();
                if cotangent.len() != trace.head_caches.len() * o {
                    return Err(SigError::shape("cotangent does not match model output"));
                }
                let mut g = Vec::with_capacity(trace.head_input.points().len());
                for (i, c) in trace.head_caches.iter().enumerate() {
                    g.extend(net.backward(p, c, &cotangent[i * o..(i + 1) * o], &mut grads));
                }
                g
            }
            Head::Flatten(net) => {
                if cotangent.len() != net.outputs() {
                    return Err(SigError::shape("cotangent does not match model output"));
                }
                net.backward(p, &trace.head_caches[0], cotangent, &mut grads)
            }
        };
        for (b, (block, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            g = bt.lift_tape.backward(&g).map_err(|e| chain_err(b, e))?;
            if let (Some(m), Some(c)) = (&block.map, &bt.map_cache) {
                g = m.backward(p, &bt.input, c, &g, &mut grads);
            }
        }
        for seg in &params.segments {
            if grads[seg.offset..seg.offset + seg.len]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(SigError::NonFinite(format!("gradient of {}", seg.name)));
            }
        }
        Ok((grads, g))
    }
}
