//! Per-layer parameter storage, seeded initialization and `VGT1` weight files.
//!
//! A weight file is a concatenation of `VGT1` records in layer order:
//! conv weight `c_out x c_in/groups x k x k` (then bias `1 x c_out x 1 x 1` if
//! present), BN scale and shift as `1 x c x 1 x 1`, FC weight
//! `1 x 1 x c_out x c_in` then bias `1 x c_out x 1 x 1`.

use std::io::{Read, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::ops::BnParams;
use crate::tensor::{Tensor, TensorShape};

/// Half-width of the uniform range used for seeded weights.
pub const INIT_BOUND: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv { weight: Vec<f32>, bias: Option<Vec<f32>> },
    Bn(BnParams),
    Fc { weight: Vec<f32>, bias: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    layers: Vec<LayerParams>,
}

/// `len` values drawn uniformly from `[-bound, bound]` with a ChaCha8 stream.
pub fn seeded_uniform(seed: u64, len: usize, bound: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

impl Weights {
    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        Weights { layers }
    }

    pub fn layer(&self, id: usize) -> Option<&LayerParams> {
        self.layers.get(id)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Conv and FC weights uniform in `[-0.1, 0.1]`; BN scale `1 + u`, shift `u`.
    pub fn random(net: &NetworkGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-INIT_BOUND, INIT_BOUND);
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| dist.sample(&mut rng)).collect() };
        let layers = net
            .layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(spec) => LayerParams::Conv {
                    weight: draw(spec.weight_len()),
                    bias: spec.has_bias.then(|| draw(spec.c_out)),
                },
                LayerKind::BnAct { channels, .. } => LayerParams::Bn(BnParams {
                    scale: draw(*channels).into_iter().map(|u| 1.0 + u).collect(),
                    shift: draw(*channels),
                }),
                LayerKind::FullyConnected { c_in, c_out } => LayerParams::Fc {
                    weight: draw(c_in * c_out),
                    bias: draw(*c_out),
                },
                LayerKind::Add { .. } | LayerKind::GlobalPool => LayerParams::None,
            })
            .collect();
        Weights { layers }
    }

    /// Every parameter zero, BN scale included.
    pub fn zeros(net: &NetworkGraph) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(spec) => LayerParams::Conv {
                    weight: vec![0.0; spec.weight_len()],
                    bias: spec.has_bias.then(|| vec![0.0; spec.c_out]),
                },
                LayerKind::BnAct { channels, .. } => LayerParams::Bn(BnParams {
                    scale: vec![0.0; *channels],
                    shift: vec![0.0; *channels],
                }),
                LayerKind::FullyConnected { c_in, c_out } => LayerParams::Fc {
                    weight: vec![0.0; c_in * c_out],
                    bias: vec![0.0; *c_out],
                },
                _ => LayerParams::None,
            })
            .collect();
        Weights { layers }
    }

    /// Confirms every layer has parameters of the right kind and size.
    pub fn check(&self, net: &NetworkGraph) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::Argument(format!(
                "weights cover {} layers, network has {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (layer, params) in net.layers.iter().zip(&self.layers) {
            let ok = match (&layer.kind, params) {
                (LayerKind::Conv(spec), LayerParams::Conv { weight, bias }) => {
                    weight.len() == spec.weight_len()
                        && match bias {
                            Some(b) => spec.has_bias && b.len() == spec.c_out,
                            None => !spec.has_bias,
                        }
                }
                (LayerKind::BnAct { channels, .. }, LayerParams::Bn(bn)) => {
                    bn.channels() == *channels && bn.shift.len() == *channels
                }
                (LayerKind::FullyConnected { c_in, c_out }, LayerParams::Fc { weight, bias }) => {
                    weight.len() == c_in * c_out && bias.len() == *c_out
                }
                (LayerKind::Add { .. } | LayerKind::GlobalPool, LayerParams::None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Argument(format!(
                    "missing or mis-sized weights for layer {} ({})",
                    layer.id,
                    layer.kind.name()
                )));
            }
        }
        Ok(())
    }

    pub fn write_vgt1<W: Write>(&self, net: &NetworkGraph, mut writer: W) -> Result<()> {
        self.check(net)?;
        let record = |shape: (usize, usize, usize, usize), data: &[f32]| -> Result<Tensor> {
            Tensor::from_vec(TensorShape::new(shape.0, shape.1, shape.2, shape.3)?, data.to_vec())
        };
        for (layer, params) in net.layers.iter().zip(&self.layers) {
            match (&layer.kind, params) {
                (LayerKind::Conv(spec), LayerParams::Conv { weight, bias }) => {
                    let k = spec.kernel;
                    record((spec.c_out, spec.channels_per_group, k, k), weight)?
                        .write_vgt1(&mut writer)?;
                    if let Some(b) = bias {
                        record((1, spec.c_out, 1, 1), b)?.write_vgt1(&mut writer)?;
                    }
                }
                (LayerKind::BnAct { channels, .. }, LayerParams::Bn(bn)) => {
                    record((1, *channels, 1, 1), &bn.scale)?.write_vgt1(&mut writer)?;
                    record((1, *channels, 1, 1), &bn.shift)?.write_vgt1(&mut writer)?;
                }
                (LayerKind::FullyConnected { c_in, c_out }, LayerParams::Fc { weight, bias }) => {
                    record((1, 1, *c_out, *c_in), weight)?.write_vgt1(&mut writer)?;
                    record((1, *c_out, 1, 1), bias)?.write_vgt1(&mut writer)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn read_vgt1<R: Read>(net: &NetworkGraph, reader: R) -> Result<Self> {
        let mut records = Tensor::read_all_vgt1(reader)?.into_iter();
        let mut next = |layer: usize, want: TensorShape| -> Result<Vec<f32>> {
            let t = records
                .next()
                .ok_or_else(|| Error::Format(format!("weight file ends before layer {layer}")))?;
            if t.shape() != want {
                return Err(Error::Format(format!(
                    "layer {layer}: weight record is {}, expected {want}",
                    t.shape()
                )));
            }
            Ok(t.into_vec())
        };
        let shape = |n, c, h, w| TensorShape { n, c, h, w };
        let mut layers = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let id = layer.id;
            layers.push(match &layer.kind {
                LayerKind::Conv(spec) => {
                    let k = spec.kernel;
                    let weight = next(id, shape(spec.c_out, spec.channels_per_group, k, k))?;
                    let bias = if spec.has_bias {
                        Some(next(id, shape(1, spec.c_out, 1, 1))?)
                    } else {
                        None
                    };
                    LayerParams::Conv { weight, bias }
                }
                LayerKind::BnAct { channels, .. } => {
                    let scale = next(id, shape(1, *channels, 1, 1))?;
                    let shift = next(id, shape(1, *channels, 1, 1))?;
                    LayerParams::Bn(BnParams::new(scale, shift).map_err(|e| Error::Format(e.to_string()))?)
                }
                LayerKind::FullyConnected { c_in, c_out } => LayerParams::Fc {
                    weight: next(id, shape(1, 1, *c_out, *c_in))?,
                    bias: next(id, shape(1, *c_out, 1, 1))?,
                },
                _ => LayerParams::None,
            });
        }
        if records.next().is_some() {
            return Err(Error::Format("weight file has trailing records".into()));
        }
        Ok(Weights { layers })
    }
}
