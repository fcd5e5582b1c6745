//! Layer graph representation, shape inference and JSON export.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::TensorShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvSpec),
    BnAct { channels: usize, activate: bool },
    /// Elementwise sum of exactly two inputs, optionally followed by ReLU.
    Add { relu: bool },
    GlobalPool,
    FullyConnected { c_in: usize, c_out: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::BnAct { .. } => "bn_act",
            LayerKind::Add { .. } => "add",
            LayerKind::GlobalPool => "global_pool",
            LayerKind::FullyConnected { .. } => "fully_connected",
        }
    }

    pub fn conv(&self) -> Option<&ConvSpec> {
        match self {
            LayerKind::Conv(spec) => Some(spec),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: usize,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Producer layer ids. Empty means the layer reads the network input.
    pub inputs: Vec<usize>,
    pub block_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// First dense 3x3 convolution.
    Stem,
    Head,
    Downsample,
    Normal,
    /// Final 1x1 widening convolution.
    Tail,
    Classifier,
}

impl BlockKind {
    /// Blocks whose output width counts as a stage width.
    pub fn is_stage(self) -> bool {
        matches!(self, BlockKind::Head | BlockKind::Downsample | BlockKind::Normal)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BlockKind::Stem => "stem",
            BlockKind::Head => "head",
            BlockKind::Downsample => "downsample",
            BlockKind::Normal => "normal",
            BlockKind::Tail => "tail",
            BlockKind::Classifier => "classifier",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub id: usize,
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    pub channels_per_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub name: String,
    pub scale: f64,
    pub channels_per_group: usize,
    pub num_classes: usize,
    pub input: TensorShape,
    pub blocks: Vec<BlockInfo>,
    pub layers: Vec<Layer>,
}

/// Per-layer result of shape inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub id: usize,
    pub block_id: usize,
    pub input: TensorShape,
    pub output: TensorShape,
}

impl NetworkGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Parses an exported graph and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let net: NetworkGraph =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("graph json: {e}")))?;
        net.validate()?;
        Ok(net)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (&Layer, &ConvSpec)> {
        self.layers
            .iter()
            .filter_map(|l| l.kind.conv().map(|spec| (l, spec)))
    }

    /// For every layer, the ids of layers that read its output.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layers.len()];
        for layer in &self.layers {
            let mut seen = layer.inputs.clone();
            seen.dedup();
            for src in seen {
                if src < out.len() {
                    out[src].push(layer.id);
                }
            }
        }
        out
    }

    fn locate(&self, layer: &Layer) -> String {
        match self.blocks.get(layer.block_id) {
            Some(b) => format!(
                "layer {} ({}) in block {} ({})",
                layer.id,
                layer.kind.name(),
                b.id,
                b.kind
            ),
            None => format!("layer {} ({})", layer.id, layer.kind.name()),
        }
    }

    /// Shape inference against the graph's own input shape.
    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        self.infer_shapes(self.input)
    }

    /// Runs shape inference for `input`, checking every structural invariant.
    /// Reports the first violation with its layer and block.
    pub fn infer_shapes(&self, input: TensorShape) -> Result<Vec<LayerShape>> {
        input.check()?;
        if self.layers.is_empty() {
            return Err(Error::Argument(format!("network '{}' has no layers", self.name)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.id != i {
                return Err(Error::Format(format!("block {i} carries id {}", b.id)));
            }
        }
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        let fc_count = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::FullyConnected { .. }))
            .count();
        for (idx, layer) in self.layers.iter().enumerate() {
            let at = || self.locate(layer);
            if layer.id != idx {
                return Err(Error::shape(at(), format!("id does not match position {idx}")));
            }
            if layer.block_id >= self.blocks.len() {
                return Err(Error::shape(at(), format!("unknown block {}", layer.block_id)));
            }
            if let Some(&bad) = layer.inputs.iter().find(|&&src| src >= idx) {
                return Err(Error::shape(
                    at(),
                    format!("input {bad} is not an earlier layer"),
                ));
            }
            let src_shape = |k: usize| -> TensorShape {
                layer
                    .inputs
                    .get(k)
                    .map_or(input, |&src| shapes[src].output)
            };
            let arity = match layer.kind {
                LayerKind::Add { .. } => 2,
                _ => 1,
            };
            if layer.inputs.len() != arity && !(arity == 1 && layer.inputs.is_empty()) {
                return Err(Error::shape(
                    at(),
                    format!("expects {arity} input(s), has {}", layer.inputs.len()),
                ));
            }
            let in_shape = src_shape(0);
            let out = match &layer.kind {
                LayerKind::Conv(spec) => {
                    spec.check()
                        .map_err(|e| Error::Config(format!("{}: {e}", at())))?;
                    spec.output_shape(in_shape)
                        .map_err(|e| Error::shape(at(), e.to_string()))?
                }
                LayerKind::BnAct { channels, .. } => {
                    if *channels != in_shape.c {
                        return Err(Error::shape(
                            at(),
                            format!("bn has {channels} channels, input is {in_shape}"),
                        ));
                    }
                    in_shape
                }
                LayerKind::Add { .. } => {
                    let other = src_shape(1);
                    if other != in_shape {
                        return Err(Error::shape(
                            at(),
                            format!("operand shapes differ: {in_shape} vs {other}"),
                        ));
                    }
                    in_shape
                }
                LayerKind::GlobalPool => TensorShape { h: 1, w: 1, ..in_shape },
                LayerKind::FullyConnected { c_in, c_out } => {
                    if in_shape.h != 1 || in_shape.w != 1 || in_shape.c != *c_in {
                        return Err(Error::shape(
                            at(),
                            format!("fc expects n x {c_in} x 1 x 1, got {in_shape}"),
                        ));
                    }
                    if fc_count > 1 || idx + 1 != self.layers.len() {
                        return Err(Error::shape(at(), "fully connected must be the single final layer"));
                    }
                    TensorShape::new(in_shape.n, *c_out, 1, 1)
                        .map_err(|e| Error::shape(at(), e.to_string()))?
                }
            };
            shapes.push(LayerShape {
                id: layer.id,
                block_id: layer.block_id,
                input: in_shape,
                output: out,
            });
        }
        Ok(shapes)
    }
}
