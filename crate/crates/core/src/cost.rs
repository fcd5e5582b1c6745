//! Analytic MAdds / parameter / intensity accounting.
//!
//! One multiply-accumulate counts as one MAdd. Batch norm, activation,
//! residual add and pooling cost no MAdds. Computational intensity is a
//! layer's MAdds divided by the element count of its input feature map.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::Result;
use crate::graph::{LayerKind, NetworkGraph};
use crate::tensor::TensorShape;

/// `k^2 * out.h * out.w * c_in * c_out / groups` per batch item, plus one add per
/// output element when the layer carries a bias.
pub fn layer_madds(spec: &ConvSpec, out_shape: TensorShape) -> u64 {
    let k2 = (spec.kernel * spec.kernel) as u64;
    let per_item = k2
        * out_shape.plane() as u64
        * (spec.c_in * spec.c_out / spec.groups()) as u64;
    let bias = if spec.has_bias { out_shape.item_numel() as u64 } else { 0 };
    (per_item + bias) * out_shape.n as u64
}

pub fn layer_params(spec: &ConvSpec) -> u64 {
    let bias = if spec.has_bias { spec.c_out } else { 0 };
    (spec.weight_len() + bias) as u64
}

/// MAdds over input feature elements; the batch dimension cancels.
pub fn intensity(spec: &ConvSpec, in_shape: TensorShape, out_shape: TensorShape) -> f64 {
    layer_madds(spec, out_shape) as f64 / in_shape.numel() as f64
}

/// Stored parameter count of any layer kind. BN carries scale and shift.
pub fn kind_params(kind: &LayerKind) -> u64 {
    match kind {
        LayerKind::Conv(spec) => layer_params(spec),
        LayerKind::BnAct { channels, .. } => 2 * *channels as u64,
        LayerKind::FullyConnected { c_in, c_out } => (c_in * c_out + c_out) as u64,
        LayerKind::Add { .. } | LayerKind::GlobalPool => 0,
    }
}

/// MAdds of any layer kind for the given output shape.
pub fn kind_madds(kind: &LayerKind, out_shape: TensorShape) -> u64 {
    match kind {
        LayerKind::Conv(spec) => layer_madds(spec, out_shape),
        LayerKind::FullyConnected { c_in, c_out } => (c_in * c_out * out_shape.n) as u64,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_id: usize,
    pub block_id: usize,
    pub kind: String,
    pub madds: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub in_feature_elems: u64,
    pub out_feature_elems: u64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub scale: f64,
    pub channels_per_group: usize,
    pub layers: Vec<LayerCost>,
    pub total_madds: u64,
    pub total_params: u64,
    /// Widest block output, excluding intra-block expansion, the tail conv and the classifier.
    pub max_stage_channels: usize,
    /// Largest input-plus-output feature footprint of any single layer.
    pub peak_feature_bytes: u64,
}

pub const F32_BYTES: u64 = 4;

pub fn summarize(net: &NetworkGraph, input: TensorShape) -> Result<CostReport> {
    summarize_with(net, input, F32_BYTES)
}

pub fn summarize_with(
    net: &NetworkGraph,
    input: TensorShape,
    bytes_per_element: u64,
) -> Result<CostReport> {
    let shapes = net.infer_shapes(input)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (layer, shape) in net.layers.iter().zip(&shapes) {
        let sources: BTreeSet<Option<usize>> = if layer.inputs.is_empty() {
            [None].into()
        } else {
            layer.inputs.iter().map(|&i| Some(i)).collect()
        };
        let in_elems: u64 = sources
            .iter()
            .map(|s| s.map_or(input, |i| shapes[i].output).numel() as u64)
            .sum();
        let madds = kind_madds(&layer.kind, shape.output);
        let params = kind_params(&layer.kind);
        layers.push(LayerCost {
            layer_id: layer.id,
            block_id: layer.block_id,
            kind: layer.kind.name().to_string(),
            madds,
            params,
            weight_bytes: params * bytes_per_element,
            in_feature_elems: in_elems,
            out_feature_elems: shape.output.numel() as u64,
            intensity: madds as f64 / in_elems as f64,
        });
    }
    let max_stage_channels = net
        .blocks
        .iter()
        .filter(|b| b.kind.is_stage())
        .map(|b| b.c_out)
        .max()
        .unwrap_or(0);
    let peak_feature_bytes = layers
        .iter()
        .map(|l| (l.in_feature_elems + l.out_feature_elems) * bytes_per_element)
        .max()
        .unwrap_or(0);
    Ok(CostReport {
        name: net.name.clone(),
        scale: net.scale,
        channels_per_group: net.channels_per_group,
        total_madds: layers.iter().map(|l| l.madds).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
        max_stage_channels,
        peak_feature_bytes,
    })
}

/// `5.33M`, `590M`, `1.17G` style rendering.
pub fn human_count(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        if v >= 1e8 {
            format!("{:.0}M", v / 1e6)
        } else {
            format!("{:.2}M", v / 1e6)
        }
    } else if v >= 1e3 {
        format!("{:.1}K", v / 1e3)
    } else {
        format!("{v}")
    }
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-layer CSV with the fixed column set.
    pub fn to_csv(&self, net: &NetworkGraph) -> String {
        let mut out =
            String::from("layer_id,block_id,kind,k,stride,c_in,c_out,groups,madds,params,intensity\n");
        for (cost, layer) in self.layers.iter().zip(&net.layers) {
            let (k, stride, c_in, c_out, groups) = match &layer.kind {
                LayerKind::Conv(s) => (
                    s.kernel.to_string(),
                    s.stride.to_string(),
                    s.c_in.to_string(),
                    s.c_out.to_string(),
                    s.groups().to_string(),
                ),
                LayerKind::FullyConnected { c_in, c_out } => (
                    String::new(),
                    String::new(),
                    c_in.to_string(),
                    c_out.to_string(),
                    String::new(),
                ),
                _ => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{k},{stride},{c_in},{c_out},{groups},{},{},{:.6}",
                cost.layer_id, cost.block_id, cost.kind, cost.madds, cost.params, cost.intensity
            );
        }
        out
    }
}

/// Aligned table with one row per report: Scale, Params, MAdds, Max Channels.
pub fn render_table(reports: &[CostReport]) -> String {
    let header = ["Network", "Scale", "G", "Params", "MAdds", "Max Channels"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                format!("{}", r.scale),
                r.channels_per_group.to_string(),
                human_count(r.total_params),
                human_count(r.total_madds),
                r.max_stage_channels.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header, &mut out);
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&cells, &mut out);
    }
    out
}
