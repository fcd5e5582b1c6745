//! Weight-residency scheduling.
//!
//! Layers are packed left to right into fused groups whose weights are held
//! on chip together. Feature maps cost off-chip traffic only where they cross
//! a group boundary: a tensor is written once by its producing group when any
//! later group (or the network output) needs it, and read once by every other
//! group that consumes it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost::{intensity, kind_params};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::tensor::TensorShape;

/// Budget value that never forces a group boundary.
pub const UNLIMITED: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HwConfig {
    pub weight_budget_bytes: u64,
    pub bytes_per_element: u64,
}

impl HwConfig {
    pub fn new(weight_budget_bytes: u64, bytes_per_element: u64) -> Result<Self> {
        if ![1, 2, 4].contains(&bytes_per_element) {
            return Err(Error::Config(format!(
                "bytes per element must be 1, 2 or 4, got {bytes_per_element}"
            )));
        }
        Ok(HwConfig {
            weight_budget_bytes,
            bytes_per_element,
        })
    }

    /// 32-bit elements with the given weight budget.
    pub fn f32(weight_budget_bytes: u64) -> Self {
        HwConfig {
            weight_budget_bytes,
            bytes_per_element: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedGroup {
    pub first_layer: usize,
    /// Inclusive.
    pub last_layer: usize,
    pub weight_bytes: u64,
    pub in_traffic_bytes: u64,
    pub out_traffic_bytes: u64,
    pub peak_intermediate_feature_bytes: u64,
    /// Max over min conv intensity inside the group; 1.0 with fewer than two convs.
    pub intensity_ratio: f64,
    pub spill: bool,
}

impl FusedGroup {
    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.first_layer..=self.last_layer
    }

    pub fn traffic_bytes(&self) -> u64 {
        self.in_traffic_bytes + self.out_traffic_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub network: String,
    pub hw: HwConfig,
    pub groups: Vec<FusedGroup>,
    pub total_offchip_traffic_bytes: u64,
    pub worst_intensity_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub ratios: Vec<f64>,
    pub worst: f64,
}

/// Contiguous layer ranges chosen by greedy packing. The second field marks spills.
fn pack(weights: &[u64], budget: u64) -> Vec<(usize, usize, bool)> {
    let mut groups: Vec<(usize, usize, bool)> = Vec::new();
    let mut acc = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        match groups.last_mut() {
            Some((_, last, false)) if acc.checked_add(w).is_some_and(|t| t <= budget) => {
                *last = i;
                acc += w;
            }
            _ => {
                groups.push((i, i, w > budget));
                acc = w;
            }
        }
    }
    groups
}

pub fn plan_schedule(net: &NetworkGraph, hw: HwConfig, input: TensorShape) -> Result<SchedulePlan> {
    if net.layers.is_empty() {
        return Err(Error::Argument("cannot schedule an empty network".into()));
    }
    HwConfig::new(hw.weight_budget_bytes, hw.bytes_per_element)?;
    let shapes = net.infer_shapes(input)?;
    let bpe = hw.bytes_per_element;
    let consumers = net.consumers();
    let n_layers = net.layers.len();

    let out_bytes: Vec<u64> = shapes.iter().map(|s| s.output.numel() as u64 * bpe).collect();
    let input_bytes = input.numel() as u64 * bpe;
    let weight_bytes: Vec<u64> = net.layers.iter().map(|l| kind_params(&l.kind) * bpe).collect();
    let conv_intensity: Vec<Option<f64>> = net
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| l.kind.conv().map(|spec| intensity(spec, s.input, s.output)))
        .collect();

    let mut groups = Vec::new();
    for (first, last, spill) in pack(&weight_bytes, hw.weight_budget_bytes) {
        let inside = |id: usize| (first..=last).contains(&id);

        // `None` is the network input.
        let external: BTreeSet<Option<usize>> = net.layers[first..=last]
            .iter()
            .flat_map(|l| {
                if l.inputs.is_empty() {
                    vec![None]
                } else {
                    l.inputs.iter().filter(|&&i| !inside(i)).map(|&i| Some(i)).collect()
                }
            })
            .collect();
        let in_traffic: u64 = external
            .iter()
            .map(|src| src.map_or(input_bytes, |i| out_bytes[i]))
            .sum();

        let out_traffic: u64 = (first..=last)
            .filter(|&id| {
                consumers[id].is_empty() || consumers[id].iter().any(|&c| c > last)
            })
            .map(|id| out_bytes[id])
            .sum();

        // live set of tensors produced in this group, step by step
        let mut peak = 0u64;
        for step in first..=last {
            let live: u64 = (first..=step)
                .filter(|&id| id == step || consumers[id].iter().any(|&c| c > step && inside(c)))
                .map(|id| out_bytes[id])
                .sum();
            peak = peak.max(live);
        }

        let ints: Vec<f64> = conv_intensity[first..=last].iter().flatten().copied().collect();
        let intensity_ratio = ratio(&ints);

        groups.push(FusedGroup {
            first_layer: first,
            last_layer: last,
            weight_bytes: weight_bytes[first..=last].iter().sum(),
            in_traffic_bytes: in_traffic,
            out_traffic_bytes: out_traffic,
            peak_intermediate_feature_bytes: peak,
            intensity_ratio,
            spill,
        });
    }
    debug_assert_eq!(groups.last().map(|g: &FusedGroup| g.last_layer + 1), Some(n_layers));

    Ok(SchedulePlan {
        network: net.name.clone(),
        hw,
        total_offchip_traffic_bytes: groups.iter().map(FusedGroup::traffic_bytes).sum(),
        worst_intensity_ratio: groups.iter().map(|g| g.intensity_ratio).fold(1.0, f64::max),
        groups,
    })
}

fn ratio(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `(unfused - fused) / unfused`, where unfused is the zero-budget plan.
pub fn traffic_reduction(net: &NetworkGraph, hw: HwConfig, input: TensorShape) -> Result<f64> {
    let fused = plan_schedule(net, hw, input)?;
    let unfused = plan_schedule(net, HwConfig { weight_budget_bytes: 0, ..hw }, input)?;
    let u = unfused.total_offchip_traffic_bytes as f64;
    Ok((u - fused.total_offchip_traffic_bytes as f64) / u)
}

pub fn balance_report(plan: &SchedulePlan) -> BalanceReport {
    let ratios: Vec<f64> = plan.groups.iter().map(|g| g.intensity_ratio).collect();
    let worst = ratios.iter().copied().fold(1.0, f64::max);
    BalanceReport { ratios, worst }
}

fn kib(bytes: u64) -> String {
    format!("{:.1} KiB", bytes as f64 / 1024.0)
}

impl SchedulePlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// One line per group.
    pub fn render_text(&self, net: &NetworkGraph) -> String {
        let mut out = String::new();
        let budget = if self.hw.weight_budget_bytes == UNLIMITED {
            "unlimited".to_string()
        } else {
            kib(self.hw.weight_budget_bytes)
        };
        let _ = writeln!(
            out,
            "{}: {} groups, budget {budget}, off-chip traffic {}, worst intensity ratio {:.2}",
            self.network,
            self.groups.len(),
            kib(self.total_offchip_traffic_bytes),
            self.worst_intensity_ratio
        );
        for (i, g) in self.groups.iter().enumerate() {
            let convs = net.layers[g.first_layer..=g.last_layer]
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::Conv(_)))
                .count();
            let _ = writeln!(
                out,
                "group {i:>4}  layers {:>4}..={:<4} convs {convs:>2}  weights {:>11}  in {:>11}  out {:>11}  peak {:>11}  ratio {:>6.2}{}",
                g.first_layer,
                g.last_layer,
                kib(g.weight_bytes),
                kib(g.in_traffic_bytes),
                kib(g.out_traffic_bytes),
                kib(g.peak_intermediate_feature_bytes),
                g.intensity_ratio,
                if g.spill { "  spill" } else { "" }
            );
        }
        out
    }
}
