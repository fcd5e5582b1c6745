//! Variable group convolution networks.
//!
//! Grouped convolutions here fix the number of channels per group (`G`) and
//! let the group count follow the layer width. The crate provides the
//! convolution kernel family and auxiliary inference ops, builders for the
//! v1 and v2 network families, an analytic cost model (MAdds, parameters,
//! computational intensity), a weight-residency scheduler that models fused
//! on-chip execution, and brute-force reference implementations.

pub mod builder;
pub mod conv;
pub mod cost;
pub mod error;
pub mod exec;
pub mod graph;
pub mod ops;
pub mod oracle;
pub mod schedule;
pub mod tensor;
pub mod weights;

#[cfg(test)]
pub(crate) mod testutil;

pub use builder::{build, build_vargnet_v1, build_vargnet_v2, BuildOptions, GraphBuilder, Src, Version};
pub use conv::{conv2d, output_shape, ConvSpec};
pub use cost::{intensity, layer_madds, layer_params, summarize, CostReport, LayerCost};
pub use error::{Error, Result};
pub use exec::run_graph;
pub use graph::{BlockInfo, BlockKind, Layer, LayerKind, LayerShape, NetworkGraph};
pub use ops::{add, batch_norm_act, fully_connected, global_avg_pool, BnParams};
pub use oracle::{conv2d_naive, run_graph_counted, run_graph_naive, InstrumentedResult};
pub use schedule::{balance_report, plan_schedule, traffic_reduction, FusedGroup, HwConfig, SchedulePlan};
pub use tensor::{checksum, Tensor, TensorShape};
pub use weights::{LayerParams, Weights};
