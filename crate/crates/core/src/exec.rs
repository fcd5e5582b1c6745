use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::ops::{add, batch_norm_act, fully_connected, global_avg_pool, relu};
use crate::tensor::Tensor;
use crate::weights::{LayerParams, Weights};

/// Executes every layer in order with the optimized kernels and returns the
/// last layer's output. Intermediate tensors are dropped after their last use.
pub fn run_graph(net: &NetworkGraph, input: &Tensor, weights: &Weights) -> Result<Tensor> {
    net.infer_shapes(input.shape())?;
    weights.check(net)?;
    let consumers = net.consumers();
    let last_use: Vec<usize> = consumers
        .iter()
        .enumerate()
        .map(|(id, c)| c.iter().copied().max().unwrap_or(id))
        .collect();

    let mut values: Vec<Option<Tensor>> = vec![None; net.layers.len()];
    for layer in &net.layers {
        let arg = |k: usize| -> Result<&Tensor> {
            match layer.inputs.get(k) {
                None => Ok(input),
                Some(&src) => values[src]
                    .as_ref()
                    .ok_or_else(|| Error::Argument(format!("layer {src} output already released"))),
            }
        };
        let params = weights.layer(layer.id).expect("checked");
        let out = match (&layer.kind, params) {
            (LayerKind::Conv(spec), LayerParams::Conv { weight, bias }) => {
                conv2d(arg(0)?, weight, bias.as_deref(), spec)?
            }
            (LayerKind::BnAct { activate, .. }, LayerParams::Bn(bn)) => {
                batch_norm_act(arg(0)?, bn, *activate)?
            }
            (LayerKind::Add { relu: act }, _) => {
                let sum = add(arg(0)?, arg(1)?)?;
                if *act {
                    relu(&sum)
                } else {
                    sum
                }
            }
            (LayerKind::GlobalPool, _) => global_avg_pool(arg(0)?),
            (LayerKind::FullyConnected { .. }, LayerParams::Fc { weight, bias }) => {
                fully_connected(arg(0)?, weight, bias)?
            }
            _ => unreachable!("weights checked against layer kinds"),
        };
        for &src in &layer.inputs {
            if last_use[src] == layer.id {
                values[src] = None;
            }
        }
        values[layer.id] = Some(out);
    }
    Ok(values.pop().flatten().expect("last layer produced output"))
}
