//! Brute-force reference implementations.
//!
//! Everything here is written for obviousness: direct loops, 64-bit
//! accumulation, no shared code with the optimized kernels beyond argument
//! checking. The convolution also counts every scalar multiply it performs.

use crate::conv::{check_conv_args, ConvSpec};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::tensor::{Tensor, TensorShape};
use crate::weights::{LayerParams, Weights};

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedResult {
    pub output: Tensor,
    pub multiply_count: u64,
}

pub fn conv2d_naive(
    input: &Tensor,
    weights: &[f32],
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<InstrumentedResult> {
    let out_shape = check_conv_args(input, weights, bias, spec)?;
    let ins = input.shape();
    let k = spec.kernel as isize;
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    let groups = spec.c_in / spec.channels_per_group;
    let in_per_group = spec.channels_per_group;
    let out_per_group = spec.c_out / groups;

    let mut out = vec![0f32; out_shape.numel()];
    let mut multiplies = 0u64;
    for n in 0..out_shape.n {
        for g in 0..groups {
            for og in 0..out_per_group {
                let o = g * out_per_group + og;
                for y in 0..out_shape.h {
                    for x in 0..out_shape.w {
                        let mut acc = bias.map_or(0.0, |b| f64::from(b[o]));
                        for ig in 0..in_per_group {
                            let c = g * in_per_group + ig;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = y as isize * stride + ky - pad;
                                    let ix = x as isize * stride + kx - pad;
                                    let value = if iy < 0
                                        || ix < 0
                                        || iy >= ins.h as isize
                                        || ix >= ins.w as isize
                                    {
                                        0.0
                                    } else {
                                        f64::from(input.at(n, c, iy as usize, ix as usize))
                                    };
                                    let w_idx = ((o * in_per_group + ig) * spec.kernel
                                        + ky as usize)
                                        * spec.kernel
                                        + kx as usize;
                                    acc += f64::from(weights[w_idx]) * value;
                                    multiplies += 1;
                                }
                            }
                        }
                        let idx = ((n * out_shape.c + o) * out_shape.h + y) * out_shape.w + x;
                        out[idx] = acc as f32;
                    }
                }
            }
        }
    }
    Ok(InstrumentedResult {
        output: Tensor::from_vec(out_shape, out)?,
        multiply_count: multiplies,
    })
}

fn bn_naive(x: &Tensor, scale: &[f32], shift: &[f32], activate: bool) -> Result<Tensor> {
    let s = x.shape();
    if scale.len() != s.c {
        return Err(Error::Argument("bn channel mismatch".into()));
    }
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    let v = f64::from(x.at(n, c, h, w)) * f64::from(scale[c]) + f64::from(shift[c]);
                    out.push(if activate && v < 0.0 { 0.0 } else { v as f32 });
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}

fn pool_naive(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0f64;
            for h in 0..s.h {
                for w in 0..s.w {
                    acc += f64::from(x.at(n, c, h, w));
                }
            }
            out.push((acc / (s.h * s.w) as f64) as f32);
        }
    }
    Tensor::from_vec(TensorShape { h: 1, w: 1, ..s }, out).expect("pool shape")
}

fn fc_naive(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    c_in: usize,
    c_out: usize,
) -> Result<(Tensor, u64)> {
    let s = x.shape();
    if s.c != c_in || s.h != 1 || s.w != 1 {
        return Err(Error::Argument("fc input mismatch".into()));
    }
    let mut out = Vec::new();
    let mut multiplies = 0u64;
    for n in 0..s.n {
        for o in 0..c_out {
            let mut acc = f64::from(bias[o]);
            for i in 0..c_in {
                acc += f64::from(weight[o * c_in + i]) * f64::from(x.at(n, i, 0, 0));
                multiplies += 1;
            }
            out.push(acc as f32);
        }
    }
    Ok((Tensor::from_vec(TensorShape::new(s.n, c_out, 1, 1)?, out)?, multiplies))
}

/// Executes the graph layer by layer with the reference kernels.
pub fn run_graph_naive(net: &NetworkGraph, input: &Tensor, weights: &Weights) -> Result<Tensor> {
    run_graph_counted(net, input, weights).map(|(out, _)| out)
}

/// Like [`run_graph_naive`], also returning the multiplies performed by each
/// layer (convolutions and the classifier; zero elsewhere).
pub fn run_graph_counted(
    net: &NetworkGraph,
    input: &Tensor,
    weights: &Weights,
) -> Result<(Tensor, Vec<u64>)> {
    net.infer_shapes(input.shape())?;
    weights.check(net)?;
    let mut values: Vec<Tensor> = Vec::with_capacity(net.layers.len());
    let mut counts = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mut count = 0;
        let arg = |k: usize| -> &Tensor { layer.inputs.get(k).map_or(input, |&i| &values[i]) };
        let params = weights.layer(layer.id).expect("checked");
        let out = match (&layer.kind, params) {
            (LayerKind::Conv(spec), LayerParams::Conv { weight, bias }) => {
                let r = conv2d_naive(arg(0), weight, bias.as_deref(), spec)?;
                count = r.multiply_count;
                r.output
            }
            (LayerKind::BnAct { activate, .. }, LayerParams::Bn(bn)) => {
                bn_naive(arg(0), &bn.scale, &bn.shift, *activate)?
            }
            (LayerKind::Add { relu }, _) => {
                let (a, b) = (arg(0), arg(1));
                if a.shape() != b.shape() {
                    return Err(Error::Argument("add shape mismatch".into()));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| {
                        let v = x + y;
                        if *relu && v < 0.0 {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect();
                Tensor::from_vec(a.shape(), data)?
            }
            (LayerKind::GlobalPool, _) => pool_naive(arg(0)),
            (LayerKind::FullyConnected { c_in, c_out }, LayerParams::Fc { weight, bias }) => {
                let (out, m) = fc_naive(arg(0), weight, bias, *c_in, *c_out)?;
                count = m;
                out
            }
            _ => unreachable!("weights checked against layer kinds"),
        };
        values.push(out);
        counts.push(count);
    }
    Ok((values.pop().expect("non-empty network"), counts))
}

/// `||a - b||_F / ||b||_F`, or the absolute norm when `b` is all zero.
pub fn rel_frobenius(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| f64::from(*y).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{GraphBuilder, Src};
    use crate::cost::layer_madds;
    use crate::graph::BlockKind;
    use crate::testutil::seeded_vec;

    #[test]
    fn identity_passthrough_counts() {
        let spec = ConvSpec::pointwise(1, 1).unwrap();
        let x = Tensor::from_vec(TensorShape::new(1, 1, 2, 3).unwrap(), seeded_vec(1, 6)).unwrap();
        let r = conv2d_naive(&x, &[1.0], None, &spec).unwrap();
        assert_eq!(r.output, x);
        assert_eq!(r.multiply_count, 6);
    }

    #[test]
    fn hand_computed_3x3() {
        // 3x3 input 1..9, all-ones kernel, padding 1: each output is its neighbourhood sum
        let spec = ConvSpec::dense(3, 1, 1, 1).unwrap();
        let x = Tensor::from_vec(TensorShape::new(1, 1, 3, 3).unwrap(), (1..=9).map(|v| v as f32).collect())
            .unwrap();
        let r = conv2d_naive(&x, &[1.0; 9], None, &spec).unwrap();
        assert_eq!(r.output.data(), &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
        // stride 2 keeps the corners
        let spec = ConvSpec::dense(3, 2, 1, 1).unwrap();
        let r = conv2d_naive(&x, &[1.0; 9], None, &spec).unwrap();
        assert_eq!(r.output.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn multiply_count_is_analytic() {
        for (k, s, c_in, c_out, g, h) in [(3, 1, 8, 16, 4, 5), (3, 2, 6, 6, 1, 7), (1, 1, 4, 8, 4, 3)] {
            let spec = ConvSpec::new(k, s, c_in, c_out, g).unwrap();
            let shape = TensorShape::new(2, c_in, h, h).unwrap();
            let x = Tensor::from_vec(shape, seeded_vec(9, shape.numel())).unwrap();
            let r = conv2d_naive(&x, &seeded_vec(3, spec.weight_len()), None, &spec).unwrap();
            assert_eq!(r.multiply_count, layer_madds(&spec, r.output.shape()));
        }
    }

    #[test]
    fn single_conv_graph_equals_kernel() {
        let mut b = GraphBuilder::new();
        b.begin_block(BlockKind::Stem, 3, 8, 3);
        b.conv(Src::Input, 3, 2, 3, 8, 3).unwrap();
        let net = b.finish("conv1", 1.0, 3, 0, TensorShape::new(1, 3, 9, 9).unwrap());
        let w = Weights::random(&net, 11);
        let x = Tensor::from_vec(net.input, seeded_vec(2, net.input.numel())).unwrap();
        let out = run_graph_naive(&net, &x, &w).unwrap();
        let LayerParams::Conv { weight, .. } = w.layer(0).unwrap() else { panic!() };
        let spec = net.layers[0].kind.conv().unwrap();
        assert_eq!(out, conv2d_naive(&x, weight, None, spec).unwrap().output);
    }

    #[test]
    fn rel_frobenius_basics() {
        assert_eq!(rel_frobenius(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rel_frobenius(&[3.0, 0.0], &[0.0, 4.0]) - 1.25).abs() < 1e-12);
        assert_eq!(rel_frobenius(&[0.5], &[0.0]), 0.5);
    }
}
