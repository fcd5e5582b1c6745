//! Grouped 2-D convolution with a fixed number of channels per group.
//!
//! Weights are laid out `[c_out][c_in / groups][k][k]`, so the filters of one
//! group are a contiguous slice. Output channel `o` belongs to group
//! `o / (c_out / groups)` and reads only that group's input channels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawConvSpec")]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub channels_per_group: usize,
    pub has_bias: bool,
}

#[derive(Deserialize)]
struct RawConvSpec {
    kernel: usize,
    stride: usize,
    padding: usize,
    c_in: usize,
    c_out: usize,
    channels_per_group: usize,
    #[serde(default)]
    has_bias: bool,
}

impl TryFrom<RawConvSpec> for ConvSpec {
    type Error = Error;

    fn try_from(r: RawConvSpec) -> Result<Self> {
        let spec = ConvSpec {
            kernel: r.kernel,
            stride: r.stride,
            padding: r.padding,
            c_in: r.c_in,
            c_out: r.c_out,
            channels_per_group: r.channels_per_group,
            has_bias: r.has_bias,
        };
        spec.check()?;
        Ok(spec)
    }
}

impl ConvSpec {
    /// Bias-free convolution with "same"-style padding `k / 2`.
    pub fn new(
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        channels_per_group: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kernel,
            stride,
            padding: kernel / 2,
            c_in,
            c_out,
            channels_per_group,
            has_bias: false,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Ungrouped convolution.
    pub fn dense(kernel: usize, stride: usize, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(kernel, stride, c_in, c_out, c_in)
    }

    /// 1x1 stride-1 dense convolution.
    pub fn pointwise(c_in: usize, c_out: usize) -> Result<Self> {
        Self::dense(1, 1, c_in, c_out)
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.channels_per_group == 0 || !self.c_in.is_multiple_of(self.channels_per_group) {
            return Err(Error::Config(format!(
                "channels per group {} does not divide c_in {}",
                self.channels_per_group, self.c_in
            )));
        }
        let groups = self.c_in / self.channels_per_group;
        if !self.c_out.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{groups} groups (c_in {} / G {}) do not divide c_out {}",
                self.c_in, self.channels_per_group, self.c_out
            )));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.c_in / self.channels_per_group
    }

    pub fn out_per_group(&self) -> usize {
        self.c_out / self.groups()
    }

    pub fn is_dense(&self) -> bool {
        self.channels_per_group == self.c_in
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.is_dense()
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.channels_per_group * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape> {
        output_shape(self, input)
    }

    fn describe(&self) -> String {
        format!(
            "conv {k}x{k}/s{s} {ci}->{co} G={g}",
            k = self.kernel,
            s = self.stride,
            ci = self.c_in,
            co = self.c_out,
            g = self.channels_per_group
        )
    }
}

/// Output geometry of a convolution: `floor((h + 2p - k) / s) + 1` per spatial axis.
pub fn output_shape(spec: &ConvSpec, input: TensorShape) -> Result<TensorShape> {
    if input.c != spec.c_in {
        return Err(Error::shape(
            spec.describe(),
            format!("input has {} channels, expected {}", input.c, spec.c_in),
        ));
    }
    let extent = |len: usize| -> Result<usize> {
        let padded = len + 2 * spec.padding;
        if padded < spec.kernel {
            return Err(Error::shape(
                spec.describe(),
                format!("padded extent {padded} smaller than kernel {}", spec.kernel),
            ));
        }
        Ok((padded - spec.kernel) / spec.stride + 1)
    };
    Ok(TensorShape {
        n: input.n,
        c: spec.c_out,
        h: extent(input.h)?,
        w: extent(input.w)?,
    })
}

/// Output index range `[lo, hi)` whose taps `ox * stride + tap - pad` land inside `[0, len)`.
fn valid_range(len: usize, out_len: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if len + pad <= tap {
        0
    } else {
        ((len - 1 + pad - tap) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

pub(crate) fn check_conv_args(
    input: &Tensor,
    weights: &[f32],
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<TensorShape> {
    spec.check()?;
    let out_shape = output_shape(spec, input.shape())?;
    if weights.len() != spec.weight_len() {
        return Err(Error::Argument(format!(
            "{} expects {} weights, got {}",
            spec.describe(),
            spec.weight_len(),
            weights.len()
        )));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.len() == spec.c_out => {}
        (true, Some(b)) => {
            return Err(Error::Argument(format!(
                "bias length {} does not match c_out {}",
                b.len(),
                spec.c_out
            )))
        }
        (true, None) => return Err(Error::Argument("spec has bias but none given".into())),
        (false, Some(_)) => {
            return Err(Error::Argument("bias given for a bias-free spec".into()))
        }
        (false, None) => {}
    }
    Ok(out_shape)
}

/// Grouped cross-correlation with zero padding.
///
/// Each output plane is produced by one task with a fixed accumulation
/// order, so results are bit-identical for any thread count.
pub fn conv2d(
    input: &Tensor,
    weights: &[f32],
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let out_shape = check_conv_args(input, weights, bias, spec)?;
    let in_shape = input.shape();
    let (k, s, pad) = (spec.kernel, spec.stride, spec.padding);
    let cpg = spec.channels_per_group;
    let out_per_group = spec.out_per_group();
    let (ih, iw) = (in_shape.h, in_shape.w);
    let (oh, ow) = (out_shape.h, out_shape.w);
    let src = input.data();

    let mut out = vec![0f32; out_shape.numel()];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let n = plane_idx / spec.c_out;
            let o = plane_idx % spec.c_out;
            let first_in = (o / out_per_group) * cpg;
            if let Some(b) = bias {
                plane.fill(b[o]);
            }
            let filters = &weights[o * cpg * k * k..(o + 1) * cpg * k * k];
            for ci in 0..cpg {
                let in_off = (n * in_shape.c + first_in + ci) * ih * iw;
                let in_plane = &src[in_off..in_off + ih * iw];
                let taps = &filters[ci * k * k..(ci + 1) * k * k];
                for ky in 0..k {
                    let (y_lo, y_hi) = valid_range(ih, oh, ky, pad, s);
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        let (x_lo, x_hi) = valid_range(iw, ow, kx, pad, s);
                        if x_lo >= x_hi {
                            continue;
                        }
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - pad;
                            let row = &in_plane[iy * iw..(iy + 1) * iw];
                            let dst = &mut plane[oy * ow + x_lo..oy * ow + x_hi];
                            let start = x_lo * s + kx - pad;
                            if s == 1 {
                                let src_row = &row[start..start + dst.len()];
                                for (d, &x) in dst.iter_mut().zip(src_row) {
                                    *d += wv * x;
                                }
                            } else {
                                for (d, &x) in dst.iter_mut().zip(row[start..].iter().step_by(s)) {
                                    *d += wv * x;
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(out_shape, out)
}
