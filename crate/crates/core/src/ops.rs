//! Auxiliary inference ops: folded batch norm, ReLU, residual add, pooling, FC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorShape};

/// Inference-mode batch norm folded into a per-channel affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl BnParams {
    pub fn new(scale: Vec<f32>, shift: Vec<f32>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::Argument(format!(
                "bn scale has {} channels, shift has {}",
                scale.len(),
                shift.len()
            )));
        }
        if scale.iter().chain(&shift).any(|v| !v.is_finite()) {
            return Err(Error::Argument("bn parameters must be finite".into()));
        }
        Ok(BnParams { scale, shift })
    }

    pub fn identity(channels: usize) -> Self {
        BnParams {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// `x * scale[c] + shift[c]`, then `max(x, 0)` when `activate`.
pub fn batch_norm_act(input: &Tensor, params: &BnParams, activate: bool) -> Result<Tensor> {
    let shape = input.shape();
    if params.channels() != shape.c {
        return Err(Error::Argument(format!(
            "bn has {} channels, tensor {shape} has {}",
            params.channels(),
            shape.c
        )));
    }
    let mut out = input.clone();
    let plane = shape.plane();
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, chunk)| {
            let c = idx % shape.c;
            let (a, b) = (params.scale[c], params.shift[c]);
            for v in chunk.iter_mut() {
                let y = *v * a + b;
                *v = if activate { y.max(0.0) } else { y };
            }
        });
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "cannot add {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Mean over each `h x w` plane, producing `n x c x 1 x 1`.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let plane = shape.plane();
    let data = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64)
        .map(|m| m as f32)
        .collect();
    Tensor::from_vec(TensorShape { h: 1, w: 1, ..shape }, data).expect("pool shape")
}

/// Affine map on `n x c x 1 x 1` inputs; `weights` is row-major `[c_out][c_in]`.
pub fn fully_connected(input: &Tensor, weights: &[f32], bias: &[f32]) -> Result<Tensor> {
    let shape = input.shape();
    if shape.h != 1 || shape.w != 1 {
        return Err(Error::Argument(format!(
            "fully connected input must be n x c x 1 x 1, got {shape}"
        )));
    }
    let c_in = shape.c;
    let c_out = bias.len();
    if c_out == 0 || weights.len() != c_out * c_in {
        return Err(Error::Argument(format!(
            "fc weights must be {c_out} x {c_in}, got {} values",
            weights.len()
        )));
    }
    let mut out = Vec::with_capacity(shape.n * c_out);
    for row in input.data().chunks_exact(c_in) {
        out.extend(
            weights
                .chunks_exact(c_in)
                .zip(bias)
                .map(|(w, b)| w.iter().zip(row).map(|(a, x)| a * x).sum::<f32>() + b),
        );
    }
    Tensor::from_vec(TensorShape::new(shape.n, c_out, 1, 1)?, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::from_vec(TensorShape::new(1, c, h, w).unwrap(), data).unwrap()
    }

    #[test]
    fn bn_identity_and_relu() {
        let x = t(2, 1, 2, vec![-1.0, 2.0, 3.0, -4.0]);
        let bn = BnParams::identity(2);
        assert_eq!(batch_norm_act(&x, &bn, false).unwrap(), x);
        let y = batch_norm_act(&x, &bn, true).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn bn_affine() {
        let x = t(1, 1, 1, vec![3.0]);
        let bn = BnParams::new(vec![2.0], vec![1.0]).unwrap();
        assert_eq!(batch_norm_act(&x, &bn, false).unwrap().data(), &[7.0]);
    }

    #[test]
    fn bn_channel_mismatch() {
        let x = t(2, 1, 1, vec![0.0, 0.0]);
        assert!(matches!(
            batch_norm_act(&x, &BnParams::identity(3), true),
            Err(Error::Argument(_))
        ));
        assert!(BnParams::new(vec![1.0], vec![]).is_err());
        assert!(BnParams::new(vec![f32::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn add_cases() {
        let a = t(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let z = t(1, 2, 2, vec![0.0; 4]);
        assert_eq!(add(&a, &z).unwrap(), a);
        assert_eq!(add(&a, &a).unwrap(), a.scale(2.0));
        let b = t(1, 2, 2, vec![0.5, -2.0, 10.0, -4.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[1.5, 0.0, 13.0, 0.0]);
        assert!(add(&a, &t(4, 1, 1, vec![0.0; 4])).is_err());
    }

    #[test]
    fn pool_cases() {
        let x = Tensor::filled(TensorShape::new(2, 3, 4, 5).unwrap(), 1.5);
        let p = global_avg_pool(&x);
        assert_eq!(p.shape(), TensorShape::new(2, 3, 1, 1).unwrap());
        assert!(p.data().iter().all(|&v| v == 1.5));

        let x = t(3, 1, 1, vec![1.0, -2.0, 5.0]);
        assert_eq!(global_avg_pool(&x), x);

        let x = t(1, 7, 7, (1..=49).map(|v| v as f32).collect());
        assert_eq!(global_avg_pool(&x).data(), &[25.0]);
    }

    #[test]
    fn fc_cases() {
        let x = t(3, 1, 1, vec![1.0, 2.0, 3.0]);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(fully_connected(&x, &eye, &[0.0; 3]).unwrap(), x);
        let y = fully_connected(&x, &[0.0; 6], &[0.25, -1.0]).unwrap();
        assert_eq!(y.data(), &[0.25, -1.0]);
        // [1 0 2; -1 3 1] . [1 2 3] + [0.5, 0] = [7.5, 8]
        let w = [1.0, 0.0, 2.0, -1.0, 3.0, 1.0];
        let y = fully_connected(&x, &w, &[0.5, 0.0]).unwrap();
        assert_eq!(y.data(), &[7.5, 8.0]);
        assert_eq!(y.shape(), TensorShape::new(1, 2, 1, 1).unwrap());
    }

    #[test]
    fn fc_rejects_spatial() {
        let x = t(1, 2, 1, vec![1.0, 2.0]);
        assert!(matches!(
            fully_connected(&x, &[1.0], &[0.0]),
            Err(Error::Argument(_))
        ));
        let x = t(2, 1, 1, vec![1.0, 2.0]);
        assert!(fully_connected(&x, &[1.0; 3], &[0.0, 0.0]).is_err());
    }
}
