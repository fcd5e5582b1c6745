//! Dense NCHW tensors and the `VGT1` on-disk format.
//!
//! A `VGT1` record is the 4-byte magic `VGT1`, a little-endian `u32` rank
//! (always 4), four little-endian `u32` dims `(n, c, h, w)` and then
//! `n*c*h*w` little-endian IEEE-754 `f32` values.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VGT1_MAGIC: &[u8; 4] = b"VGT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let shape = TensorShape { n, c, h, w };
        shape.check()?;
        Ok(shape)
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Argument(format!(
                "tensor dims must all be >= 1, got {self}"
            )));
        }
        [self.c, self.h, self.w]
            .iter()
            .try_fold(self.n, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Argument(format!("tensor {self} is too large to address")))?;
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements of a single batch item.
    pub fn item_numel(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: TensorShape, data: Vec<f32>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(Error::Argument(format!(
                "tensor {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: TensorShape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn scale(&self, alpha: f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Byte image of this tensor as a `VGT1` record.
    pub fn to_vgt1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(VGT1_MAGIC);
        out.extend_from_slice(&4u32.to_le_bytes());
        let s = self.shape;
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_vgt1<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(&self.to_vgt1_bytes())?;
        Ok(())
    }

    /// Reads exactly one record. Returns `Ok(None)` on a clean end of stream.
    pub fn read_vgt1<R: Read>(mut reader: R) -> Result<Option<Tensor>> {
        let mut magic = [0u8; 4];
        let got = read_up_to(&mut reader, &mut magic)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 || &magic != VGT1_MAGIC {
            return Err(Error::Format("missing VGT1 magic".into()));
        }
        let rank = read_u32(&mut reader)?;
        if rank != 4 {
            return Err(Error::Format(format!("VGT1 rank must be 4, got {rank}")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = read_u32(&mut reader)? as usize;
        }
        let shape = TensorShape {
            n: dims[0],
            c: dims[1],
            h: dims[2],
            w: dims[3],
        };
        shape
            .check()
            .map_err(|e| Error::Format(format!("bad VGT1 header: {e}")))?;
        let mut raw = vec![0u8; shape.numel() * 4];
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated VGT1 payload for {shape}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Some(Tensor { shape, data }))
    }

    /// Reads every record in a concatenated `VGT1` stream.
    pub fn read_all_vgt1<R: Read>(mut reader: R) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        while let Some(t) = Tensor::read_vgt1(&mut reader)? {
            out.push(t);
        }
        Ok(out)
    }
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    reader
        .read_exact(&mut b)
        .map_err(|_| Error::Format("truncated VGT1 header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Checksum of a tensor's little-endian value bytes.
pub fn checksum(t: &Tensor) -> u64 {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_dim_rejected() {
        assert!(TensorShape::new(1, 0, 2, 2).is_err());
        assert!(Tensor::from_vec(TensorShape::new(1, 1, 2, 2).unwrap(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(TensorShape::new(1, 2, 1, 1).unwrap(), vec![1.0, -2.0]).unwrap();
        let b = t.to_vgt1_bytes();
        assert_eq!(&b[..4], b"VGT1");
        assert_eq!(&b[4..8], &[4, 0, 0, 0]);
        assert_eq!(&b[8..24], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn malformed_records() {
        assert!(matches!(
            Tensor::read_vgt1(&b"VGT2\x04\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let mut b = Tensor::zeros(TensorShape::new(1, 1, 2, 2).unwrap()).to_vgt1_bytes();
        b.truncate(b.len() - 1);
        assert!(matches!(Tensor::read_vgt1(&b[..]), Err(Error::Format(_))));
        let mut b = Tensor::zeros(TensorShape::new(1, 1, 1, 1).unwrap()).to_vgt1_bytes();
        b[4] = 3;
        assert!(matches!(Tensor::read_vgt1(&b[..]), Err(Error::Format(_))));
        assert!(Tensor::read_vgt1(&b""[..]).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn vgt1_stream_roundtrip(
            dims in (1usize..3, 1usize..4, 1usize..5, 1usize..5),
            count in 1usize..4,
            seed in any::<u32>(),
        ) {
            let shape = TensorShape::new(dims.0, dims.1, dims.2, dims.3).unwrap();
            let tensors: Vec<Tensor> = (0..count)
                .map(|k| {
                    let data = (0..shape.numel())
                        .map(|i| ((i as u32 ^ seed).wrapping_mul(2654435761) as f32) / 1e9 - k as f32)
                        .collect();
                    Tensor::from_vec(shape, data).unwrap()
                })
                .collect();
            let mut buf = Vec::new();
            for t in &tensors {
                t.write_vgt1(&mut buf).unwrap();
            }
            let back = Tensor::read_all_vgt1(&buf[..]).unwrap();
            prop_assert_eq!(back, tensors);
        }
    }
}
