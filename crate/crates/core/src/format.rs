//! BOATT: a minimal binary tensor container.
//!
//! ```text
//! "BOAT"            4 bytes magic
//! version  u32 LE   currently 1
//! dtype    u8       0 = f32, 1 = f64
//! ndim     u8
//! extents  ndim × u32 LE
//! payload  row-major LE scalars, exactly prod(extents) × dtype size bytes
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"BOAT";
pub const VERSION: u32 = 1;
const HEADER_FIXED: usize = 10;

/// A tensor of either supported dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn dtype(&self) -> DType {
        match self {
            DynTensor::F32(_) => DType::F32,
            DynTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t.clone(),
        }
    }

    /// Values as f32 (narrowing f64 input).
    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            DynTensor::F32(t) => t.clone(),
            DynTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for DynTensor {
    fn from(t: Tensor<f32>) -> Self {
        DynTensor::F32(t)
    }
}

impl From<Tensor<f64>> for DynTensor {
    fn from(t: Tensor<f64>) -> Self {
        DynTensor::F64(t)
    }
}

pub fn encode(t: &DynTensor) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.is_empty() || shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("cannot store a tensor of rank {}", shape.len())));
    }
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(HEADER_FIXED + 4 * shape.len() + count * t.dtype().size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match t.dtype() {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    out.push(shape.len() as u8);
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    match t {
        DynTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DynTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DynTensor> {
    let bad = |m: String| Err(Error::Format(m));
    if bytes.len() < HEADER_FIXED {
        return bad(format!("header truncated at {} bytes", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return bad("magic is not \"BOAT\"".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return bad(format!("unsupported version {version}"));
    }
    let dtype = match bytes[8] {
        0 => DType::F32,
        1 => DType::F64,
        code => return bad(format!("unknown dtype code {code}")),
    };
    let ndim = bytes[9] as usize;
    if ndim == 0 {
        return bad("rank 0 is not supported".into());
    }
    let header = HEADER_FIXED + 4 * ndim;
    if bytes.len() < header {
        return bad(format!("header declares {ndim} extents but the file ends early"));
    }
    let shape: Vec<usize> = bytes[HEADER_FIXED..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let payload = &bytes[header..];
    let want = count.checked_mul(dtype.size()).ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if payload.len() != want {
        return bad(format!("payload length {} != product(extents) {count} × {} bytes", payload.len(), dtype.size()));
    }
    let wrap = |e: Error| Error::Format(e.to_string());
    Ok(match dtype {
        DType::F32 => {
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            DynTensor::F32(Tensor::new(shape, data).map_err(wrap)?)
        }
        DType::F64 => {
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            DynTensor::F64(Tensor::new(shape, data).map_err(wrap)?)
        }
    })
}

pub fn write_to(mut w: impl Write, t: &DynTensor) -> Result<()> {
    w.write_all(&encode(t)?)?;
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<DynTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(path: impl AsRef<Path>, t: &DynTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io_at(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<DynTensor> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io_at(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    #[test]
    fn known_bytes() {
        let t = DynTensor::F32(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap());
        let b = encode(&t).unwrap();
        assert_eq!(&b[..10], b"BOAT\x01\x00\x00\x00\x00\x02");
        assert_eq!(&b[10..18], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[18..], [1.0f32.to_le_bytes(), (-2.0f32).to_le_bytes()].concat());
    }

    #[test]
    fn rejects_malformed() {
        let t = DynTensor::F64(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let good = encode(&t).unwrap();
        let mut cases = vec![good[..good.len() - 1].to_vec(), [good.clone(), vec![0]].concat(), good[..6].to_vec()];
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        let mut bad_dtype = good.clone();
        bad_dtype[8] = 7;
        cases.extend([bad_magic, bad_version, bad_dtype]);
        for c in cases {
            assert!(matches!(decode(&c), Err(Error::Format(_))));
        }
        let mut nan = good.clone();
        nan[14..22].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_bit_identical(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let t64 = Tensor::from_fn(&dims, |_| r.normal() * 1e3);
            let t32: Tensor<f32> = t64.cast();
            for t in [DynTensor::F64(t64), DynTensor::F32(t32)] {
                let bytes = encode(&t).unwrap();
                let back = decode(&bytes).unwrap();
                prop_assert_eq!(encode(&back).unwrap(), bytes);
                prop_assert_eq!(back, t);
            }
        }
    }
}
