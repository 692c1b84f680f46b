//! Binary model files.
//!
//! Layout, all little-endian: the 8 ASCII bytes `QEFLMDL1`; a `u32` count
//! `L` of layer widths; `L` `u32` widths from input to output; then every
//! parameter as an `f64` in packing order.

use std::io::{Read, Write};

use thiserror::Error;

use qefl_core::nn::{ParamVector, QennArchitecture};

pub const MAGIC: &[u8; 8] = b"QEFLMDL1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model file is truncated")]
    Truncated,
    #[error("model file has {0} trailing bytes")]
    Trailing(usize),
    #[error("model architecture: {0}")]
    Architecture(#[from] qefl_core::QeflError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(arch: &QennArchitecture, params: &ParamVector) -> Vec<u8> {
    let dims = arch.dims();
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(QennArchitecture, ParamVector), ModelFileError> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8], ModelFileError> {
        if cursor.len() < n {
            return Err(ModelFileError::Truncated);
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let n_dims = read_u32(take(4)?);
    if n_dims < 3 {
        return Err(
            qefl_core::QeflError::InvalidArchitecture(format!("{n_dims} layer widths")).into(),
        );
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u32(take(4)?));
    }
    let arch = QennArchitecture::new(dims[0], dims[1..n_dims - 1].to_vec(), dims[n_dims - 1])?;
    let mut values = Vec::with_capacity(arch.param_count());
    for _ in 0..arch.param_count() {
        let b = take(8)?;
        values.push(f64::from_le_bytes(b.try_into().expect("8 bytes")));
    }
    if !cursor.is_empty() {
        return Err(ModelFileError::Trailing(cursor.len()));
    }
    let params = ParamVector::for_arch(&arch, values)?;
    Ok((arch, params))
}

pub fn write<W: Write>(
    out: &mut W,
    arch: &QennArchitecture,
    params: &ParamVector,
) -> std::io::Result<()> {
    out.write_all(&encode(arch, params))
}

pub fn read<R: Read>(input: &mut R) -> Result<(QennArchitecture, ParamVector), ModelFileError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qefl_core::nn::init_params;

    #[test]
    fn layout_is_bit_exact() {
        let arch = QennArchitecture::new(1, vec![1], 1).unwrap();
        let params = ParamVector::new(vec![1.0, -2.0, 0.5, 0.0]);
        let bytes = encode(&arch, &params);
        assert_eq!(&bytes[..8], b"QEFLMDL1");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..24], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 4 * 8);
    }

    #[test]
    fn round_trips() {
        let arch = QennArchitecture::new(10, vec![32, 7], 2).unwrap();
        let params = init_params(&arch, 5);
        let (a, p) = decode(&encode(&arch, &params)).unwrap();
        assert_eq!(a, arch);
        assert_eq!(p, params);
    }

    #[test]
    fn rejects_corruption() {
        let arch = QennArchitecture::new(2, vec![3], 2).unwrap();
        let bytes = encode(&arch, &init_params(&arch, 1));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(ModelFileError::BadMagic)));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(ModelFileError::Truncated)
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(ModelFileError::Trailing(1))));
    }
}
