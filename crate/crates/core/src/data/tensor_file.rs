//! `HFT1` tensor files.
//!
//! ```text
//! 4 bytes  magic "HFT1"
//! u32 LE   version (1)
//! u32 LE   I1, I2, I3
//! f32 LE   I1*I2*I3 values, last index fastest
//! ```

use std::fs;
use std::path::Path;

use super::DataError;
use crate::tensor::Tensor3;

const MAGIC: &[u8; 4] = b"HFT1";
const VERSION: u32 = 1;

pub fn tensor_bytes(t: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_tensor_bytes(bytes: &[u8], path: &str) -> Result<Tensor3, DataError> {
    let bad = |reason: &str| DataError::TensorFormat { path: path.to_string(), reason: reason.to_string() };
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing HFT1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(bad(&format!("unsupported version {}", word(4))));
    }
    let dims = [word(8) as usize, word(12) as usize, word(16) as usize];
    let n: usize = dims.iter().product();
    if bytes.len() - 20 != 4 * n {
        return Err(bad(&format!("payload is {} bytes, expected {}", bytes.len() - 20, 4 * n)));
    }
    let data: Vec<f64> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    Ok(Tensor3::new(dims, data)?)
}

pub fn write_tensor(t: &Tensor3, path: &Path) -> Result<(), DataError> {
    fs::write(path, tensor_bytes(t)).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

pub fn read_tensor(path: &Path) -> Result<Tensor3, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_tensor_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in (1usize..5, 1usize..5, 1usize..5), seed in any::<u32>()) {
            let dims = [dims.0, dims.1, dims.2];
            let t = Tensor3::from_fn(dims, |i, j, k| {
                f64::from(((i * 31 + j * 7 + k) as u32).wrapping_mul(seed) as f32 / u32::MAX as f32)
            })
            .unwrap();
            let back = read_tensor_bytes(&tensor_bytes(&t), "mem").unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_tensor_bytes(b"HFT2\x01\0\0\0", "x").is_err());
        let mut b = tensor_bytes(&Tensor3::zeros([2, 2, 2]).unwrap());
        b.pop();
        assert!(matches!(read_tensor_bytes(&b, "x"), Err(DataError::TensorFormat { .. })));
        let mut nan = tensor_bytes(&Tensor3::zeros([1, 1, 1]).unwrap());
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(read_tensor_bytes(&nan, "x").is_err());
    }
}
