//! On-disk MPCA model format.
//!
//! ```text
//! 8 bytes   magic "HFMPCA01"
//! u64 LE    header length in bytes
//! header    UTF-8 JSON: input_dims, target_dims, variance_fraction, kappa,
//!           fisher_order, fisher_scores, eigenvalues, scatter_history,
//!           total_scatter
//! payload   f64 LE: U1 (I1 x J1, row-major), U2, U3, then the mean tensor
//!           in canonical layout
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MpcaError, MpcaModel};
use crate::tensor::Tensor3;

const MAGIC: &[u8; 8] = b"HFMPCA01";

#[derive(Serialize, Deserialize)]
struct Header {
    input_dims: [usize; 3],
    target_dims: [usize; 3],
    variance_fraction: f64,
    kappa: usize,
    fisher_order: Vec<usize>,
    fisher_scores: Vec<f64>,
    eigenvalues: [Vec<f64>; 3],
    scatter_history: Vec<f64>,
    total_scatter: f64,
}

pub fn to_bytes(model: &MpcaModel) -> Vec<u8> {
    let header = Header {
        input_dims: model.input_dims,
        target_dims: model.target_dims,
        variance_fraction: model.variance_fraction,
        kappa: model.kappa,
        fisher_order: model.fisher_order.clone(),
        fisher_scores: model.fisher_scores.clone(),
        eigenvalues: model.eigenvalues.clone(),
        scatter_history: model.scatter_history.clone(),
        total_scatter: model.total_scatter,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for u in &model.projections {
        for v in u.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in model.mean_tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<MpcaModel, MpcaError> {
    let fmt = |m: &str| MpcaError::Format(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fmt("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(fmt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| MpcaError::Format(e.to_string()))?;
    let payload = &body[header_len..];
    let [i1, i2, i3] = header.input_dims;
    let j = header.target_dims;
    let expected = i1 * j[0] + i2 * j[1] + i3 * j[2] + i1 * i2 * i3;
    if payload.len() != 8 * expected {
        return Err(fmt("payload length does not match dims"));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |rows: usize, cols: usize| -> Array2<f64> {
        let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
        Array2::from_shape_vec((rows, cols), data).expect("length checked")
    };
    let projections = [take(i1, j[0]), take(i2, j[1]), take(i3, j[2])];
    let mean_data = take(1, i1 * i2 * i3).into_raw_vec_and_offset().0;
    let mean_tensor = Tensor3::new(header.input_dims, mean_data)?;
    Ok(MpcaModel {
        input_dims: header.input_dims,
        target_dims: header.target_dims,
        variance_fraction: header.variance_fraction,
        projections,
        mean_tensor,
        eigenvalues: header.eigenvalues,
        scatter_history: header.scatter_history,
        total_scatter: header.total_scatter,
        fisher_order: header.fisher_order,
        fisher_scores: header.fisher_scores,
        kappa: header.kappa,
    })
}

pub fn write_model(model: &MpcaModel, path: &Path) -> Result<(), MpcaError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<MpcaModel, MpcaError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpca::{fit, MpcaOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let samples: Vec<Tensor3> = (0..8)
            .map(|_| Tensor3::from_fn([3, 4, 2], |_, _, _| rng.random_range(-1.0..1.0)).unwrap())
            .collect();
        let model = fit(&samples, Some(&labels), &MpcaOptions { variance_fraction: 0.9, kappa: 3, ..Default::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mpca");
        write_model(&model, &path).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(from_bytes(b"nope"), Err(MpcaError::Format(_))));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&1000u64.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(MpcaError::Format(_))));
    }
}
