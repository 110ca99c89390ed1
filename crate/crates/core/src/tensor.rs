//! Third-order tensors and the multilinear operations built on them.
//!
//! Storage is row-major with the last index fastest:
//! `index(i1, i2, i3) = i1 * I2 * I3 + i2 * I3 + i3`.
//!
//! The mode-n unfolding of a tensor is an `I_n x (prod_{k != n} I_k)` matrix.
//! Its columns enumerate the remaining two indices in canonical order, so the
//! higher-numbered remaining mode varies fastest. For mode 1 this means the
//! unfolding is just the flat buffer reshaped to `I1 x (I2 * I3)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor dimensions must be positive, got {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("data length {found} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch { dims: [usize; 3], expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("mode index must be 1, 2 or 3, got {0}")]
    InvalidMode(usize),
    #[error("matrix has {found} columns but mode {mode} has size {expected}")]
    DimensionMismatch { mode: usize, expected: usize, found: usize },
    #[error("unfolded matrix shape {found:?} does not match dims {dims:?} for mode {mode}")]
    FoldShape { mode: usize, dims: [usize; 3], found: (usize, usize) },
}

/// A dense third-order tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension(dims));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { dims, expected, found: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(pos));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self, TensorError> {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    /// Builds a tensor by evaluating `f(i1, i2, i3)` at every index.
    pub fn from_fn<F>(dims: [usize; 3], mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Elementwise `self - other`. Panics on shape mismatch.
    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, other.dims, "tensor shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Tensor3 { dims: self.dims, data }
    }

    pub fn unfold(&self, mode: usize) -> Result<Array2<f64>, TensorError> {
        let [d1, d2, d3] = self.dims;
        let out = match mode {
            1 => Array2::from_shape_vec((d1, d2 * d3), self.data.clone())
                .expect("row-major reshape"),
            2 => Array2::from_shape_fn((d2, d1 * d3), |(j, c)| {
                let (i, k) = (c / d3, c % d3);
                self.get(i, j, k)
            }),
            3 => Array2::from_shape_fn((d3, d1 * d2), |(k, c)| {
                let (i, j) = (c / d2, c % d2);
                self.get(i, j, k)
            }),
            m => return Err(TensorError::InvalidMode(m)),
        };
        Ok(out)
    }

    /// Inverse of [`Tensor3::unfold`]: rebuilds a tensor of shape `dims`.
    pub fn fold(matrix: &Array2<f64>, mode: usize, dims: [usize; 3]) -> Result<Self, TensorError> {
        let [d1, d2, d3] = dims;
        let expected = match mode {
            1 => (d1, d2 * d3),
            2 => (d2, d1 * d3),
            3 => (d3, d1 * d2),
            m => return Err(TensorError::InvalidMode(m)),
        };
        if matrix.dim() != expected {
            return Err(TensorError::FoldShape { mode, dims, found: matrix.dim() });
        }
        Self::from_fn(dims, |i, j, k| match mode {
            1 => matrix[[i, j * d3 + k]],
            2 => matrix[[j, i * d3 + k]],
            _ => matrix[[k, i * d2 + j]],
        })
    }

    /// Mode-n product `self x_n m`, where `m` is `J x I_n`.
    pub fn mode_product(&self, m: &Array2<f64>, mode: usize) -> Result<Tensor3, TensorError> {
        if !(1..=3).contains(&mode) {
            return Err(TensorError::InvalidMode(mode));
        }
        let size = self.dims[mode - 1];
        if m.ncols() != size {
            return Err(TensorError::DimensionMismatch { mode, expected: size, found: m.ncols() });
        }
        let product = m.dot(&self.unfold(mode)?);
        let mut dims = self.dims;
        dims[mode - 1] = m.nrows();
        Tensor3::fold(&product, mode, dims)
    }

    /// Concatenates two equally shaped tensors along mode 3.
    pub fn concat_mode3(&self, other: &Tensor3) -> Option<Tensor3> {
        if self.dims != other.dims {
            return None;
        }
        let [d1, d2, d3] = self.dims;
        let mut data = Vec::with_capacity(2 * self.data.len());
        for row in 0..d1 * d2 {
            data.extend_from_slice(&self.data[row * d3..(row + 1) * d3]);
            data.extend_from_slice(&other.data[row * d3..(row + 1) * d3]);
        }
        Some(Tensor3 { dims: [d1, d2, 2 * d3], data })
    }

    /// Mean of a non-empty collection of equally shaped tensors.
    pub fn mean_of<'a, I>(tensors: I) -> Option<Tensor3>
    where
        I: IntoIterator<Item = &'a Tensor3>,
    {
        let mut iter = tensors.into_iter();
        let first = iter.next()?;
        let mut acc = first.data.clone();
        let mut count = 1usize;
        for t in iter {
            if t.dims != first.dims {
                return None;
            }
            for (a, v) in acc.iter_mut().zip(&t.data) {
                *a += v;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Some(Tensor3 { dims: first.dims, data: acc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert_eq!(Tensor3::new([0, 1, 1], vec![]), Err(TensorError::ZeroDimension([0, 1, 1])));
        assert!(matches!(
            Tensor3::new([1, 1, 2], vec![1.0]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert_eq!(Tensor3::new([1, 1, 2], vec![1.0, f64::NAN]), Err(TensorError::NonFinite(1)));
    }

    #[test]
    fn unfold_mode1_small() {
        let t = Tensor3::new([2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.unfold(1).unwrap(), array![[0., 1., 2., 3.], [4., 5., 6., 7.]]);
    }

    #[test]
    fn unfold_matches_index_map_for_every_entry() {
        let t = Tensor3::new([2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let m2 = t.unfold(2).unwrap();
        let m3 = t.unfold(3).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let v = (4 * i + 2 * j + k) as f64;
                    assert_eq!(m2[[j, i * 2 + k]], v);
                    assert_eq!(m3[[k, i * 2 + j]], v);
                }
            }
        }
    }

    #[test]
    fn degenerate_scalar_tensor() {
        let t = Tensor3::new([1, 1, 1], vec![4.5]).unwrap();
        for mode in 1..=3 {
            assert_eq!(t.unfold(mode).unwrap(), array![[4.5]]);
        }
    }

    #[test]
    fn invalid_mode() {
        let t = Tensor3::zeros([1, 1, 1]).unwrap();
        assert_eq!(t.unfold(0), Err(TensorError::InvalidMode(0)));
        assert_eq!(t.unfold(4), Err(TensorError::InvalidMode(4)));
        assert_eq!(t.mode_product(&array![[1.0]], 5), Err(TensorError::InvalidMode(5)));
    }

    #[test]
    fn mode_product_identity_and_hand_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, [3, 4, 2]);
        for mode in 1..=3 {
            let id = Array2::eye(t.dims()[mode - 1]);
            assert_eq!(t.mode_product(&id, mode).unwrap(), t);
        }
        let ones = Tensor3::new([2, 2, 2], vec![1.0; 8]).unwrap();
        let summed = ones.mode_product(&array![[1.0, 1.0]], 1).unwrap();
        assert_eq!(summed.dims(), [1, 2, 2]);
        assert!(summed.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let t = Tensor3::zeros([2, 3, 4]).unwrap();
        let err = t.mode_product(&Array2::zeros((2, 2)), 2).unwrap_err();
        assert_eq!(err, TensorError::DimensionMismatch { mode: 2, expected: 3, found: 2 });
    }

    #[test]
    fn mode_products_on_distinct_modes_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tensor(&mut rng, [4, 3, 5]);
        let a = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let ab = t.mode_product(&a, 1).unwrap().mode_product(&b, 2).unwrap();
        let ba = t.mode_product(&b, 2).unwrap().mode_product(&a, 1).unwrap();
        assert_eq!(ab.dims(), [2, 6, 5]);
        for (x, y) in ab.data().iter().zip(ba.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Tensor3::zeros([2, 3, 4]).unwrap().frobenius_sq(), 0.0);
        assert_eq!(Tensor3::new([1, 1, 2], vec![3.0, 4.0]).unwrap().frobenius_sq(), 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&mut rng, [5, 6, 7]);
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..6 {
                for k in 0..7 {
                    naive += t.get(i, j, k) * t.get(i, j, k);
                }
            }
        }
        assert!((naive - t.frobenius_sq()).abs() < 1e-12);
    }

    #[test]
    fn concat_places_slices() {
        let a = Tensor3::new([2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor3::new([2, 2, 1], vec![5., 6., 7., 8.]).unwrap();
        let c = a.concat_mode3(&b).unwrap();
        assert_eq!(c.dims(), [2, 2, 2]);
        assert_eq!(c.data(), &[1., 5., 2., 6., 3., 7., 4., 8.]);
        assert!(a.concat_mode3(&Tensor3::zeros([2, 2, 2]).unwrap()).is_none());
    }

    proptest! {
        #[test]
        fn unfold_fold_round_trip(d1 in 1usize..=8, d2 in 1usize..=8, d3 in 1usize..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, [d1, d2, d3]);
            for mode in 1..=3 {
                let back = Tensor3::fold(&t.unfold(mode).unwrap(), mode, t.dims()).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }
    }
}
