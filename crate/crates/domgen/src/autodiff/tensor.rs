use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Rank 0 (empty shape, one value) is a scalar; rank 1 a vector; rank 2 a
/// matrix. Nothing in the crate needs higher ranks. All arithmetic everywhere
/// is `f64` — reproducibility across runs matters more than speed here, and
/// gradient checks against central differences need the headroom.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `values.len()` equals the shape product.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if values.len() != expect {
            return Err(Error::invalid(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
        }
    }

    /// Rank-1 tensor.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    /// Rank-2 tensor from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    /// Rank-2 tensor from explicit rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {c}",
                    row.len()
                )));
            }
        }
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            values.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single value of a scalar tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.shape.clone(),
            });
        }
        Ok(self.values[0])
    }

    /// Rows of a rank-2 tensor (1 for lower ranks).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor (its length for rank 0/1).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.values.len()
        }
    }

    /// Element of a rank-2 tensor. Panics on out-of-range indices, as slices
    /// do; shape validation happens when tensors are built, not on access.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[row * self.shape[1] + col]
    }

    /// One row of a rank-2 tensor as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &self.values[row * c..(row + 1) * c]
    }

    /// Elementwise `self += other`, shapes already verified by the caller.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }
}

/// `a @ b` for rank-2 tensors with compatible inner dimensions.
/// Shape checks happen in the tape before this is reached.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.values[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.values[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        values: out,
    }
}

/// `aᵀ @ b`: used by backward passes to avoid materialising transposes.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        for i in 0..m {
            let av = a.values[p * m + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b.values[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        values: out,
    }
}

/// `a @ bᵀ`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[0];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.values[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.values[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * n + j] = s;
        }
    }
    Tensor {
        shape: vec![m, n],
        values: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn scalar_round_trip() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.scalar_value().unwrap(), 2.5);
        assert!(Tensor::vector(vec![1.0, 2.0]).scalar_value().is_err());
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain_matmul() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 3.0]).unwrap();
        let b = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
        // aᵀ @ b via explicit transpose.
        let at = Tensor::matrix(2, 3, vec![1.0, 0.5, -1.0, -2.0, 4.0, 3.0]).unwrap();
        assert_eq!(matmul_tn(&a, &b).values(), matmul(&at, &b).values());
        // x @ bᵀ via explicit transpose.
        let x = Tensor::matrix(2, 4, (0..8).map(|i| i as f64).collect()).unwrap();
        let bt = {
            let mut v = vec![0.0; 12];
            for r in 0..3 {
                for c in 0..4 {
                    v[c * 3 + r] = b.at(r, c);
                }
            }
            Tensor::matrix(4, 3, v).unwrap()
        };
        assert_eq!(matmul_nt(&x, &b).values(), matmul(&x, &bt).values());
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        assert!(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
