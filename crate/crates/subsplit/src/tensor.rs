//! Minimal dense f64 tensor, rank 1 or 2, row-major. Element (i, j) of a
//! 2-D tensor sits at offset `i * cols + j`. There is no implicit
//! broadcasting: every shape mismatch is an error, and the only broadcast,
//! adding a bias row, is a named operation. Every public operation either
//! returns finite values or fails with `Error::NonFinite`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Parameter {
                op: "from_vec",
                msg: format!("shape {:?} needs {} values, got {}", shape, expect, data.len()),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Parameter {
                op: "from_rows",
                msg: "ragged rows".to_string(),
            });
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(&[rows.len(), cols], data)
    }

    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_vec(&[1, 1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(Error::Parameter {
                op,
                msg: format!("expected a rank-2 tensor, got shape {:?}", self.shape),
            })
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// `self (a x b) * rhs (b x c)`, accumulated in k-ascending order per cell.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = self.dims2("matmul")?;
        let (b2, c) = rhs.dims2("matmul")?;
        if b != b2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; a * c];
        for i in 0..a {
            let lhs_row = &self.data[i * b..(i + 1) * b];
            let out_row = &mut out[i * c..(i + 1) * c];
            for (k, &lv) in lhs_row.iter().enumerate() {
                let rhs_row = &rhs.data[k * c..(k + 1) * c];
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += lv * rv;
                }
            }
        }
        check_finite("matmul", &out)?;
        Ok(Tensor {
            shape: vec![a, c],
            data: out,
        })
    }

    /// `self (a x b) * rhs^T` where `rhs` is (c x b). Dot products of rows.
    pub fn matmul_bt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = self.dims2("matmul_bt")?;
        let (c, b2) = rhs.dims2("matmul_bt")?;
        if b != b2 {
            return Err(Error::Dimension {
                op: "matmul_bt",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; a * c];
        for i in 0..a {
            let lhs_row = &self.data[i * b..(i + 1) * b];
            for j in 0..c {
                let rhs_row = &rhs.data[j * b..(j + 1) * b];
                let mut acc = 0.0;
                for (&x, &y) in lhs_row.iter().zip(rhs_row) {
                    acc += x * y;
                }
                out[i * c + j] = acc;
            }
        }
        check_finite("matmul_bt", &out)?;
        Ok(Tensor {
            shape: vec![a, c],
            data: out,
        })
    }

    /// `self^T * rhs` where `self` is (a x b) and `rhs` is (a x c).
    pub fn matmul_at(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = self.dims2("matmul_at")?;
        let (a2, c) = rhs.dims2("matmul_at")?;
        if a != a2 {
            return Err(Error::Dimension {
                op: "matmul_at",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; b * c];
        for k in 0..a {
            let lhs_row = &self.data[k * b..(k + 1) * b];
            let rhs_row = &rhs.data[k * c..(k + 1) * c];
            for (i, &lv) in lhs_row.iter().enumerate() {
                let out_row = &mut out[i * c..(i + 1) * c];
                for (o, &rv) in out_row.iter_mut().zip(rhs_row) {
                    *o += lv * rv;
                }
            }
        }
        check_finite("matmul_at", &out)?;
        Ok(Tensor {
            shape: vec![b, c],
            data: out,
        })
    }

    fn zip_with(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data: Vec<f64> = self.data.iter().zip(&rhs.data).map(|(&x, &y)| f(x, y)).collect();
        check_finite(op, &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |x, y| x + y)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "sub", |x, y| x - y)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&x| x * s).collect();
        check_finite("scale", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        check_finite("map", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Sum of elementwise products.
    pub fn dot(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(Error::Dimension {
                op: "dot",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&rhs.data).map(|(&x, &y)| x * y).sum())
    }

    /// Adds a rank-1 bias of length `cols` to every row. The one sanctioned
    /// broadcast in the crate.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, c) = self.dims2("add_row_bias")?;
        if bias.rank() != 1 || bias.len() != c {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        check_finite("add_row_bias", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Column sums of a rank-2 tensor, as a rank-1 tensor.
    pub fn col_sums(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("col_sums")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        check_finite("col_sums", &out)?;
        Ok(Tensor {
            shape: vec![c],
            data: out,
        })
    }

    /// Rows at `idx`, in `idx` order. Duplicate indices are allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::RowIndex {
                    op: "gather_rows",
                    index: i,
                    rows: r,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor {
            shape: vec![idx.len(), c],
            data,
        })
    }

    /// A copy of `self` with rows at `idx` replaced by the rows of `rows`
    /// (k-th index gets the k-th row). Indices must be distinct and in
    /// range; every untouched row is bit-identical to the input.
    pub fn scatter_rows(&self, idx: &[usize], rows: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.set_rows(idx, rows)?;
        Ok(out)
    }

    /// In-place form of `scatter_rows` for the owner of the tensor.
    pub fn set_rows(&mut self, idx: &[usize], rows: &Tensor) -> Result<()> {
        let (r, c) = self.dims2("scatter_rows")?;
        let (nr, nc) = rows.dims2("scatter_rows")?;
        if nr != idx.len() || nc != c {
            return Err(Error::Dimension {
                op: "scatter_rows",
                left: vec![idx.len(), c],
                right: rows.shape.clone(),
            });
        }
        let mut seen = vec![false; r];
        for &i in idx {
            if i >= r {
                return Err(Error::RowIndex {
                    op: "scatter_rows",
                    index: i,
                    rows: r,
                });
            }
            if seen[i] {
                return Err(Error::DuplicateRow(i));
            }
            seen[i] = true;
        }
        for (k, &i) in idx.iter().enumerate() {
            self.data[i * c..(i + 1) * c].copy_from_slice(rows.row(k));
        }
        Ok(())
    }

    /// Sum of squares of all elements.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(Error::Dimension {
                op: "max_abs_diff",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform(-2.0, 2.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Independent triple-loop product, plain i-j-k order.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (ar, ac) = (a.rows(), a.cols());
        let bc = b.cols();
        let mut out = Tensor::zeros(&[ar, bc]);
        for i in 0..ar {
            for j in 0..bc {
                let mut acc = 0.0;
                for k in 0..ac {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.data[i * bc + j] = acc;
            }
        }
        out
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(t.get(i, j), t.data()[i * 3 + j]);
            }
        }
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn from_vec_rejects_wrong_length_and_non_finite() {
        assert!(matches!(
            Tensor::from_vec(&[2, 2], vec![1.0; 3]),
            Err(Error::Parameter { op: "from_vec", .. })
        ));
        assert!(matches!(
            Tensor::from_vec(&[1, 2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { op: "from_vec" })
        ));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = RngState::new(11);
        let a = random(&[5, 4], &mut rng);
        let b = random(&[4, 3], &mut rng);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn matmul_transposed_variants_match_oracle() {
        let mut rng = RngState::new(12);
        let a = random(&[4, 6], &mut rng);
        let b = random(&[5, 6], &mut rng);
        // a * b^T
        let mut bt = Tensor::zeros(&[6, 5]);
        for i in 0..5 {
            for j in 0..6 {
                bt.data[j * 5 + i] = b.get(i, j);
            }
        }
        let got = a.matmul_bt(&b).unwrap();
        assert!(got.max_abs_diff(&matmul_oracle(&a, &bt)).unwrap() <= 1e-12);
        // a^T * c
        let c = random(&[4, 3], &mut rng);
        let mut at = Tensor::zeros(&[6, 4]);
        for i in 0..4 {
            for j in 0..6 {
                at.data[j * 4 + i] = a.get(i, j);
            }
        }
        let got = a.matmul_at(&c).unwrap();
        assert!(got.max_abs_diff(&matmul_oracle(&at, &c)).unwrap() <= 1e-12);
    }

    #[test]
    fn matmul_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn gather_preserves_index_order() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let g = t.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert!(matches!(
            t.gather_rows(&[3]),
            Err(Error::RowIndex { index: 3, rows: 3, .. })
        ));
    }

    #[test]
    fn scatter_replaces_only_named_rows() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let r = Tensor::from_rows(&[vec![9.0, 9.0]]).unwrap();
        let s = t.scatter_rows(&[1], &r).unwrap();
        assert_eq!(s.row(0), t.row(0));
        assert_eq!(s.row(1), &[9.0, 9.0]);
        assert_eq!(s.row(2), t.row(2));
        // input untouched
        assert_eq!(t.row(1), &[3.0, 4.0]);
        // empty index set is a no-op
        let empty = Tensor::zeros(&[0, 2]);
        assert_eq!(t.scatter_rows(&[], &empty).unwrap(), t);
        // duplicates rejected
        let two = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            t.scatter_rows(&[1, 1], &two),
            Err(Error::DuplicateRow(1))
        ));
    }

    #[test]
    fn frobenius_matches_summation_oracle() {
        let mut rng = RngState::new(13);
        let t = random(&[7, 3], &mut rng);
        let mut want = 0.0;
        for i in 0..7 {
            for j in 0..3 {
                want += t.get(i, j) * t.get(i, j);
            }
        }
        assert!((t.frobenius_sq() - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn bias_broadcast_is_explicit_and_checked() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, 20.0]).unwrap();
        let got = t.add_row_bias(&b).unwrap();
        assert_eq!(got.data(), &[11.0, 22.0, 13.0, 24.0]);
        let bad = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        assert!(t.add_row_bias(&bad).is_err());
        // element-wise add refuses the same mismatch instead of broadcasting
        assert!(t.add(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn overflow_is_reported_not_propagated() {
        let big = Tensor::from_vec(&[1, 1], vec![1e308]).unwrap();
        assert!(matches!(big.add(&big), Err(Error::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            a_r in 1usize..5, a_c in 1usize..5, b_c in 1usize..5, c_c in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut rng = RngState::new(seed);
            let a = random(&[a_r, a_c], &mut rng);
            let b = random(&[a_c, b_c], &mut rng);
            let c = random(&[b_c, c_c], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(1.0);
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-9 * scale);
        }

        #[test]
        fn scatter_of_gather_is_identity(
            rows in 1usize..8, cols in 1usize..5, seed in 0u64..1000,
            mask in proptest::collection::vec(proptest::bool::ANY, 8),
        ) {
            let mut rng = RngState::new(seed);
            let t = random(&[rows, cols], &mut rng);
            let idx: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
            let g = t.gather_rows(&idx).unwrap();
            prop_assert_eq!(t.scatter_rows(&idx, &g).unwrap(), t.clone());
            // and gathering after a scatter returns exactly what was written
            let fresh = random(&[idx.len(), cols], &mut rng);
            let s = t.scatter_rows(&idx, &fresh).unwrap();
            prop_assert_eq!(s.gather_rows(&idx).unwrap(), fresh);
        }
    }
}
