//! Dense 2-D tensors of 64-bit floats plus the forward kernels shared by the
//! autodiff tape and the value-only inference paths.
//!
//! Everything is row-major. Shapes are (rows, cols); a scalar is 1×1.

use thiserror::Error;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        len: usize,
        shape: (usize, usize),
    },
    #[error("backward requires a scalar (1x1) output, got {shape:?}")]
    NonScalarOutput { shape: (usize, usize) },
    #[error("{op}: row {row} has no allowed entries")]
    EmptyMaskRow { op: &'static str, row: usize },
    #[error("{op}: mask selects no entries")]
    EmptyMask { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite evaluation: {what}")]
    NonFinite { what: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch {
                op: "from_vec",
                len: data.len(),
                shape: (rows, cols),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(TensorError::LengthMismatch {
                    op: "from_rows",
                    len: row.len(),
                    shape: (i, c),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor { rows: r, cols: c, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// Identity matrix of order n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The single entry of a 1×1 tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(TensorError::NonScalarOutput { shape: self.shape() });
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Norm floor below which a row is treated as degenerate by normalization.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Floor applied to pairwise distances in gradients to avoid division by zero.
pub const DISTANCE_GRAD_EPS: f64 = 1e-12;

/// Forward kernels. Used identically by the tape and by value-only forwards,
/// so a no-grad pass reproduces the taped values bit for bit.
pub mod kernels {
    use super::*;

    pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        Ok(Tensor {
            rows: a.rows,
            cols: a.cols,
            data,
        })
    }

    pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        Ok(Tensor {
            rows: a.rows,
            cols: a.cols,
            data,
        })
    }

    pub fn mul_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_elem",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        Ok(Tensor {
            rows: a.rows,
            cols: a.cols,
            data,
        })
    }

    pub fn scale(a: &Tensor, k: f64) -> Tensor {
        Tensor {
            rows: a.rows,
            cols: a.cols,
            data: a.data.iter().map(|x| x * k).collect(),
        }
    }

    /// a (m×k) · b (k×n) → m×n.
    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// a (m×k) · bᵀ where b is (n×k) → m×n.
    pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols != b.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows, a.cols, b.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// aᵀ (k×m from a m×k) · b (m×n) → k×n.
    pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rows != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_tn",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let brow = &b.data[i * n..(i + 1) * n];
            for p in 0..k {
                let av = arow[p];
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(Tensor {
            rows: k,
            cols: n,
            data: out,
        })
    }

    /// Matrix (m×n) plus a row vector (1×n) broadcast over rows.
    pub fn add_row_vec(a: &Tensor, v: &Tensor) -> Result<Tensor> {
        if v.rows != 1 || v.cols != a.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_vec",
                lhs: a.shape(),
                rhs: v.shape(),
            });
        }
        let mut out = a.clone();
        for i in 0..a.rows {
            for j in 0..a.cols {
                out.data[i * a.cols + j] += v.data[j];
            }
        }
        Ok(out)
    }

    pub fn relu(a: &Tensor) -> Tensor {
        Tensor {
            rows: a.rows,
            cols: a.cols,
            data: a.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        }
    }

    /// Per-row L2 normalization. Rows with norm below [`NORMALIZE_EPS`] map to
    /// the first standard basis vector and are reported as degenerate.
    pub fn row_normalize(a: &Tensor) -> (Tensor, Vec<f64>, Vec<bool>) {
        let mut out = a.clone();
        let mut norms = Vec::with_capacity(a.rows);
        let mut degenerate = vec![false; a.rows];
        for i in 0..a.rows {
            let row = &a.data[i * a.cols..(i + 1) * a.cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(norm);
            let orow = &mut out.data[i * a.cols..(i + 1) * a.cols];
            if norm < NORMALIZE_EPS {
                degenerate[i] = true;
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = if j == 0 { 1.0 } else { 0.0 };
                }
            } else {
                for o in orow.iter_mut() {
                    *o /= norm;
                }
            }
        }
        (out, norms, degenerate)
    }

    /// Euclidean distance from every row of `x` to every row of `points`.
    pub fn pairwise_distance(x: &Tensor, points: &Tensor) -> Result<Tensor> {
        if x.cols != points.cols {
            return Err(TensorError::ShapeMismatch {
                op: "pairwise_distance",
                lhs: x.shape(),
                rhs: points.shape(),
            });
        }
        let (b, d, n) = (x.rows, x.cols, points.rows);
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            let xr = &x.data[i * d..(i + 1) * d];
            for j in 0..n {
                let pr = &points.data[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for p in 0..d {
                    let diff = xr[p] - pr[p];
                    acc += diff * diff;
                }
                out[i * n + j] = acc.sqrt();
            }
        }
        Ok(Tensor {
            rows: b,
            cols: n,
            data: out,
        })
    }

    /// Max-shifted log-sum-exp per row over entries where `mask` is true.
    /// Errors if any row has no allowed entry.
    pub fn masked_row_logsumexp(a: &Tensor, mask: &[bool]) -> Result<Tensor> {
        debug_assert_eq!(mask.len(), a.data.len());
        let mut out = Vec::with_capacity(a.rows);
        for i in 0..a.rows {
            let row = &a.data[i * a.cols..(i + 1) * a.cols];
            let mrow = &mask[i * a.cols..(i + 1) * a.cols];
            let mut maxv = f64::NEG_INFINITY;
            for (v, &m) in row.iter().zip(mrow) {
                if m && *v > maxv {
                    maxv = *v;
                }
            }
            if maxv == f64::NEG_INFINITY {
                return Err(TensorError::EmptyMaskRow {
                    op: "masked_row_logsumexp",
                    row: i,
                });
            }
            let mut acc = 0.0;
            for (v, &m) in row.iter().zip(mrow) {
                if m {
                    acc += (v - maxv).exp();
                }
            }
            out.push(maxv + acc.ln());
        }
        Ok(Tensor {
            rows: a.rows,
            cols: 1,
            data: out,
        })
    }

    /// Matrix (m×n) minus a column vector (m×1) broadcast over columns.
    pub fn sub_col_vec(a: &Tensor, v: &Tensor) -> Result<Tensor> {
        if v.cols != 1 || v.rows != a.rows {
            return Err(TensorError::ShapeMismatch {
                op: "sub_col_vec",
                lhs: a.shape(),
                rhs: v.shape(),
            });
        }
        let mut out = a.clone();
        for i in 0..a.rows {
            for j in 0..a.cols {
                out.data[i * a.cols + j] -= v.data[i];
            }
        }
        Ok(out)
    }

    /// Mean over entries where `mask` is true. Errors on an all-false mask.
    pub fn masked_mean(a: &Tensor, mask: &[bool]) -> Result<(f64, usize)> {
        debug_assert_eq!(mask.len(), a.data.len());
        let mut acc = 0.0;
        let mut count = 0usize;
        for (v, &m) in a.data.iter().zip(mask) {
            if m {
                acc += *v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(TensorError::EmptyMask { op: "masked_mean" });
        }
        Ok((acc / count as f64, count))
    }

    pub fn mean(a: &Tensor) -> f64 {
        a.data.iter().sum::<f64>() / a.data.len() as f64
    }

    /// Mean cross-entropy of row-wise softmax against integer labels,
    /// computed with a max shift. Returns (loss, per-row softmax) so the
    /// backward pass can reuse the probabilities.
    pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        if labels.len() != logits.rows {
            return Err(TensorError::LengthMismatch {
                op: "softmax_cross_entropy",
                len: labels.len(),
                shape: logits.shape(),
            });
        }
        let (b, c) = logits.shape();
        let mut probs = Tensor::zeros(b, c);
        let mut loss = 0.0;
        for i in 0..b {
            let y = labels[i];
            if y >= c {
                return Err(TensorError::LabelOutOfRange { label: y, classes: c });
            }
            let row = &logits.data[i * c..(i + 1) * c];
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - maxv).exp();
            }
            let lse = maxv + denom.ln();
            loss += lse - row[y];
            for j in 0..c {
                probs.data[i * c + j] = (row[j] - maxv).exp() / denom;
            }
        }
        Ok((loss / b as f64, probs))
    }

    /// Unmasked per-row log-sum-exp (max-shifted).
    pub fn row_logsumexp(a: &Tensor) -> Tensor {
        let mask = vec![true; a.data.len()];
        masked_row_logsumexp(a, &mask).expect("rows are non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::kernels::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let v = Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let out = matmul(&i2, &v).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        let t = Tensor::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn logsumexp_equal_logits() {
        let t = Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let out = row_logsumexp(&t);
        assert_abs_diff_eq!(out.at(0, 0), 2.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn logsumexp_survives_large_logits() {
        let t = Tensor::from_vec(1, 2, vec![1000.0, 1000.0]).unwrap();
        let out = row_logsumexp(&t);
        assert!(out.at(0, 0).is_finite());
        assert_abs_diff_eq!(out.at(0, 0), 1000.0 + 2.0_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn normalize_unit_norm_and_degenerate_row() {
        let t = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let (out, _, degenerate) = row_normalize(&t);
        let n0 = (out.at(0, 0).powi(2) + out.at(0, 1).powi(2)).sqrt();
        assert_abs_diff_eq!(n0, 1.0, epsilon = 1e-12);
        assert_eq!(out.row(1), &[1.0, 0.0]);
        assert_eq!(degenerate, vec![false, true]);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = Tensor::zeros(2, 4);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert_abs_diff_eq!(loss, 4.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn softmax_ce_saturated_correct_class() {
        let mut logits = Tensor::zeros(1, 4);
        logits.set(0, 1, 30.0);
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn pairwise_distance_simple() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let d = pairwise_distance(&x, &p).unwrap();
        assert_abs_diff_eq!(d.at(0, 0), 5.0, epsilon = 1e-15);
        assert_eq!(d.at(0, 1), 0.0);
    }
}
