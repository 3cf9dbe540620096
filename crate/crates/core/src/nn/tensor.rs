use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {shape:?} must be nonempty and positive")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized tensor");
        Self {
            shape: vec![rows, cols],
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Number of rows of a matrix (first axis).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all axes after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_matrix(&self, what: &str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!("{what}: expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(())
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn hconcat(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?.rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::shape("row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(p.row(i));
            }
        }
        Tensor::matrix(rows, cols, out)
    }

    /// Splits columns into consecutive blocks of the given widths.
    pub fn hsplit(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        if widths.iter().sum::<usize>() != self.cols() {
            return Err(Error::shape("split widths do not cover the columns"));
        }
        let mut out = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &w in widths {
            let mut vals = Vec::with_capacity(self.rows() * w);
            for i in 0..self.rows() {
                vals.extend_from_slice(&self.row(i)[start..start + w]);
            }
            out.push(Tensor::matrix(self.rows(), w, vals)?);
            start += w;
        }
        Ok(out)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let mut vals = Vec::with_capacity(idx.len() * self.cols());
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::shape(format!("row {i} out of range")));
            }
            vals.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), self.cols(), vals)
    }
}

/// Row-wise L2 normalization.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    v.ensure_matrix("l2_normalize")?;
    let mut out = v.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

/// Gradient of [`l2_normalize`] with respect to its input.
///
/// For `y = x / |x|`, `dL/dx = (g - y (y . g)) / |x|`.
pub fn l2_normalize_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::shape("l2_normalize_backward: shape mismatch"));
    }
    let mut out = upstream.clone();
    for i in 0..input.rows() {
        let x = input.row(i);
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        let g = upstream.row(i);
        let dot: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
        for (o, (xa, ga)) in out.row_mut(i).iter_mut().zip(x.iter().zip(g)) {
            *o = (ga - xa / norm * dot) / norm;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let t = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = l2_normalize(&t).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-15);
        assert!((n.values()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_row_is_unchanged() {
        let t = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let n = l2_normalize(&t).unwrap();
        for (a, b) in n.values().iter().zip(t.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_zero_row_fails() {
        let t = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize(&t), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.7], vec![2.0, 0.1, -0.4]]).unwrap();
        let g = Tensor::from_rows(&[vec![0.5, 0.2, -1.0], vec![-0.3, 0.9, 0.4]]).unwrap();
        let analytic = l2_normalize_backward(&x, &g).unwrap();
        let h = 1e-6;
        for k in 0..x.values().len() {
            let f = |delta: f64| {
                let mut xp = x.clone();
                xp.values_mut()[k] += delta;
                let y = l2_normalize(&xp).unwrap();
                y.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>()
            };
            let numeric = (f(h) - f(-h)) / (2.0 * h);
            assert!((numeric - analytic.values()[k]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn normalized_rows_have_unit_norm(rows in proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, 5), 1..8)) {
            prop_assume!(rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-3)));
            let t = Tensor::from_rows(&rows).unwrap();
            let n = l2_normalize(&t).unwrap();
            for i in 0..n.rows() {
                let norm = n.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-12);
            }
        }
    }
}
