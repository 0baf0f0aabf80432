use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    ///
    /// # Panics
    ///
    /// Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_rows(&[values])
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let lhs = self.row(r);
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, accumulated into `acc`.
    pub fn matmul_tn_into(&self, other: &Self, acc: &mut Self) -> Result<()> {
        if self.rows != other.rows || acc.shape() != (self.cols, other.cols) {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for r in 0..self.rows {
            let rhs = other.row(r);
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut acc.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(rhs) {
                    *d += a * b;
                }
            }
        }
        Ok(())
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let lhs = self.row(r);
            for c in 0..other.rows {
                out.data[r * other.rows + c] = lhs.iter().zip(other.row(c)).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add")?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "hadamard")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row_broadcast(&mut self, row: &Self) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::Shape {
                op: "add_row_broadcast",
                left: self.shape(),
                right: row.shape(),
            });
        }
        for r in 0..self.rows {
            self.row_mut(r).iter_mut().zip(&row.data).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// Column sums accumulated into a `1 × cols` tensor.
    pub fn col_sums_into(&self, acc: &mut Self) -> Result<()> {
        if acc.shape() != (1, self.cols) {
            return Err(Error::Shape {
                op: "col_sums",
                left: self.shape(),
                right: acc.shape(),
            });
        }
        for r in 0..self.rows {
            acc.data.iter_mut().zip(self.row(r)).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Horizontal concatenation of blocks sharing a row count.
    pub fn hcat(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Shape {
                op: "hcat",
                left: (rows, 0),
                right: bad.shape(),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Columns `[start, end)` as a new tensor.
    pub fn col_slice(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Gathers the listed rows.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor2::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = Tensor2::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab, Tensor2::from_rows(&[[4.0, 5.0], [10.0, 11.0]]));

        let bt = Tensor2::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]);
        assert_eq!(a.matmul_nt(&bt).unwrap(), ab);

        // aᵀ·ab: (3×2)·(2×2)
        let mut acc = Tensor2::zeros(3, 2);
        a.matmul_tn_into(&ab, &mut acc).unwrap();
        assert_eq!(acc.row(0), &[1.0 * 4.0 + 4.0 * 10.0, 1.0 * 5.0 + 4.0 * 11.0]);
        assert!(a.matmul_tn_into(&ab, &mut Tensor2::zeros(2, 2)).is_err());
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn hcat_and_slice_are_inverse() {
        let a = Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor2::from_rows(&[[5.0], [6.0]]);
        let c = Tensor2::hcat(&[&a, &b]).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        assert_eq!(c.col_slice(0, 2), a);
        assert_eq!(c.col_slice(2, 3), b);
    }
}
