//! Dense column-major matrix storage.

use std::ops::{Index, IndexMut};

/// Column-major dense real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            assert_eq!(row.len(), ncols, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copy of the block `rows × cols` with top-left corner `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for j in 0..cols {
            out.col_mut(j).copy_from_slice(&self.col(c0 + j)[r0..r0 + rows]);
        }
        out
    }

    pub fn view(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> MatRef<'_> {
        debug_assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        MatRef { data: &self.data, ld: self.rows, r0, c0, rows, cols }
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        self.view(0, 0, self.rows, self.cols)
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        self.as_ref().inf_norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Plain `self * rhs` in working precision.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for k in 0..self.cols {
                let x = rhs[(k, j)];
                if x == 0.0 {
                    continue;
                }
                let a = self.col(k);
                for (o, &s) in out.col_mut(j).iter_mut().zip(a) {
                    *o += s * x;
                }
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// Borrowed rectangular window into a column-major matrix.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    data: &'a [f64],
    ld: usize,
    r0: usize,
    c0: usize,
    rows: usize,
    cols: usize,
}

impl<'a> MatRef<'a> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[(self.c0 + j) * self.ld + self.r0 + i]
    }

    /// Column `j` of the window, restricted to rows `lo..hi`.
    #[inline]
    pub fn col_range(&self, j: usize, lo: usize, hi: usize) -> &'a [f64] {
        debug_assert!(lo <= hi && hi <= self.rows && j < self.cols);
        let base = (self.c0 + j) * self.ld + self.r0;
        &self.data[base + lo..base + hi]
    }

    #[inline]
    pub fn col(&self, j: usize) -> &'a [f64] {
        self.col_range(j, 0, self.rows)
    }

    pub fn sub(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> MatRef<'a> {
        debug_assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        MatRef { data: self.data, ld: self.ld, r0: self.r0 + r0, c0: self.c0 + c0, rows, cols }
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            out.col_mut(j).copy_from_slice(self.col(j));
        }
        out
    }

    /// Infinity norm; saturates at `f64::MAX` instead of overflowing.
    pub fn inf_norm(&self) -> f64 {
        self.inf_norm_raw().min(f64::MAX)
    }

    /// Infinity norm as accumulated, possibly `inf`.
    pub fn inf_norm_raw(&self) -> f64 {
        let row_max = |sums: &mut dyn Iterator<Item = f64>| {
            let (mut best, mut nan) = (0.0f64, false);
            for s in sums {
                nan |= s.is_nan();
                best = if s > best { s } else { best };
            }
            if nan {
                f64::NAN
            } else {
                best
            }
        };
        match self.cols {
            0 => 0.0,
            1 => row_max(&mut self.col(0).iter().map(|v| v.abs())),
            2 => row_max(&mut self.col(0).iter().zip(self.col(1)).map(|(a, b)| a.abs() + b.abs())),
            _ => {
                let mut sums = vec![0.0f64; self.rows];
                for j in 0..self.cols {
                    for (s, &v) in sums.iter_mut().zip(self.col(j)) {
                        *s += v.abs();
                    }
                }
                row_max(&mut sums.into_iter())
            }
        }
    }
}
