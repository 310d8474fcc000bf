use std::fmt;

use crate::error::{OtsError, Result};

/// Dense row-major matrix of `f64`.
///
/// Every map in the pipeline uses the channels-by-units layout: row `c`
/// holds channel `c`, column `i` holds unit (or object slot) `i`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OtsError::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OtsError::Usage(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Convenience constructor for literals; panics on ragged rows.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.len() {
            return Err(OtsError::shape(
                "reshape",
                format!("{}x{} into {rows}x{cols}", self.rows, self.cols),
            ));
        }
        Ok(Matrix {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(OtsError::shape(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(OtsError::shape(
                "elementwise",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    /// `self += s * other`, shapes must agree.
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        assert_eq!(perm.len(), self.cols, "permutation length");
        Matrix::from_fn(self.rows, self.cols, |r, c| self.get(r, perm[c]))
    }

    /// Stacks `self` above `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(OtsError::shape(
                "concat_rows",
                format!("{} columns over {} columns", self.cols, other.cols),
            ));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Splits after `top_rows` rows.
    pub fn split_rows(&self, top_rows: usize) -> (Matrix, Matrix) {
        assert!(top_rows <= self.rows);
        let cut = top_rows * self.cols;
        (
            Matrix {
                rows: top_rows,
                cols: self.cols,
                data: self.data[..cut].to_vec(),
            },
            Matrix {
                rows: self.rows - top_rows,
                cols: self.cols,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    /// Column-wise softmax with per-column max subtraction.
    pub fn softmax_cols(&self) -> Matrix {
        let mut out = self.clone();
        let (rows, cols) = self.shape();
        for c in 0..cols {
            let mut max = f64::NEG_INFINITY;
            for r in 0..rows {
                max = max.max(self.get(r, c));
            }
            let mut total = 0.0;
            for r in 0..rows {
                let e = (self.get(r, c) - max).exp();
                out.set(r, c, e);
                total += e;
            }
            for r in 0..rows {
                out.set(r, c, out.get(r, c) / total);
            }
        }
        out
    }

    /// Column-wise log-softmax via log-sum-exp.
    pub fn log_softmax_cols(&self) -> Matrix {
        let mut out = self.clone();
        let (rows, cols) = self.shape();
        for c in 0..cols {
            let mut max = f64::NEG_INFINITY;
            for r in 0..rows {
                max = max.max(self.get(r, c));
            }
            let total: f64 = (0..rows).map(|r| (self.get(r, c) - max).exp()).sum();
            let lse = max + total.ln();
            for r in 0..rows {
                out.set(r, c, self.get(r, c) - lse);
            }
        }
        out
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        let max_rows = self.rows.min(8);
        for r in 0..max_rows {
            let row = self.row(r);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:>10.4}")).collect();
            let tail = if self.cols > 8 { " ..." } else { "" };
            writeln!(f, "  {}{tail}", shown.join(" "))?;
        }
        if self.rows > max_rows {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally
/// transposes. Transposition is expressed through strides, no copies.
pub(crate) fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(c.shape(), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if n == 1 || m == 1 || k == 1 {
        vector_gemm(alpha, a, trans_a, b, trans_b, beta, c, (m, k, n));
        return;
    }
    if m * k * n >= SPARSE_MIN_WORK && sparse_gemm(alpha, a, trans_a, b, trans_b, beta, c, (m, k, n)) {
        return;
    }
    dense_gemm(alpha, a, trans_a, b, trans_b, beta, c, (m, k, n));
}

#[allow(clippy::too_many_arguments)]
fn dense_gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
    (m, k, n): (usize, usize, usize),
) {
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: pointers come from live slices whose lengths match the
    // dimensions and strides asserted above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const SPARSE_MIN_WORK: usize = 1 << 16;

/// Drops all-zero rows of `op(a)`, all-zero columns of `op(b)`, and inner
/// indices where either operand is zero, then multiplies the rest densely.
/// Returns `false` (doing nothing) when too little would be skipped.
#[allow(clippy::too_many_arguments)]
fn sparse_gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
    (m, k, n): (usize, usize, usize),
) -> bool {
    let (rsa, csa) = if trans_a { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols) } else { (b.cols, 1) };
    let at = |i: usize, p: usize| a.data[i * rsa + p * csa];
    let bt = |p: usize, j: usize| b.data[p * rsb + j * csb];

    let rows: Vec<usize> = (0..m).filter(|&i| (0..k).any(|p| at(i, p) != 0.0)).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| (0..k).any(|p| bt(p, j) != 0.0)).collect();
    let inner: Vec<usize> = (0..k)
        .filter(|&p| (0..m).any(|i| at(i, p) != 0.0) && (0..n).any(|j| bt(p, j) != 0.0))
        .collect();
    let kept = rows.len() * cols.len() * inner.len();
    if kept * 10 > m * k * n * 7 {
        return false;
    }

    if beta == 0.0 {
        c.data.fill(0.0);
    } else if beta != 1.0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
    }
    if kept == 0 {
        return true;
    }
    let a2 = Matrix::from_fn(rows.len(), inner.len(), |i, p| at(rows[i], inner[p]));
    let b2 = Matrix::from_fn(inner.len(), cols.len(), |p, j| bt(inner[p], cols[j]));
    let mut c2 = Matrix::zeros(rows.len(), cols.len());
    gemm(1.0, &a2, false, &b2, false, 0.0, &mut c2);
    for (i2, &i) in rows.iter().enumerate() {
        let src = &c2.data[i2 * cols.len()..(i2 + 1) * cols.len()];
        let dst = &mut c.data[i * n..(i + 1) * n];
        for (&j, &v) in cols.iter().zip(src) {
            dst[j] += alpha * v;
        }
    }
    true
}

/// Matrix-vector and outer products, which the blocked kernel handles poorly.
#[allow(clippy::too_many_arguments)]
fn vector_gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
    (m, k, n): (usize, usize, usize),
) {
    if beta == 0.0 {
        c.data.fill(0.0);
    } else if beta != 1.0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
    }
    let out = &mut c.data;
    if k == 1 {
        // Both operands are vectors whatever their orientation.
        for i in 0..m {
            let ai = alpha * a.data[i];
            axpy_slice(ai, &b.data, &mut out[i * n..(i + 1) * n]);
        }
    } else if n == 1 {
        let x = &b.data;
        if trans_a {
            // rows of A (k x m) scaled by x and summed
            for (p, &xp) in x.iter().enumerate() {
                axpy_slice(alpha * xp, &a.data[p * m..(p + 1) * m], out);
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o += alpha * dot(&a.data[i * k..(i + 1) * k], x);
            }
        }
    } else {
        let x = &a.data;
        if trans_b {
            // B is n x k
            for (j, o) in out.iter_mut().enumerate() {
                *o += alpha * dot(&b.data[j * k..(j + 1) * k], x);
            }
        } else {
            for (p, &xp) in x.iter().enumerate() {
                axpy_slice(alpha * xp, &b.data[p * n..(p + 1) * n], out);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy_slice(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}
