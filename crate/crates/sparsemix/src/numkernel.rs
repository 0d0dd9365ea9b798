//! Dense row-major matrix storage and the small numeric kernels everything
//! else is built on: matvec, transposed matvec, soft-thresholding, logsumexp
//! and the stabilized softmax over negated scores.

use crate::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from a row-major buffer, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix buffer has {} entries, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "matrix entry {} is not finite",
                pos
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// out = A x. Shapes are asserted; use [`matvec`] for a checked call.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec: x length vs cols");
        assert_eq!(out.len(), self.rows, "matvec: out length vs rows");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// out = Aᵀ r, accumulated row by row. Rows with r[i] == 0 contribute
    /// nothing and are skipped; for finite A this is bitwise equivalent to
    /// the dense sum, which keeps masked and unmasked paths identical.
    pub fn matvec_t_into(&self, r: &[f64], out: &mut [f64]) {
        assert_eq!(r.len(), self.rows, "matvec_t: r length vs rows");
        assert_eq!(out.len(), self.cols, "matvec_t: out length vs cols");
        out.fill(0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri != 0.0 {
                let row = self.row(i);
                for (o, &a) in out.iter_mut().zip(row) {
                    *o += ri * a;
                }
            }
        }
    }

    /// self += scale * u vᵀ (outer-product accumulation).
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows, "add_outer: u length vs rows");
        assert_eq!(v.len(), self.cols, "add_outer: v length vs cols");
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                let c = scale * ui;
                let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
                for (o, &vj) in row.iter_mut().zip(v) {
                    *o += c * vj;
                }
            }
        }
    }
}

/// y = A x with shape checking.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.cols() {
        return Err(Error::ShapeMismatch(format!(
            "matvec: vector length {} vs {} columns",
            x.len(),
            a.cols()
        )));
    }
    let mut out = vec![0.0; a.rows()];
    a.matvec_into(x, &mut out);
    Ok(out)
}

/// y = Aᵀ r with shape checking.
pub fn matvec_transpose(a: &Matrix, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != a.rows() {
        return Err(Error::ShapeMismatch(format!(
            "matvec_transpose: vector length {} vs {} rows",
            r.len(),
            a.rows()
        )));
    }
    let mut out = vec![0.0; a.cols()];
    a.matvec_t_into(r, &mut out);
    Ok(out)
}

/// Four-way unrolled dot product; the split accumulators let the compiler
/// keep independent add chains in flight.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2_norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub fn count_nonzero(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Per-coordinate soft threshold: sign(v) * max(|v| - alpha, 0).
pub fn soft_threshold(v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "soft threshold requires a finite alpha >= 0, got {alpha}"
        )));
    }
    Ok(v.iter().map(|&x| soft_threshold_scalar(x, alpha)).collect())
}

#[inline]
pub fn soft_threshold_scalar(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

/// log Σ exp(v_i) with the max subtracted for stability.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("logsumexp of empty vector".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Ok(m);
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// softmax(-v): exp(-v_i) / Σ exp(-v_j), stabilized by subtracting the
/// minimum of v before exponentiation. One dominant (smallest) entry
/// saturates to weight 1 without producing NaN.
pub fn softmax_neg(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = v.iter().map(|&x| (m - x).exp()).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

/// Largest squared singular value, estimated by power iteration on AᵀA with
/// a fixed deterministic start vector and iteration count.
pub fn spectral_norm_sq(a: &Matrix) -> f64 {
    let (m, d) = (a.rows(), a.cols());
    if m == 0 || d == 0 {
        return 0.0;
    }
    // Slightly tilted start so it is never orthogonal to the top singular
    // vector for the matrices seen in practice.
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + j as f64 / (d as f64 + 1.0)).collect();
    let mut av = vec![0.0; m];
    let mut atav = vec![0.0; d];
    let mut sigma_sq = 0.0;
    for _ in 0..100 {
        let norm = l2_norm_sq(&v).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        for x in &mut v {
            *x /= norm;
        }
        a.matvec_into(&v, &mut av);
        sigma_sq = l2_norm_sq(&av);
        a.matvec_t_into(&av, &mut atav);
        std::mem::swap(&mut v, &mut atav);
    }
    sigma_sq
}
