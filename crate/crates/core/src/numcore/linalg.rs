//! Small dense/sparse kernels shared by the tape ops.

use crate::error::{contract, Result};

/// `c = beta * c + op(a) * op(b)` for row-major buffers.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. With `ta` set, `a` is stored as
/// `k x m` (likewise `tb` means `b` is stored as `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (exclusive borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Constant sparse linear map applied row-wise to a dense `n_cols x c` input,
/// plus an optional per-row constant.
///
/// Used for interpolation weights: row `r` of the output is
/// `sum_k vals[k] * x[cols[k]] + offset[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    offset: Option<Vec<f64>>,
}

impl SparseRows {
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>, offset: Option<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        if let Some(off) = &offset {
            contract!(off.len() == n_rows, "offset length must equal row count");
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, w) in row {
                contract!(c < n_cols, "column {c} out of range {n_cols}");
                cols.push(c);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
            offset,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn offset(&self, r: usize) -> f64 {
        self.offset.as_ref().map_or(0.0, |o| o[r])
    }

    /// Dense application: `x` is `n_cols x channels`, output `n_rows x channels`.
    pub fn apply(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * channels];
        for r in 0..self.n_rows {
            let o = &mut out[r * channels..(r + 1) * channels];
            let base = self.offset(r);
            o.iter_mut().for_each(|v| *v = base);
            for (c, w) in self.row(r) {
                let xr = &x[c * channels..(c + 1) * channels];
                for (ov, xv) in o.iter_mut().zip(xr) {
                    *ov += w * xv;
                }
            }
        }
        out
    }

    /// Transposed application without the offset, accumulated into `dx`.
    pub fn apply_transpose_add(&self, dout: &[f64], channels: usize, dx: &mut [f64]) {
        for r in 0..self.n_rows {
            let g = &dout[r * channels..(r + 1) * channels];
            for (c, w) in self.row(r) {
                let d = &mut dx[c * channels..(c + 1) * channels];
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv += w * gv;
                }
            }
        }
    }
}
