//! Dense kernels: strided GEMM and a one-sided Jacobi SVD.

use crate::error::{Error, Result};

/// A row-major matrix view, optionally transposed, over a flat slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        MatRef { transposed: !self.transposed, ..self }
    }

    /// Logical (rows, cols) after the transpose flag is applied.
    pub fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` row-major of shape (m, n).
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "gemm inner extents differ");
    assert_eq!(c.len(), m * n, "gemm output has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        } else {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the views were checked to cover `rows * cols` elements and the
    // strides above address exactly that range; `c` has length m * n.
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
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fully strided GEMM: `c[i*rsc + j*csc] = alpha * sum_l a[i*rsa + l*csa] * b[l*rsb + j*csb] + beta * c[..]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len(), "gemm output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "gemm lhs view out of bounds");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm rhs view out of bounds");
    // SAFETY: every addressed element was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Thin SVD `a = u * diag(s) * v^T` with singular values sorted descending.
#[derive(Clone, Debug)]
pub struct Svd {
    /// rows x k, row-major
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// cols x k, row-major
    pub v: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD of a row-major `rows x cols` matrix.
///
/// Columns of a working copy are rotated pairwise until mutually orthogonal
/// to within [`JACOBI_TOL`]; the column norms are then the singular values.
/// Wide inputs are handled through the transpose. Ties in the final sort keep
/// the earlier column first.
pub fn jacobi_svd(a: &[f64], rows: usize, cols: usize) -> Result<Svd> {
    if a.len() != rows * cols {
        return Err(Error::extent(format!("svd input has {} elements, expected {rows}x{cols}", a.len())));
    }
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::SvdFailure(format!("non-finite entry at flat index {pos}")));
    }
    if rows >= cols {
        tall_svd(a, rows, cols)
    } else {
        let mut at = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                at[j * rows + i] = a[i * cols + j];
            }
        }
        let t = tall_svd(&at, cols, rows)?;
        Ok(Svd { u: t.v, s: t.s, v: t.u, rows, cols })
    }
}

fn tall_svd(a: &[f64], m: usize, n: usize) -> Result<Svd> {
    // columns stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdFailure(format!("Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the earlier column on ties
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = vec![0.0; m * n];
    let mut vout = vec![0.0; n * n];
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u[i * n + k] = w[j][i] / sigma;
            }
        }
        for i in 0..n {
            vout[i * n + k] = v[j][i];
        }
    }
    Ok(Svd { u, s, v: vout, rows: m, cols: n })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd) -> Vec<f64> {
        let k = svd.rank();
        let mut out = vec![0.0; svd.rows * svd.cols];
        for i in 0..svd.rows {
            for j in 0..svd.cols {
                out[i * svd.cols + j] = (0..k).map(|l| svd.u[i * k + l] * svd.s[l] * svd.v[j * k + l]).sum();
            }
        }
        out
    }

    #[test]
    fn gemm_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0];
        let mut c = [0.0; 2];
        gemm(1.0, MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 1), 0.0, &mut c);
        assert_eq!(c, [2.0, 4.0]);
        // a^T b
        gemm(1.0, MatRef::new(&a, 2, 2).t(), MatRef::new(&b, 2, 1), 0.0, &mut c);
        assert_eq!(c, [3.0, 4.0]);
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        let a: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        for (r, c) in [(4, 3), (3, 4), (6, 2), (2, 6)] {
            let svd = jacobi_svd(&a, r, c).unwrap();
            let back = reconstruct(&svd);
            for (x, y) in a.iter().zip(&back) {
                assert!((x - y).abs() < 1e-12, "{r}x{c}: {x} vs {y}");
            }
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_of_diagonal() {
        let a = [3.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 4.0];
        let svd = jacobi_svd(&a, 3, 3).unwrap();
        assert_eq!(svd.s, vec![5.0, 4.0, 3.0]);
    }

    #[test]
    fn svd_rejects_nan() {
        let a = [1.0, f64::NAN];
        assert!(matches!(jacobi_svd(&a, 1, 2), Err(Error::SvdFailure(_))));
    }
}
