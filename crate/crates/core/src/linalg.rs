//! Sparse matrices and the iterative/direct solvers used by the time stepper.

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Row-by-row builder; entries within a row may repeat and are summed.
#[derive(Debug, Default)]
pub struct CsrBuilder {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn with_capacity(rows: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        Self {
            row_ptr,
            col_idx: Vec::with_capacity(nnz),
            values: Vec::with_capacity(nnz),
            scratch: Vec::new(),
        }
    }

    pub fn add(&mut self, col: usize, v: f64) {
        self.scratch.push((col, v));
    }

    pub fn finish_row(&mut self) {
        self.scratch.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.scratch {
            if last == Some(c) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(c);
                self.values.push(v);
                last = Some(c);
            }
        }
        self.scratch.clear();
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix {
            rows: self.row_ptr.len() - 1,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.col_idx[k] == r)
                    .map(|k| self.values[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&k| self.col_idx[k] == c)
            .map(|k| self.values[k])
            .unwrap_or(0.0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if (self.values[k] - self.get(c, r)).abs() > tol * (1.0 + self.values[k].abs()) {
                    return false;
                }
            }
        }
        true
    }

    /// Extracts the three bands of a tridiagonal matrix.
    pub fn tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.rows;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                match c as isize - r as isize {
                    -1 => lower[r] = self.values[k],
                    0 => diag[r] = self.values[k],
                    1 => upper[r] = self.values[k],
                    _ => {
                        if self.values[k] != 0.0 {
                            return None;
                        }
                    }
                }
            }
        }
        Some((lower, diag, upper))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual `‖b − Ax‖ / ‖b‖` at exit.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0];
    c[0] = upper[0] / m;
    d[0] = rhs[0] / m;
    for i in 1..n {
        m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Jacobi-preconditioned conjugate gradients, warm-started from `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveStats {
    let n = a.rows;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm(&r) / bnorm;
    if res <= tol || norm(b) == 0.0 && norm(&r) == 0.0 {
        return SolveStats {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap == 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return SolveStats {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    SolveStats {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

/// Jacobi-preconditioned BiCGSTAB for nonsymmetric systems.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveStats {
    let n = a.rows;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return SolveStats {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.mul_vec(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            break;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return SolveStats {
                iterations: it,
                residual: norm(&s) / bnorm,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = s[i] * inv_diag[i];
        }
        a.mul_vec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return SolveStats {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        if omega == 0.0 {
            break;
        }
    }
    SolveStats {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Thomas,
    ConjugateGradient,
    BiCgStab,
}

/// Dispatches on structure: Thomas for tridiagonal 1D systems, CG for
/// symmetric ones, BiCGSTAB otherwise.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    one_dimensional: bool,
    symmetric: bool,
    tol: f64,
    max_iter: usize,
) -> (Method, SolveStats) {
    if one_dimensional {
        if let Some((l, d, u)) = a.tridiagonal() {
            let sol = thomas(&l, &d, &u, b);
            x.copy_from_slice(&sol);
            let mut ax = vec![0.0; b.len()];
            a.mul_vec(x, &mut ax);
            let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
            let res = norm(&r) / norm(b).max(f64::MIN_POSITIVE);
            return (
                Method::Thomas,
                SolveStats {
                    iterations: 1,
                    residual: res,
                    converged: res.is_finite(),
                },
            );
        }
    }
    if symmetric {
        (Method::ConjugateGradient, pcg(a, b, x, tol, max_iter))
    } else {
        (Method::BiCgStab, bicgstab(a, b, x, tol, max_iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut b = CsrBuilder::with_capacity(n, 3 * n);
        for i in 0..n {
            if i > 0 {
                b.add(i - 1, -1.0);
            }
            b.add(i, 2.0 + shift);
            if i + 1 < n {
                b.add(i + 1, -1.0);
            }
            b.finish_row();
        }
        b.build()
    }

    #[test]
    fn thomas_matches_cg() {
        let a = laplacian_1d(50, 0.1);
        let rhs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (l, d, u) = a.tridiagonal().unwrap();
        let x1 = thomas(&l, &d, &u, &rhs);
        let mut x2 = vec![0.0; 50];
        let st = pcg(&a, &rhs, &mut x2, 1e-13, 500);
        assert!(st.converged);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn bicgstab_nonsymmetric() {
        let n = 40;
        let mut b = CsrBuilder::with_capacity(n, 3 * n);
        for i in 0..n {
            if i > 0 {
                b.add(i - 1, -1.3);
            }
            b.add(i, 3.0);
            if i + 1 < n {
                b.add(i + 1, -0.7);
            }
            b.finish_row();
        }
        let a = b.build();
        assert!(!a.is_symmetric(1e-14));
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let mut rhs = vec![0.0; n];
        a.mul_vec(&x_true, &mut rhs);
        let mut x = vec![0.0; n];
        let st = bicgstab(&a, &rhs, &mut x, 1e-13, 500);
        assert!(st.converged);
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn cg_solves_spd(diag_shift in 0.01f64..5.0, seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let a = laplacian_1d(n, diag_shift);
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = vec![0.0; n];
            let st = pcg(&a, &rhs, &mut x, 1e-12, 1000);
            prop_assert!(st.converged);
            let mut ax = vec![0.0; n];
            a.mul_vec(&x, &mut ax);
            let err: f64 = ax.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-10 * (1.0 + rhs.iter().map(|v| v * v).sum::<f64>().sqrt()));
        }
    }
}
