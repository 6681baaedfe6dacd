//! Goldfarb–Idnani dual active-set QP.
//!
//! The method starts from the unconstrained minimizer and adds violated constraints one at a
//! time, dropping constraints whose multipliers would turn negative. The factorization
//! `J = L^{-T} Q`, `R` (with `H = L L'` and `Q R` the QR factors of `L^{-1} N`) is updated with
//! Givens rotations as constraints enter and leave.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{dot, QpProblem, RowMatrix, Solution, SolveStatus, SolverError};

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Cap on add/drop steps; `None` means `50 * (m + n)`.
    pub max_iter: Option<usize>,
    /// A row is violated when `a'x - b > feas_tol * |a|`.
    pub feas_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: None,
            feas_tol: 1e-10,
        }
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<Solution, SolverError> {
    let solver = QpSolver::new(p.h.clone())?;
    Ok(solver.solve(&p.f, &RowMatrix::from(&p.a), p.b.as_slice(), &[]))
}

/// A QP with a fixed Hessian, factored once and re-solved for varying `f`, `A`, `b`.
#[derive(Debug, Clone)]
pub struct QpSolver {
    h: DMatrix<f64>,
    /// `L^{-T}`, column-major.
    linv_t: Vec<f64>,
    n: usize,
    pub options: QpOptions,
}

impl QpSolver {
    pub fn new(h: DMatrix<f64>) -> Result<Self, SolverError> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(SolverError::Dimension(format!(
                "H is {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        let scale = h.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let asym = (&h - h.transpose()).abs().max();
        if asym > 1e-10 * scale {
            return Err(SolverError::NotSymmetric(asym));
        }
        let hs = (&h + h.transpose()) * 0.5;
        let chol = Cholesky::new(hs).ok_or(SolverError::NotPositiveDefinite)?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(SolverError::NotPositiveDefinite)?;
        let linv_t = linv.transpose();
        Ok(Self {
            h,
            linv_t: linv_t.as_slice().to_vec(),
            n,
            options: QpOptions::default(),
        })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve with linear term `f` and constraints `A x <= b`.
    ///
    /// Violated rows listed in `warm` are added before any others, which reproduces the
    /// previous active set in few iterations when the data changed little.
    pub fn solve(&self, f: &DVector<f64>, a: &RowMatrix, b: &[f64], warm: &[usize]) -> Solution {
        let n = self.n;
        let m = a.nrows();
        assert_eq!(f.len(), n);
        assert_eq!(a.ncols(), n);
        assert_eq!(b.len(), m);
        let max_iter = self.options.max_iter.unwrap_or(50 * (m + n).max(1));
        let tol = self.options.feas_tol;

        // J starts as L^{-T}; columns are stored contiguously.
        let mut j = self.linv_t.clone();
        // Unconstrained minimizer x = -H^{-1} f = -J J' f.
        let mut x = vec![0.0; n];
        for c in 0..n {
            let jc = &j[c * n..(c + 1) * n];
            let w = dot(jc, f.as_slice());
            for (xi, ji) in x.iter_mut().zip(jc) {
                *xi -= w * ji;
            }
        }

        let norms: Vec<f64> = (0..m).map(|i| dot(a.row(i), a.row(i)).sqrt()).collect();
        let mut in_warm = vec![false; m];
        for &w in warm {
            if w < m {
                in_warm[w] = true;
            }
        }
        // R is upper triangular, column-major n x n; only the leading q x q block is live.
        let mut r = vec![0.0; n * n];
        let mut active: Vec<usize> = Vec::new();
        let mut is_active = vec![false; m];
        let mut u: Vec<f64> = Vec::new();
        let mut iters = 0usize;
        let mut d = vec![0.0; n];
        let mut z = vec![0.0; n];

        loop {
            // Pick the most violated row, preferring the warm set.
            let mut pick: Option<(usize, f64, bool)> = None;
            for i in 0..m {
                if is_active[i] || norms[i] == 0.0 {
                    if norms[i] == 0.0 && b[i] < -tol {
                        return Solution::failed(SolveStatus::Infeasible, iters);
                    }
                    continue;
                }
                let viol = (dot(a.row(i), &x) - b[i]) / norms[i];
                if viol > tol {
                    let w = in_warm[i];
                    let better = match pick {
                        None => true,
                        Some((_, pv, pw)) => (w && !pw) || (w == pw && viol > pv),
                    };
                    if better {
                        pick = Some((i, viol, w));
                    }
                }
            }
            let Some((p, _, _)) = pick else {
                break;
            };
            let np: Vec<f64> = a.row(p).iter().map(|v| -v).collect();
            let mut up = 0.0;

            loop {
                iters += 1;
                if iters > max_iter {
                    return Solution::failed(SolveStatus::IterationLimit, iters);
                }
                let q = active.len();
                for c in 0..n {
                    d[c] = dot(&j[c * n..(c + 1) * n], &np);
                }
                z.iter_mut().for_each(|v| *v = 0.0);
                for c in q..n {
                    let jc = &j[c * n..(c + 1) * n];
                    for (zi, ji) in z.iter_mut().zip(jc) {
                        *zi += d[c] * ji;
                    }
                }
                // rv = R^{-1} d[..q]
                let mut rv = d[..q].to_vec();
                for i in (0..q).rev() {
                    rv[i] /= r[i * n + i];
                    let ri = rv[i];
                    for k in 0..i {
                        rv[k] -= ri * r[i * n + k];
                    }
                }
                // Partial step limited by dual feasibility.
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, (&uk, &rk)) in u.iter().zip(&rv).enumerate() {
                    if rk > 0.0 {
                        let ratio = uk / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }
                // Full step making row p active.
                let d_all: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                let d_free: f64 = d[q..].iter().map(|v| v * v).sum::<f64>().sqrt();
                let slack = b[p] - dot(a.row(p), &x);
                let t2 = if d_free > 1e-12 * d_all.max(f64::MIN_POSITIVE) {
                    let ztn = dot(&z, &np);
                    if ztn > 0.0 {
                        -slack / ztn
                    } else {
                        f64::INFINITY
                    }
                } else {
                    f64::INFINITY
                };

                if t1.is_infinite() && t2.is_infinite() {
                    return Solution::failed(SolveStatus::Infeasible, iters);
                }
                if t2.is_infinite() {
                    for (uk, rk) in u.iter_mut().zip(&rv) {
                        *uk -= t1 * rk;
                    }
                    up += t1;
                    let l = drop_at.expect("finite t1 has an index");
                    drop_constraint(&mut j, &mut r, n, &mut active, &mut u, &mut is_active, l);
                    continue;
                }
                let step = t1.min(t2);
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += step * zi;
                }
                for (uk, rk) in u.iter_mut().zip(&rv) {
                    *uk -= step * rk;
                }
                up += step;
                if t2 <= t1 {
                    add_constraint(&mut j, &mut r, n, &mut d, q);
                    active.push(p);
                    is_active[p] = true;
                    u.push(up);
                    break;
                }
                let l = drop_at.expect("partial step has an index");
                drop_constraint(&mut j, &mut r, n, &mut active, &mut u, &mut is_active, l);
            }
        }

        let xv = DVector::from_vec(x);
        let value = 0.5 * xv.dot(&(&self.h * &xv)) + f.dot(&xv);
        let mut lambda = DVector::zeros(m);
        for (&i, &ui) in active.iter().zip(&u) {
            lambda[i] = ui.max(0.0);
        }
        let mut active_set = active;
        active_set.sort_unstable();
        Solution {
            status: SolveStatus::Optimal,
            x: Some(xv),
            value,
            active_set,
            multipliers: Some(lambda),
            iterations: iters,
        }
    }
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_cols(j: &mut [f64], n: usize, c0: usize, c: f64, s: f64) {
    let (left, right) = j.split_at_mut((c0 + 1) * n);
    let a = &mut left[c0 * n..];
    let b = &mut right[..n];
    for (ai, bi) in a.iter_mut().zip(b.iter_mut()) {
        let x = *ai;
        let y = *bi;
        *ai = c * x + s * y;
        *bi = -s * x + c * y;
    }
}

/// Append the constraint whose transformed normal is `d` as active column `q`.
fn add_constraint(j: &mut [f64], r: &mut [f64], n: usize, d: &mut [f64], q: usize) {
    for i in (q + 1..n).rev() {
        if d[i] == 0.0 {
            continue;
        }
        let (c, s, h) = givens(d[i - 1], d[i]);
        d[i - 1] = h;
        d[i] = 0.0;
        rotate_cols(j, n, i - 1, c, s);
    }
    for i in 0..=q {
        r[q * n + i] = d[i];
    }
}

fn drop_constraint(
    j: &mut [f64],
    r: &mut [f64],
    n: usize,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    is_active: &mut [bool],
    l: usize,
) {
    let q = active.len();
    is_active[active[l]] = false;
    active.remove(l);
    u.remove(l);
    // Shift R columns left, then restore triangularity.
    for c in l..q - 1 {
        for i in 0..n {
            r[c * n + i] = r[(c + 1) * n + i];
        }
    }
    for i in 0..n {
        r[(q - 1) * n + i] = 0.0;
    }
    for c in l..q - 1 {
        let (cs, sn, h) = givens(r[c * n + c], r[c * n + c + 1]);
        r[c * n + c] = h;
        r[c * n + c + 1] = 0.0;
        for k in c + 1..q - 1 {
            let x = r[k * n + c];
            let y = r[k * n + c + 1];
            r[k * n + c] = cs * x + sn * y;
            r[k * n + c + 1] = -sn * x + cs * y;
        }
        rotate_cols(j, n, c, cs, sn);
    }
}
