use nalgebra::DVector;

use super::{LpProblem, RowMatrix, Solution, SolveStatus};

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    /// Pivot cap; `None` means `50 * (m + n)`.
    pub max_pivots: Option<usize>,
    /// Phase-1 optimum above this (in row-normalized units) certifies infeasibility.
    pub infeasibility_tol: f64,
    /// Reduced-cost optimality tolerance.
    pub optimality_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_pivots: None,
            infeasibility_tol: crate::TOL,
            optimality_tol: 1e-10,
        }
    }
}

pub fn solve_lp(p: &LpProblem) -> Solution {
    solve_lp_with(p, &LpOptions::default())
}

pub fn solve_lp_with(p: &LpProblem, opts: &LpOptions) -> Solution {
    let a = RowMatrix::from(&p.a);
    simplex(p.c.as_slice(), &a, p.b.as_slice(), opts)
}

/// Maximize `c'x` subject to `A x <= b` given row-major data.
pub fn lp_rows(c: &[f64], a: &RowMatrix, b: &[f64]) -> Solution {
    simplex(c, a, b, &LpOptions::default())
}

/// Phase-1 only: returns a point with `A x <= b` (within tolerance) or `None` if infeasible.
pub fn feasible_point(a: &RowMatrix, b: &[f64]) -> Option<DVector<f64>> {
    let c = vec![0.0; a.ncols()];
    let sol = simplex(&c, a, b, &LpOptions::default());
    sol.x
}

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_STREAK: usize = 50;

/// Compact simplex tableau.
///
/// Each basic variable is written as `basic_i = beta_i + sum_l t[i][l] * nonbasic_l`.
/// Variable ids: `0..n` structural (free), `n..n+m` slacks, `n+m` the phase-1 artificial.
struct Tableau {
    m: usize,
    k: usize,
    n: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    nonbasic: Vec<usize>,
    d: Vec<f64>,
    z0: f64,
    disabled: Vec<bool>,
    pivots: usize,
    bland: bool,
    degenerate_streak: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn is_free(&self, var: usize) -> bool {
        var < self.n
    }

    fn set_objective(&mut self, cost: impl Fn(usize) -> f64) {
        let k = self.k;
        for l in 0..k {
            self.d[l] = cost(self.nonbasic[l]);
        }
        self.z0 = 0.0;
        for i in 0..self.m {
            let cb = cost(self.basis[i]);
            if cb != 0.0 {
                let row = &self.t[i * k..(i + 1) * k];
                for (dl, tl) in self.d.iter_mut().zip(row) {
                    *dl += cb * tl;
                }
                self.z0 += cb * self.beta[i];
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let k = self.k;
        let p = self.t[r * k + j];
        let mut prow: Vec<f64> = self.t[r * k..(r + 1) * k].iter().map(|v| -v / p).collect();
        prow[j] = 1.0 / p;
        let beta_r = -self.beta[r] / p;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * k + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * k..(i + 1) * k];
            row[j] = 0.0;
            for (tl, pl) in row.iter_mut().zip(&prow) {
                *tl += f * pl;
            }
            self.beta[i] += f * beta_r;
        }
        let f = self.d[j];
        if f != 0.0 {
            self.d[j] = 0.0;
            for (dl, pl) in self.d.iter_mut().zip(&prow) {
                *dl += f * pl;
            }
            self.z0 += f * beta_r;
        }
        self.t[r * k..(r + 1) * k].copy_from_slice(&prow);
        self.beta[r] = beta_r;
        std::mem::swap(&mut self.basis[r], &mut self.nonbasic[j]);
        self.pivots += 1;
    }

    /// Choose an entering column and its direction (+1 increase, -1 decrease).
    fn entering(&self, tol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for l in 0..self.k {
            if self.disabled[l] {
                continue;
            }
            let var = self.nonbasic[l];
            let dl = self.d[l];
            let dir = if dl > tol {
                1.0
            } else if dl < -tol && self.is_free(var) {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                match best {
                    Some((bl, _)) if self.nonbasic[bl] <= var => {}
                    _ => best = Some((l, dir)),
                }
            } else if dl.abs() > best_score {
                best_score = dl.abs();
                best = Some((l, dir));
            }
        }
        best
    }

    /// Ratio test; `None` means the direction is unbounded.
    fn leaving(&self, j: usize, dir: f64) -> Option<usize> {
        let k = self.k;
        let mut best: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        let mut best_coef = 0.0;
        for i in 0..self.m {
            if self.is_free(self.basis[i]) {
                continue;
            }
            let coef = self.t[i * k + j] * dir;
            if coef >= -PIVOT_TOL {
                continue;
            }
            let ratio = self.beta[i].max(0.0) / -coef;
            let better = match best {
                None => true,
                Some(bi) => {
                    if ratio < best_ratio - 1e-12 {
                        true
                    } else if ratio <= best_ratio + 1e-12 {
                        if self.bland {
                            self.basis[i] < self.basis[bi]
                        } else {
                            -coef > best_coef
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                best = Some(i);
                best_ratio = ratio.min(best_ratio);
                best_coef = -coef;
            }
        }
        best
    }

    fn run(&mut self, tol: f64, max_pivots: usize) -> Outcome {
        loop {
            if self.pivots >= max_pivots {
                return Outcome::IterationLimit;
            }
            let Some((j, dir)) = self.entering(tol) else {
                return Outcome::Optimal;
            };
            let Some(r) = self.leaving(j, dir) else {
                return Outcome::Unbounded;
            };
            let step = self.beta[r].max(0.0) / (self.t[r * self.k + j] * dir).abs();
            if step <= 1e-12 {
                self.degenerate_streak += 1;
                if self.degenerate_streak >= DEGENERATE_STREAK {
                    self.bland = true;
                }
            } else {
                self.degenerate_streak = 0;
            }
            self.pivot(r, j);
        }
    }
}

/// Two-phase primal simplex for `max c'x s.t. A x <= b`, x free.
pub(crate) fn simplex(c: &[f64], a: &RowMatrix, b: &[f64], opts: &LpOptions) -> Solution {
    let n = a.ncols();
    let m_all = a.nrows();
    debug_assert_eq!(b.len(), m_all);
    debug_assert_eq!(c.len(), n);

    // Row scaling to unit infinity norm; all-zero rows are either vacuous or infeasible.
    let mut rows: Vec<usize> = Vec::with_capacity(m_all);
    let mut scale: Vec<f64> = Vec::with_capacity(m_all);
    for (i, &bi) in b.iter().enumerate() {
        let norm = a.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if norm < 1e-12 {
            if bi < -opts.infeasibility_tol {
                return Solution::failed(SolveStatus::Infeasible, 0);
            }
            continue;
        }
        rows.push(i);
        scale.push(1.0 / norm);
    }
    let m = rows.len();
    let bs: Vec<f64> = rows.iter().zip(&scale).map(|(&i, s)| b[i] * s).collect();
    let needs_phase1 = bs.iter().any(|&v| v < 0.0);
    let k = n + usize::from(needs_phase1);

    let mut t = vec![0.0; m * k];
    for (ri, (&i, s)) in rows.iter().zip(&scale).enumerate() {
        let src = a.row(i);
        let dst = &mut t[ri * k..ri * k + n];
        for (dv, sv) in dst.iter_mut().zip(src) {
            *dv = -sv * s;
        }
        if needs_phase1 && bs[ri] < 0.0 {
            t[ri * k + n] = 1.0;
        }
    }
    let art = n + m;
    let mut nonbasic: Vec<usize> = (0..n).collect();
    if needs_phase1 {
        nonbasic.push(art);
    }
    let mut tab = Tableau {
        m,
        k,
        n,
        t,
        beta: bs.clone(),
        basis: (n..n + m).collect(),
        nonbasic,
        d: vec![0.0; k],
        z0: 0.0,
        disabled: vec![false; k],
        pivots: 0,
        bland: false,
        degenerate_streak: 0,
    };
    let max_pivots = opts.max_pivots.unwrap_or(50 * (m + n).max(1));

    if needs_phase1 {
        let r = (0..m)
            .min_by(|&x, &y| bs[x].partial_cmp(&bs[y]).unwrap())
            .expect("phase 1 requires at least one row");
        tab.pivot(r, n);
        tab.set_objective(|v| if v == art { -1.0 } else { 0.0 });
        match tab.run(opts.optimality_tol, max_pivots) {
            Outcome::Optimal => {}
            // The phase-1 objective is bounded above by zero; unboundedness is numerical failure.
            Outcome::Unbounded | Outcome::IterationLimit => {
                return Solution::failed(SolveStatus::IterationLimit, tab.pivots)
            }
        }
        if -tab.z0 > opts.infeasibility_tol {
            return Solution::failed(SolveStatus::Infeasible, tab.pivots);
        }
        if let Some(r) = tab.basis.iter().position(|&v| v == art) {
            let row = &tab.t[r * k..(r + 1) * k];
            let best = (0..k)
                .filter(|&l| tab.nonbasic[l] != art)
                .max_by(|&x, &y| row[x].abs().partial_cmp(&row[y].abs()).unwrap());
            if let Some(l) = best.filter(|&l| row[l].abs() > 1e-9) {
                tab.pivot(r, l);
            }
        }
        if let Some(l) = tab.nonbasic.iter().position(|&v| v == art) {
            tab.disabled[l] = true;
        }
        tab.bland = false;
        tab.degenerate_streak = 0;
    }

    tab.set_objective(|v| if v < n { c[v] } else { 0.0 });
    match tab.run(opts.optimality_tol, max_pivots) {
        Outcome::Optimal => {}
        Outcome::Unbounded => return Solution::failed(SolveStatus::Unbounded, tab.pivots),
        Outcome::IterationLimit => {
            return Solution::failed(SolveStatus::IterationLimit, tab.pivots)
        }
    }

    let mut x = DVector::zeros(n);
    for (i, &v) in tab.basis.iter().enumerate() {
        if v < n {
            x[v] = tab.beta[i];
        }
    }
    let mut y = DVector::zeros(m_all);
    let mut active = Vec::new();
    for (l, &v) in tab.nonbasic.iter().enumerate() {
        if v >= n && v < n + m {
            let ri = v - n;
            y[rows[ri]] = (-tab.d[l]).max(0.0) * scale[ri];
            active.push(rows[ri]);
        }
    }
    active.sort_unstable();
    let value = c.iter().zip(x.iter()).map(|(ci, xi)| ci * xi).sum();
    Solution {
        status: SolveStatus::Optimal,
        x: Some(x),
        value,
        active_set: active,
        multipliers: Some(y),
        iterations: tab.pivots,
    }
}
