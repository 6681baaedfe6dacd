//! Inequality-represented convex polyhedra `{x : A x <= b}`.
//!
//! Every stored row is scaled to unit infinity norm, so the global tolerance
//! [`crate::TOL`] has the same meaning for every row. Operations never mutate; each returns a
//! new [`HPolyhedron`].

mod io;
mod project;

pub use io::{parse_hrep, HrepFile};
pub use project::ProjectionOptions;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::par;
use crate::solver::{self, RowMatrix, SolveStatus};
use crate::TOL;

/// Coefficient rows whose infinity norm falls below this are treated as zero.
pub const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("polyhedron data contains non-finite entries")]
    NonFinite,
    #[error("inverted bounds at coordinate {index}: lower {lower} must be < upper {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("index {0} listed twice")]
    DuplicateIndex(usize),
    #[error("polyhedron is empty")]
    Empty,
    #[error("projection intractable: {rows} intermediate rows exceed the cap of {cap}")]
    ProjectionIntractable { rows: usize, cap: usize },
    #[error("LP failed with status {0:?}")]
    Lp(SolveStatus),
    #[error("malformed hrep at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Result of maximizing a linear functional over a polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Bounded { value: f64, argmax: DVector<f64> },
    Unbounded,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevBall {
    /// `None` when the polyhedron is empty or the inscribed radius is unbounded.
    pub center: Option<DVector<f64>>,
    /// Negative for empty sets, zero for sets without interior, `+inf` when unbounded.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HPolyhedron {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl HPolyhedron {
    /// Build `{x : A x <= b}`. Rows are normalized; trivially satisfied zero rows are dropped
    /// and a trivially violated one is kept as the single row `0'x <= -1`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, PolytopeError> {
        if a.nrows() != b.len() {
            return Err(PolytopeError::Dimension(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
            return Err(PolytopeError::NonFinite);
        }
        let n = a.ncols();
        let rows: Vec<(Vec<f64>, f64)> = (0..a.nrows())
            .map(|i| (a.row(i).iter().copied().collect(), b[i]))
            .collect();
        Ok(Self::from_rows_unchecked(n, rows))
    }

    pub(crate) fn from_rows_unchecked(n: usize, rows: Vec<(Vec<f64>, f64)>) -> Self {
        let mut kept: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows.len());
        let mut infeasible = false;
        for (mut r, mut bi) in rows {
            let norm = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if norm < ZERO_ROW {
                if bi < -TOL {
                    infeasible = true;
                }
                continue;
            }
            r.iter_mut().for_each(|v| *v /= norm);
            bi /= norm;
            kept.push((r, bi));
        }
        if infeasible {
            kept.push((vec![0.0; n], -1.0));
        }
        let m = kept.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for (i, (r, bi)) in kept.into_iter().enumerate() {
            for (j, v) in r.into_iter().enumerate() {
                a[(i, j)] = v;
            }
            b[i] = bi;
        }
        Self { a, b }
    }

    /// The whole space `R^n` (no rows).
    pub fn universe(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    /// Axis-aligned box `lower <= x <= upper`, stored as the `2n` rows `x_i <= u_i`, `-x_i <= -l_i`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self, PolytopeError> {
        if lower.len() != upper.len() {
            return Err(PolytopeError::Dimension(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        let n = lower.len();
        let mut rows = Vec::with_capacity(2 * n);
        for (i, (&l, &u)) in lower.iter().zip(upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) {
                return Err(PolytopeError::NonFinite);
            }
            if l >= u {
                return Err(PolytopeError::InvertedBounds {
                    index: i,
                    lower: l,
                    upper: u,
                });
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            rows.push((e.clone(), u));
            e[i] = -1.0;
            rows.push((e, -l));
        }
        Ok(Self::from_rows_unchecked(n, rows))
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn row(&self, i: usize) -> (Vec<f64>, f64) {
        (self.a.row(i).iter().copied().collect(), self.b[i])
    }

    pub(crate) fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        (0..self.nrows()).map(|i| self.row(i)).collect()
    }

    pub(crate) fn row_matrix(&self) -> RowMatrix {
        RowMatrix::from(&self.a)
    }

    /// `{x : A x <= s b}`; a dilation about the origin when `0` is interior.
    pub fn scale(&self, s: f64) -> Self {
        assert!(s > 0.0, "scale factor must be positive");
        Self {
            a: self.a.clone(),
            b: &self.b * s,
        }
    }

    /// Stack the rows of both sets. Redundant rows are kept.
    pub fn intersect(&self, other: &Self) -> Result<Self, PolytopeError> {
        self.check_dim(other.dim())?;
        let n = self.dim();
        let m = self.nrows() + other.nrows();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        a.rows_mut(0, self.nrows()).copy_from(&self.a);
        a.rows_mut(self.nrows(), other.nrows()).copy_from(&other.a);
        b.rows_mut(0, self.nrows()).copy_from(&self.b);
        b.rows_mut(self.nrows(), other.nrows()).copy_from(&other.b);
        Ok(Self { a, b })
    }

    /// `{x : M x + offset in P}`.
    pub fn preimage(&self, m: &DMatrix<f64>, offset: &DVector<f64>) -> Result<Self, PolytopeError> {
        if m.nrows() != self.dim() || offset.len() != self.dim() {
            return Err(PolytopeError::Dimension(format!(
                "map is {}x{} with offset {}, set dimension {}",
                m.nrows(),
                m.ncols(),
                offset.len(),
                self.dim()
            )));
        }
        Self::new(&self.a * m, &self.b - &self.a * offset)
    }

    /// Embed into a larger space: coordinate `i` of `self` becomes coordinate `map[i]` of an
    /// `n`-dimensional space; other coordinates are unconstrained.
    pub fn lift(&self, n: usize, map: &[usize]) -> Result<Self, PolytopeError> {
        if map.len() != self.dim() {
            return Err(PolytopeError::Dimension(format!(
                "lift map has {} entries for dimension {}",
                map.len(),
                self.dim()
            )));
        }
        check_indices(map, n)?;
        let mut a = DMatrix::zeros(self.nrows(), n);
        for (j, &dst) in map.iter().enumerate() {
            a.set_column(dst, &self.a.column(j));
        }
        Ok(Self {
            a,
            b: self.b.clone(),
        })
    }

    /// Fix the listed coordinates and return the set over the remaining ones (original order).
    pub fn slice(&self, fixed_indices: &[usize], fixed_values: &[f64]) -> Result<Self, PolytopeError> {
        if fixed_indices.len() != fixed_values.len() {
            return Err(PolytopeError::Dimension(format!(
                "{} indices but {} values",
                fixed_indices.len(),
                fixed_values.len()
            )));
        }
        let n = self.dim();
        check_indices(fixed_indices, n)?;
        let free: Vec<usize> = (0..n).filter(|j| !fixed_indices.contains(j)).collect();
        let rows = (0..self.nrows())
            .map(|i| {
                let shift: f64 = fixed_indices
                    .iter()
                    .zip(fixed_values)
                    .map(|(&j, &v)| self.a[(i, j)] * v)
                    .sum();
                let r: Vec<f64> = free.iter().map(|&j| self.a[(i, j)]).collect();
                (r, self.b[i] - shift)
            })
            .collect();
        Ok(Self::from_rows_unchecked(free.len(), rows))
    }

    /// `true` iff `A x <= b + tol`.
    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        (0..self.nrows()).all(|i| {
            let s: f64 = self.a.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            s <= self.b[i] + tol
        })
    }

    /// Largest violation `max_i (a_i'x - b_i)`, or `-inf` for a set without rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.nrows())
            .map(|i| {
                let s: f64 = self.a.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                s - self.b[i]
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Maximize `dir'x` over the set.
    pub fn support(&self, dir: &[f64]) -> Support {
        support_rows(&self.row_matrix(), self.b.as_slice(), dir)
    }

    pub fn is_empty(&self) -> bool {
        solver::feasible_point(&self.row_matrix(), self.b.as_slice()).is_none()
    }

    /// A point of the set, if any.
    pub fn interior_or_any_point(&self) -> Option<DVector<f64>> {
        let ball = self.chebyshev_center();
        match ball.center {
            Some(c) if ball.radius >= 0.0 => Some(c),
            _ => solver::feasible_point(&self.row_matrix(), self.b.as_slice()),
        }
    }

    /// `self ⊇ other`, via one support LP over `other` per row of `self`.
    pub fn contains_set(&self, other: &Self) -> bool {
        self.contains_set_tol(other, TOL)
    }

    pub fn contains_set_tol(&self, other: &Self, tol: f64) -> bool {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        if other.is_empty() {
            return true;
        }
        let q = other.row_matrix();
        let qb = other.b.as_slice();
        let rows = self.rows();
        par::map(&rows, |(a, bi)| match support_rows(&q, qb, a) {
            Support::Bounded { value, .. } => value <= bi + tol,
            Support::Empty => true,
            Support::Unbounded => false,
        })
        .into_iter()
        .all(|ok| ok)
    }

    /// Mutual containment.
    pub fn set_eq(&self, other: &Self, tol: f64) -> bool {
        self.contains_set_tol(other, tol) && other.contains_set_tol(self, tol)
    }

    /// Center and radius of the largest inscribed Euclidean ball.
    pub fn chebyshev_center(&self) -> ChebyshevBall {
        let n = self.dim();
        let m = self.nrows();
        let mut a = RowMatrix::zeros(m, n + 1);
        for i in 0..m {
            let row = a.row_mut(i);
            let mut nrm = 0.0;
            for (j, r) in row.iter_mut().take(n).enumerate() {
                *r = self.a[(i, j)];
                nrm += *r * *r;
            }
            row[n] = nrm.sqrt();
        }
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        let sol = solver::lp_rows(&c, &a, self.b.as_slice());
        match sol.status {
            SolveStatus::Optimal => {
                let x = sol.x.expect("optimal LP has a point");
                let radius = x[n];
                if radius < -TOL {
                    ChebyshevBall {
                        center: None,
                        radius,
                    }
                } else {
                    ChebyshevBall {
                        center: Some(x.rows(0, n).into_owned()),
                        radius: radius.max(0.0),
                    }
                }
            }
            SolveStatus::Unbounded => ChebyshevBall {
                center: None,
                radius: f64::INFINITY,
            },
            // Zero rows that are violated make the LP infeasible even with a free radius.
            _ => ChebyshevBall {
                center: None,
                radius: -1.0,
            },
        }
    }

    /// Drop every row that can be removed without enlarging the set.
    pub fn remove_redundancy(&self) -> Result<Self, PolytopeError> {
        if self.is_empty() {
            return Err(PolytopeError::Empty);
        }
        let rows = remove_redundant_rows(self.dim(), self.rows())?;
        Ok(Self::from_rows_unchecked(self.dim(), rows))
    }

    /// Shadow of the set on the coordinates in `keep` (result coordinates follow `keep` order).
    pub fn project(&self, keep: &[usize]) -> Result<Self, PolytopeError> {
        project::project(self, keep, &ProjectionOptions::default())
    }

    pub fn project_with(&self, keep: &[usize], opts: &ProjectionOptions) -> Result<Self, PolytopeError> {
        project::project(self, keep, opts)
    }

    /// Vertices of a bounded 2-D set in counter-clockwise order.
    pub fn polygon_vertices(&self) -> Vec<[f64; 2]> {
        assert_eq!(self.dim(), 2, "polygon_vertices needs a 2-D set");
        let Ok(reduced) = self.remove_redundancy() else {
            return Vec::new();
        };
        let m = reduced.nrows();
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let (a1, b1) = reduced.row(i);
                let (a2, b2) = reduced.row(j);
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (b1 * a2[1] - b2 * a1[1]) / det;
                let y = (a1[0] * b2 - a2[0] * b1) / det;
                if reduced.contains_point(&[x, y], 1e-9)
                    && !pts
                        .iter()
                        .any(|p| (p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9)
                {
                    pts.push([x, y]);
                }
            }
        }
        if pts.is_empty() {
            return pts;
        }
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        pts.sort_by(|p, q| {
            let ap = (p[1] - cy).atan2(p[0] - cx);
            let aq = (q[1] - cy).atan2(q[0] - cx);
            ap.partial_cmp(&aq).unwrap()
        });
        pts
    }

    fn check_dim(&self, n: usize) -> Result<(), PolytopeError> {
        if self.dim() != n {
            return Err(PolytopeError::Dimension(format!(
                "dimensions {} and {} differ",
                self.dim(),
                n
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_indices(idx: &[usize], n: usize) -> Result<(), PolytopeError> {
    let mut seen = vec![false; n];
    for &i in idx {
        if i >= n {
            return Err(PolytopeError::IndexOutOfRange { index: i, dim: n });
        }
        if seen[i] {
            return Err(PolytopeError::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    Ok(())
}

pub(crate) fn support_rows(a: &RowMatrix, b: &[f64], dir: &[f64]) -> Support {
    let sol = solver::lp_rows(dir, a, b);
    match sol.status {
        SolveStatus::Optimal => Support::Bounded {
            value: sol.value,
            argmax: sol.x.expect("optimal LP has a point"),
        },
        SolveStatus::Unbounded => Support::Unbounded,
        SolveStatus::Infeasible => Support::Empty,
        // Treat a stalled LP as unbounded: the containment test then fails conservatively.
        SolveStatus::IterationLimit => Support::Unbounded,
    }
}

/// Merge rows with identical normals (after normalization), keeping the tightest offset.
pub(crate) fn dedupe_rows(rows: Vec<(Vec<f64>, f64)>) -> Vec<(Vec<f64>, f64)> {
    let mut index: HashMap<Vec<i64>, usize> = HashMap::with_capacity(rows.len());
    let mut out: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows.len());
    for (r, b) in rows {
        let key: Vec<i64> = r.iter().map(|v| (v * 1e9).round() as i64).collect();
        match index.get(&key) {
            Some(&k) => {
                if b < out[k].1 {
                    out[k].1 = b;
                }
            }
            None => {
                index.insert(key, out.len());
                out.push((r, b));
            }
        }
    }
    out
}

/// LP-based redundancy elimination on normalized rows.
///
/// Candidates are found in parallel by testing each row against all others; a sequential
/// pass then re-tests candidates against the rows still kept, so mutually redundant rows
/// are not both dropped.
pub(crate) fn remove_redundant_rows(
    n: usize,
    rows: Vec<(Vec<f64>, f64)>,
) -> Result<Vec<(Vec<f64>, f64)>, PolytopeError> {
    let rows = dedupe_rows(rows);
    let m = rows.len();
    if m <= 1 {
        return Ok(rows);
    }
    let mut base = RowMatrix::zeros(m, n);
    let mut bvec = vec![0.0; m];
    for (i, (r, bi)) in rows.iter().enumerate() {
        base.row_mut(i).copy_from_slice(r);
        bvec[i] = *bi;
    }
    let keep_all = vec![true; m];
    let verdicts: Vec<Result<bool, PolytopeError>> =
        par::map_range(m, |i| row_is_redundant(&base, &bvec, &keep_all, i));
    let mut keep = vec![true; m];
    let mut candidates = Vec::new();
    for (i, v) in verdicts.into_iter().enumerate() {
        if v? {
            candidates.push(i);
        }
    }
    for i in candidates {
        keep[i] = false;
        if !row_is_redundant(&base, &bvec, &keep, i)? {
            keep[i] = true;
        }
    }
    Ok(rows
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect())
}

/// Is row `i` implied by the rows flagged in `keep` (row `i` itself excluded)?
fn row_is_redundant(
    base: &RowMatrix,
    b: &[f64],
    keep: &[bool],
    i: usize,
) -> Result<bool, PolytopeError> {
    let n = base.ncols();
    let others: Vec<usize> = (0..base.nrows()).filter(|&j| j != i && keep[j]).collect();
    let mut a = RowMatrix::zeros(others.len() + 1, n);
    let mut bb = Vec::with_capacity(others.len() + 1);
    for (k, &j) in others.iter().enumerate() {
        a.row_mut(k).copy_from_slice(base.row(j));
        bb.push(b[j]);
    }
    // Relaxed copy of row i keeps the LP bounded.
    a.row_mut(others.len()).copy_from_slice(base.row(i));
    bb.push(b[i] + 1.0);
    let sol = solver::lp_rows(base.row(i), &a, &bb);
    match sol.status {
        SolveStatus::Optimal => Ok(sol.value <= b[i] + TOL),
        // The other rows alone are empty: the whole set is empty, so row i adds nothing.
        SolveStatus::Infeasible => Ok(true),
        s => Err(PolytopeError::Lp(s)),
    }
}
