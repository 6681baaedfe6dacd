//! Fourier–Motzkin projection with LP redundancy removal after every elimination.

use super::{check_indices, dedupe_rows, remove_redundant_rows, HPolyhedron, PolytopeError, ZERO_ROW};
use crate::TOL;

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    /// Abort when an elimination step would produce more rows than this.
    pub max_rows: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { max_rows: 100_000 }
    }
}

type Row = (Vec<f64>, f64);

pub(super) fn project(
    p: &HPolyhedron,
    keep: &[usize],
    opts: &ProjectionOptions,
) -> Result<HPolyhedron, PolytopeError> {
    let n = p.dim();
    check_indices(keep, n)?;
    if p.is_empty() {
        return Err(PolytopeError::Empty);
    }
    let elim: Vec<usize> = (0..n).filter(|j| !keep.contains(j)).collect();
    // Working layout: kept coordinates first (in `keep` order), then eliminated ones.
    let order: Vec<usize> = keep.iter().chain(&elim).copied().collect();
    let mut rows: Vec<Row> = p
        .rows()
        .into_iter()
        .map(|(r, b)| (order.iter().map(|&j| r[j]).collect(), b))
        .collect();
    let mut width = n;
    let k = keep.len();

    while width > k {
        // Greedy choice: the column whose elimination creates the fewest combined rows.
        let mut best = (usize::MAX, k);
        for col in k..width {
            let pos = rows.iter().filter(|(r, _)| r[col] > ZERO_ROW).count();
            let neg = rows.iter().filter(|(r, _)| r[col] < -ZERO_ROW).count();
            let cost = pos * neg;
            if cost < best.0 {
                best = (cost, col);
            }
        }
        let col = best.1;
        rows = eliminate(rows, col, opts.max_rows)?;
        // Drop the eliminated column, moving the last working column into its slot.
        for (r, _) in rows.iter_mut() {
            r.swap(col, width - 1);
            r.truncate(width - 1);
        }
        width -= 1;
        rows = normalize(rows)?;
        rows = remove_redundant_rows(width, rows)?;
    }
    Ok(HPolyhedron::from_rows_unchecked(k, rows))
}

fn eliminate(rows: Vec<Row>, col: usize, cap: usize) -> Result<Vec<Row>, PolytopeError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut out = Vec::new();
    for row in rows {
        let c = row.0[col];
        if c > ZERO_ROW {
            pos.push(row);
        } else if c < -ZERO_ROW {
            neg.push(row);
        } else {
            let mut row = row;
            row.0[col] = 0.0;
            out.push(row);
        }
    }
    let total = out.len() + pos.len() * neg.len();
    if total > cap {
        return Err(PolytopeError::ProjectionIntractable { rows: total, cap });
    }
    for (rp, bp) in &pos {
        let cp = rp[col];
        for (rn, bn) in &neg {
            let cn = -rn[col];
            let mut r: Vec<f64> = rp.iter().zip(rn).map(|(x, y)| cn * x + cp * y).collect();
            r[col] = 0.0;
            out.push((r, cn * bp + cp * bn));
        }
    }
    Ok(out)
}

fn normalize(rows: Vec<Row>) -> Result<Vec<Row>, PolytopeError> {
    let mut out = Vec::with_capacity(rows.len());
    for (mut r, mut b) in rows {
        let norm = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if norm < ZERO_ROW {
            if b < -TOL {
                return Err(PolytopeError::Empty);
            }
            continue;
        }
        r.iter_mut().for_each(|v| *v /= norm);
        b /= norm;
        out.push((r, b));
    }
    Ok(dedupe_rows(out))
}
