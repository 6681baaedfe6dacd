//! Plain-text H-representation files.
//!
//! ```text
//! #hrep dim=3 rows=2 cols=x0,x1,v0
//! 1 0 0 1
//! -1 0.5 0 2
//! ```
//!
//! Each data line is `a_1 ... a_n b`, meaning `a'x <= b`. The optional `cols=` key names the
//! coordinates. Blank lines and lines starting with `//` are ignored.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{HPolyhedron, PolytopeError};

/// An H-rep file: the set plus optional coordinate names.
#[derive(Debug, Clone, PartialEq)]
pub struct HrepFile {
    pub set: HPolyhedron,
    pub columns: Option<Vec<String>>,
}

impl HPolyhedron {
    /// Serialize with shortest round-trip decimal formatting.
    pub fn to_hrep(&self, columns: Option<&[String]>) -> String {
        let mut s = format!("#hrep dim={} rows={}", self.dim(), self.nrows());
        if let Some(cols) = columns {
            assert_eq!(cols.len(), self.dim(), "column names must match the dimension");
            let _ = write!(s, " cols={}", cols.join(","));
        }
        s.push('\n');
        for i in 0..self.nrows() {
            let mut line = String::new();
            for v in self.a().row(i).iter() {
                let _ = write!(line, "{} ", clean(*v));
            }
            let _ = write!(line, "{}", clean(self.b()[i]));
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}

fn clean(v: f64) -> f64 {
    // Avoid printing "-0".
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

pub fn parse_hrep(text: &str) -> Result<HrepFile, PolytopeError> {
    let err = |line: usize, msg: String| PolytopeError::Parse { line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with("//"));
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("#hrep") {
        return Err(err(hline, "header must start with '#hrep'".into()));
    }
    let mut dim = None;
    let mut rows = None;
    let mut columns = None;
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| err(hline, format!("expected key=value, got '{t}'")))?;
        match k {
            "dim" => dim = Some(v.parse::<usize>().map_err(|e| err(hline, format!("dim: {e}")))?),
            "rows" => {
                rows = Some(v.parse::<usize>().map_err(|e| err(hline, format!("rows: {e}")))?)
            }
            "cols" => columns = Some(v.split(',').map(str::to_owned).collect::<Vec<_>>()),
            _ => return Err(err(hline, format!("unknown header key '{k}'"))),
        }
    }
    let dim = dim.ok_or_else(|| err(hline, "missing dim=".into()))?;
    let rows = rows.ok_or_else(|| err(hline, "missing rows=".into()))?;
    if let Some(c) = &columns {
        if c.len() != dim {
            return Err(err(hline, format!("cols lists {} names for dim={dim}", c.len())));
        }
    }
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut count = 0;
    for (ln, l) in lines {
        if count == rows {
            return Err(err(ln, format!("more than rows={rows} data lines")));
        }
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(ln, format!("'{t}': {e}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != dim + 1 {
            return Err(err(ln, format!("expected {} numbers, found {}", dim + 1, vals.len())));
        }
        for j in 0..dim {
            a[(count, j)] = vals[j];
        }
        b[count] = vals[dim];
        count += 1;
    }
    if count != rows {
        return Err(err(0, format!("header declares rows={rows} but found {count}")));
    }
    Ok(HrepFile {
        set: HPolyhedron::new(a, b)?,
        columns,
    })
}
