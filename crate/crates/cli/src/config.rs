//! Scenario configuration files (JSON).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fgmpc::mpc::OcpDesign;
use fgmpc::plant::{ConstraintSpec, EquilibriumMap, LtiPlant};
use fgmpc::polytope::{parse_hrep, HPolyhedron};
use fgmpc::sim::{ControllerKind, Scenario};
use fgmpc::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    pub ts: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ConstraintConfig {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Hrep {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    HrepFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindConfig {
    Mpc,
    MpcFg,
    Cg,
}

impl From<KindConfig> for ControllerKind {
    fn from(k: KindConfig) -> Self {
        match k {
            KindConfig::Mpc => ControllerKind::Mpc,
            KindConfig::MpcFg => ControllerKind::MpcFg,
            KindConfig::Cg => ControllerKind::Cg,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: KindConfig,
    /// Horizon override for this controller.
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub constraints: ConstraintConfig,
    pub epsilon: f64,
    /// Tightening used for the terminal set; defaults to `epsilon`.
    pub terminal_epsilon: Option<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "default_controller")]
    pub controller: KindConfig,
    #[serde(default)]
    pub controllers: Vec<ControllerConfig>,
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "r", alias = "ref")]
    pub reference: Option<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Reference values at which state slices are exported.
    #[serde(default)]
    pub slices: Vec<Vec<f64>>,
    pub nstar_cap: Option<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub state_tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

fn default_controller() -> KindConfig {
    KindConfig::MpcFg
}

fn default_steps() -> usize {
    400
}

fn default_repeats() -> usize {
    5
}

pub fn parse(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        anyhow!("config field `{path}`: {inner}")
    })
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        bail!("config field `{field}`: row {i} has {} entries, expected {ncols}", r.len());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        bail!("config field `{field}`: entries must be finite");
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vector(field: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        bail!("config field `{field}`: expected {len} entries, found {}", v.len());
    }
    if v.iter().any(|x| !x.is_finite()) {
        bail!("config field `{field}`: entries must be finite");
    }
    Ok(DVector::from_column_slice(v))
}

/// Validated problem data shared by all commands.
#[derive(Debug, Clone)]
pub struct Problem {
    pub plant: LtiPlant,
    pub em: EquilibriumMap,
    pub constraints: ConstraintSpec,
    pub design: OcpDesign,
    pub x0: Option<DVector<f64>>,
    pub r: Option<DVector<f64>>,
}

impl Config {
    /// Builds plant, constraint sets, DARE solution and terminal set.
    pub fn problem(&self, base_dir: &Path) -> Result<Problem> {
        let p = &self.plant;
        let plant = LtiPlant::new(
            matrix("plant.A", &p.a)?,
            matrix("plant.B", &p.b)?,
            matrix("plant.C", &p.c)?,
            matrix("plant.D", &p.d)?,
            matrix("plant.E", &p.e)?,
            matrix("plant.F", &p.f)?,
            p.ts,
        )
        .context("config field `plant`")?;
        let em = plant.equilibrium_basis().context("config field `plant`")?;
        let y = match &self.constraints {
            ConstraintConfig::Box { lower, upper } => {
                HPolyhedron::from_box(lower, upper).context("config field `constraints.box`")?
            }
            ConstraintConfig::Hrep { a, b } => HPolyhedron::new(
                matrix("constraints.hrep.A", a)?,
                vector("constraints.hrep.b", b, a.len())?,
            )
            .context("config field `constraints.hrep`")?,
            ConstraintConfig::HrepFile(f) => {
                let path = base_dir.join(f);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("config field `constraints.hrep_file`: {}", path.display()))?;
                parse_hrep(&text)
                    .with_context(|| format!("config field `constraints.hrep_file`: {}", path.display()))?
                    .set
            }
        };
        let constraints = ConstraintSpec::new(&plant, &em, y, self.epsilon)
            .context("config fields `constraints`/`epsilon`")?;
        let teps = self.terminal_epsilon.unwrap_or(self.epsilon);
        let design = OcpDesign::new(
            &plant,
            &em,
            &constraints,
            matrix("Q", &self.q)?,
            matrix("R", &self.r)?,
            self.n,
            teps,
        )
        .context("config fields `Q`/`R`/`terminal_epsilon`")?;
        let x0 = self
            .x0
            .as_ref()
            .map(|v| vector("x0", v, plant.nx()))
            .transpose()?;
        let r = self
            .reference
            .as_ref()
            .map(|v| vector("r", v, em.nv()))
            .transpose()?;
        for (i, s) in self.slices.iter().enumerate() {
            vector(&format!("slices[{i}]"), s, em.nv())?;
        }
        Ok(Problem {
            plant,
            em,
            constraints,
            design,
            x0,
            r,
        })
    }
}

impl Problem {
    pub fn scenario(&self, kind: ControllerKind, n: usize, steps: usize) -> Result<Scenario> {
        let x0 = self.x0.clone().ok_or_else(|| anyhow!("config field `x0` is required"))?;
        let r = self.r.clone().ok_or_else(|| anyhow!("config field `r` is required"))?;
        if steps == 0 {
            bail!("config field `steps`: must be at least 1");
        }
        Ok(Scenario {
            plant: self.plant.clone(),
            constraints: self.constraints.clone(),
            design: self.design.with_horizon(n),
            kind,
            x0,
            r,
            steps,
        })
    }
}
