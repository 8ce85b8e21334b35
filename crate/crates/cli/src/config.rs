//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use sontag_core::analysis::{GridSpec, SweepConfig};
use sontag_core::design::{DesignKind, Plant};
use sontag_core::linalg::{Matrix, Vector};
use sontag_core::model::{LtiSystem, Pendulum, PendulumParams};
use sontag_core::sim::{DEFAULT_STEP, DEFAULT_STEPS};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_THETA0_DEG: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_design")]
    pub design: String,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub roa: RoaSection,
}

fn default_design() -> String {
    DesignKind::SontagLocal.label().to_string()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            design: default_design(),
            out: default_out(),
            seed: DEFAULT_SEED,
            system: SystemConfig::default(),
            weights: WeightsConfig::default(),
            sim: SimSection::default(),
            sweep: SweepSection::default(),
            roa: RoaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemConfig {
    Pendulum {
        #[serde(default = "default_mass")]
        mass: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default)]
        inertia: f64,
    },
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
}

fn default_mass() -> f64 {
    PendulumParams::default().mass
}
fn default_gravity() -> f64 {
    PendulumParams::default().gravity
}
fn default_length() -> f64 {
    PendulumParams::default().length
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p = PendulumParams::default();
        SystemConfig::Pendulum {
            mass: p.mass,
            gravity: p.gravity,
            length: p.length,
            inertia: p.inertia,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    /// Defaults to the identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Defaults to the identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_step")]
    pub h: f64,
    #[serde(default = "default_steps")]
    pub n: usize,
    /// Initial state; mutually exclusive with `theta0_deg`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial angle for two-state plants, starting at rest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0_deg: Option<f64>,
    #[serde(default)]
    pub zoh: bool,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            h: DEFAULT_STEP,
            n: DEFAULT_STEPS,
            x0: None,
            theta0_deg: None,
            zoh: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_n_angles")]
    pub n_angles: usize,
    #[serde(default)]
    pub theta_min_deg: f64,
    #[serde(default = "default_theta_max")]
    pub theta_max_deg: f64,
}

fn default_n_angles() -> usize {
    SweepConfig::default().n_angles
}
fn default_theta_max() -> f64 {
    SweepConfig::default().theta_max_deg
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_angles: default_n_angles(),
            theta_min_deg: 0.0,
            theta_max_deg: default_theta_max(),
        }
    }
}

/// Sublevel used for ROA membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelPolicy {
    Fixed(f64),
    Named(LevelName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelName {
    /// The largest sublevel certified for LQR.
    Largest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaSection {
    #[serde(default = "default_roa_lower")]
    pub lower: Vec<f64>,
    #[serde(default = "default_roa_upper")]
    pub upper: Vec<f64>,
    #[serde(default = "default_roa_points")]
    pub points: Vec<usize>,
    #[serde(default = "default_level")]
    pub level: LevelPolicy,
}

fn default_roa_lower() -> Vec<f64> {
    vec![-1.4, -4.0]
}
fn default_roa_upper() -> Vec<f64> {
    vec![1.4, 4.0]
}
fn default_roa_points() -> Vec<usize> {
    vec![101, 101]
}
fn default_level() -> LevelPolicy {
    LevelPolicy::Named(LevelName::Largest)
}

impl Default for RoaSection {
    fn default() -> Self {
        Self {
            lower: default_roa_lower(),
            upper: default_roa_upper(),
            points: default_roa_points(),
            level: default_level(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub design: Option<String>,
    pub theta0_deg: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub zoh: bool,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> anyhow::Result<Matrix> {
    ensure!(!rows.is_empty(), "{name} has no rows");
    let cols = rows[0].len();
    ensure!(cols > 0, "{name} has an empty row");
    ensure!(
        rows.iter().all(|r| r.len() == cols),
        "{name} rows have different lengths"
    );
    ensure!(
        rows.iter().flatten().all(|v| v.is_finite()),
        "{name} has non-finite entries"
    );
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.design {
            self.design = d.clone();
        }
        if let Some(t) = o.theta0_deg {
            self.sim.theta0_deg = Some(t);
            self.sim.x0 = None;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.zoh {
            self.sim.zoh = true;
        }
    }

    pub fn design_kind(&self) -> anyhow::Result<DesignKind> {
        self.design.parse::<DesignKind>().map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn plant(&self) -> anyhow::Result<Plant> {
        match &self.system {
            SystemConfig::Pendulum {
                mass,
                gravity,
                length,
                inertia,
            } => {
                let pend = Arc::new(Pendulum::new(PendulumParams {
                    mass: *mass,
                    gravity: *gravity,
                    length: *length,
                    inertia: *inertia,
                })?);
                Ok(Plant::with_fbl(pend.clone(), pend))
            }
            SystemConfig::Lti { a, b } => {
                let sys = LtiSystem::new(matrix_from_rows("system.a", a)?, matrix_from_rows("system.b", b)?)?;
                Ok(Plant::new(Arc::new(sys)))
            }
        }
    }

    /// `(Q, R)` with identity defaults sized to the plant.
    pub fn weights(&self, n: usize, m: usize) -> anyhow::Result<(Matrix, Matrix)> {
        let q = match &self.weights.q {
            Some(rows) => matrix_from_rows("weights.q", rows)?,
            None => Matrix::identity(n, n),
        };
        let r = match &self.weights.r {
            Some(rows) => matrix_from_rows("weights.r", rows)?,
            None => Matrix::identity(m, m),
        };
        ensure!(q.shape() == (n, n), "weights.q must be {n}x{n}");
        ensure!(r.shape() == (m, m), "weights.r must be {m}x{m}");
        Ok((q, r))
    }

    /// Initial state for `simulate`.
    pub fn initial_state(&self, n: usize) -> anyhow::Result<Vector> {
        match (&self.sim.x0, self.sim.theta0_deg) {
            (Some(_), Some(_)) => bail!("sim.x0 and sim.theta0_deg are mutually exclusive"),
            (Some(x0), None) => {
                ensure!(x0.len() == n, "sim.x0 has length {}, the system has {n} states", x0.len());
                ensure!(x0.iter().all(|v| v.is_finite()), "sim.x0 has non-finite entries");
                Ok(Vector::from_column_slice(x0))
            }
            (None, theta) => {
                ensure!(n == 2, "sim.x0 is required for a {n}-state system");
                let theta = theta.unwrap_or(DEFAULT_THETA0_DEG);
                ensure!(theta.is_finite(), "sim.theta0_deg must be finite");
                Ok(Vector::from_vec(vec![theta.to_radians(), 0.0]))
            }
        }
    }

    pub fn sweep_config(&self) -> anyhow::Result<SweepConfig> {
        let s = &self.sweep;
        ensure!(s.n_angles > 0, "sweep.n_angles must be positive");
        ensure!(
            s.theta_min_deg.is_finite() && s.theta_max_deg.is_finite() && s.theta_min_deg <= s.theta_max_deg,
            "sweep range must satisfy theta_min_deg <= theta_max_deg"
        );
        self.check_sim()?;
        Ok(SweepConfig {
            n_angles: s.n_angles,
            theta_min_deg: s.theta_min_deg,
            theta_max_deg: s.theta_max_deg,
            step: self.sim.h,
            steps: self.sim.n,
            zero_order_hold: self.sim.zoh,
        })
    }

    pub fn check_sim(&self) -> anyhow::Result<()> {
        ensure!(self.sim.h.is_finite() && self.sim.h > 0.0, "sim.h must be positive");
        ensure!(self.sim.n > 0, "sim.n must be positive");
        Ok(())
    }

    pub fn roa_grid(&self, n: usize) -> anyhow::Result<GridSpec> {
        let r = &self.roa;
        ensure!(
            r.lower.len() == n && r.upper.len() == n && r.points.len() == n,
            "roa.lower, roa.upper and roa.points need {n} entries each"
        );
        Ok(GridSpec::new(
            Vector::from_column_slice(&r.lower),
            Vector::from_column_slice(&r.upper),
            r.points.clone(),
        )?)
    }

    /// Normalize weights to explicit matrices so the emitted config does not
    /// depend on defaults.
    pub fn effective(&self, q: &Matrix, r: &Matrix) -> Self {
        let mut eff = self.clone();
        eff.weights.q = Some(rows_from_matrix(q));
        eff.weights.r = Some(rows_from_matrix(r));
        eff
    }
}
