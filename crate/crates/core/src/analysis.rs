//! Grid-based region-of-attraction comparison, sampled global CLF checks,
//! and the initial-angle sweep.
//!
//! Everything here samples a finite grid. A passing check is evidence on
//! the sampled points only, not a certificate over the continuum.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::clf::{Clf, TOL_B};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, is_valid, norm_inf, symmetrize, Matrix, Vector};
use crate::model::{central_difference_jacobian, AffineSystem, FeedbackLinearization};
use crate::sim::{cost_index, format_real, simulate, SimConfig, DEFAULT_STEP, DEFAULT_STEPS};

/// A point belongs to a decay set when `V̇ < −DECAY_MARGIN`.
pub const DECAY_MARGIN: f64 = 1e-12;
pub const BISECTION_ITERATIONS: usize = 40;

/// Axis-aligned tensor grid; the first axis varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: Vector,
    upper: Vector,
    points_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vector, upper: Vector, points_per_axis: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != points_per_axis.len() || lower.is_empty() {
            return Err(Error::Dimension("grid bounds and counts must share one dimension".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidParameter("grid needs lower < upper on every axis".into()));
        }
        if points_per_axis.iter().any(|&c| c < 2) {
            return Err(Error::InvalidParameter("grid needs at least 2 points per axis".into()));
        }
        Ok(Self {
            lower,
            upper,
            points_per_axis,
        })
    }

    /// Same bounds and count on every axis.
    pub fn square(dim: usize, lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(
            Vector::from_element(dim, lower),
            Vector::from_element(dim, upper),
            vec![points; dim],
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, mut index: usize) -> Vector {
        let d = self.dim();
        let mut x = Vector::zeros(d);
        for axis in (0..d).rev() {
            let count = self.points_per_axis[axis];
            let i = index % count;
            index /= count;
            let (lo, hi) = (self.lower[axis], self.upper[axis]);
            x[axis] = if i + 1 == count {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (count - 1) as f64
            };
        }
        x
    }

    pub fn points(&self) -> Vec<Vector> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Grid points other than the origin.
    pub fn nonzero_points(&self) -> Vec<Vector> {
        self.points().into_iter().filter(|x| x.iter().any(|v| *v != 0.0)).collect()
    }
}

/// `V̇(x) = ∇V·(f(x) + G(x)·u(x))`, or `None` where the CLF or controller
/// cannot be evaluated.
pub fn lyapunov_derivative(sys: &dyn AffineSystem, clf: &Clf, controller: &Controller, x: &Vector) -> Option<f64> {
    let (_, grad) = clf.value_grad(x).ok()?;
    let u = controller.evaluate(x).ok()?.u;
    let vdot = grad.dot(&(sys.drift(x) + sys.input_matrix(x) * u));
    vdot.is_finite().then_some(vdot)
}

/// Whether `V̇` is negative definite to second order at the origin:
/// `JᵀH + HJ ≺ 0` with `J` the closed-loop Jacobian and `H = ∇²V(0)`, both by
/// central differences. No grid resolves the neighbourhood of the origin, so
/// positive levels are only certified when this holds.
pub fn origin_decay_certified(sys: &dyn AffineSystem, clf: &Clf, controller: &Controller) -> bool {
    let n = sys.state_dim();
    let nan = || Vector::from_element(n, f64::NAN);
    let closed_loop = |x: &Vector| match controller.evaluate(x) {
        Ok(eval) => sys.drift(x) + sys.input_matrix(x) * eval.u,
        Err(_) => nan(),
    };
    let origin = Vector::zeros(n);
    let j = central_difference_jacobian(closed_loop, &origin);
    let h = central_difference_jacobian(|x| clf.value_grad(x).map(|(_, g)| g).unwrap_or_else(|_| nan()), &origin);
    let h = symmetrize(&h);
    let decay = -(j.transpose() * &h + &h * &j);
    is_valid(&decay) && is_positive_definite(&symmetrize(&decay))
}

fn decays(vdot: Option<f64>) -> bool {
    vdot.is_some_and(|v| v < -DECAY_MARGIN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaPoint {
    pub x: Vector,
    pub value: f64,
    pub vdot_lqr: Option<f64>,
    pub vdot_sontag: Option<f64>,
    pub member_lqr: bool,
    pub member_sontag: bool,
}

/// Grid instance of the sets `{x ≠ 0 : V(x) ≤ C, V̇(x) < 0}` under the LQR
/// and under the Sontag-type controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RoaCertificate {
    pub level: f64,
    pub grid: GridSpec,
    /// Every nonzero grid point where `V` is defined, in grid order.
    pub points: Vec<RoaPoint>,
    /// Members under the LQR are also members under the Sontag law.
    pub subset_holds: bool,
}

impl RoaCertificate {
    pub fn members_lqr(&self) -> impl Iterator<Item = &Vector> {
        self.points.iter().filter(|p| p.member_lqr).map(|p| &p.x)
    }

    pub fn members_sontag(&self) -> impl Iterator<Item = &Vector> {
        self.points.iter().filter(|p| p.member_sontag).map(|p| &p.x)
    }

    pub fn count_lqr(&self) -> usize {
        self.points.iter().filter(|p| p.member_lqr).count()
    }

    pub fn count_sontag(&self) -> usize {
        self.points.iter().filter(|p| p.member_sontag).count()
    }
}

pub fn roa_certify(
    sys: &dyn AffineSystem,
    clf: &Clf,
    lqr: &Controller,
    sontag: &Controller,
    grid: &GridSpec,
    level: f64,
) -> RoaCertificate {
    let points: Vec<RoaPoint> = grid
        .nonzero_points()
        .into_par_iter()
        .filter_map(|x| {
            let value = clf.value(&x).ok()?;
            let vdot_lqr = lyapunov_derivative(sys, clf, lqr, &x);
            let vdot_sontag = lyapunov_derivative(sys, clf, sontag, &x);
            let inside = value <= level;
            Some(RoaPoint {
                member_lqr: inside && decays(vdot_lqr),
                member_sontag: inside && decays(vdot_sontag),
                x,
                value,
                vdot_lqr,
                vdot_sontag,
            })
        })
        .collect();
    let subset_holds = points.iter().all(|p| !p.member_lqr || p.member_sontag);
    RoaCertificate {
        level,
        grid: grid.clone(),
        points,
        subset_holds,
    }
}

/// `(V, decays)` at every nonzero grid point where `V` is defined.
fn decay_samples(sys: &dyn AffineSystem, clf: &Clf, controller: &Controller, grid: &GridSpec) -> Vec<(f64, bool)> {
    grid.nonzero_points()
        .into_par_iter()
        .filter_map(|x| {
            let value = clf.value(&x).ok()?;
            Some((value, decays(lyapunov_derivative(sys, clf, controller, &x))))
        })
        .collect()
}

/// Largest `C` (by bisection) such that every nonzero grid point with
/// `V ≤ C` has `V̇ < 0` under `controller`; 0 if the innermost point fails or
/// [`origin_decay_certified`] does not hold.
pub fn largest_certified_sublevel(sys: &dyn AffineSystem, clf: &Clf, controller: &Controller, grid: &GridSpec) -> f64 {
    if !origin_decay_certified(sys, clf, controller) {
        return 0.0;
    }
    let samples = decay_samples(sys, clf, controller, grid);
    let Some(v_min) = samples.iter().map(|s| s.0).min_by(f64::total_cmp) else {
        return 0.0;
    };
    let v_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let certified = |c: f64| samples.iter().all(|&(v, ok)| v > c || ok);
    if certified(v_max) {
        return v_max;
    }
    let (mut lo, mut hi) = (0.0, v_max);
    for _ in 0..BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if certified(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo < v_min {
        0.0
    } else {
        lo
    }
}

/// Result of sampling the CLF inequality for `½zᵀP̃z` on `(Ã, B̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalClfReport {
    pub checked: usize,
    pub violations: Vec<Vector>,
}

impl GlobalClfReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// At every nonzero grid point check `α(z) < 0` or `β(z) ≠ 0`, where
/// `α(z) = ½zᵀ(ÃᵀP̃ + P̃Ã)z` and `β(z) = zᵀP̃B̃`.
pub fn clf_condition_samples(a_tilde: &Matrix, b_tilde: &Matrix, p_tilde: &Matrix, grid: &GridSpec) -> GlobalClfReport {
    let lyap = a_tilde.transpose() * p_tilde + p_tilde * a_tilde;
    let pb = p_tilde * b_tilde;
    let tol = TOL_B * (1.0 + norm_inf(p_tilde));
    let points = grid.nonzero_points();
    let violations = points
        .iter()
        .filter(|z| {
            let alpha = 0.5 * z.dot(&(&lyap * *z));
            let beta = pb.transpose() * *z;
            !(alpha < 0.0 || beta.amax() > tol * z.norm())
        })
        .cloned()
        .collect();
    GlobalClfReport {
        checked: points.len(),
        violations,
    }
}

pub fn global_clf_sample_check(fbl: &dyn FeedbackLinearization, p_tilde: &Matrix, grid: &GridSpec) -> GlobalClfReport {
    clf_condition_samples(&fbl.a_tilde(), &fbl.b_tilde(), p_tilde, grid)
}

/// Controllers compared in the sweep.
#[derive(Debug, Clone)]
pub struct SweepControllers {
    pub sontag: Controller,
    pub lqr: Controller,
    pub fbl: Controller,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_angles: usize,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub step: f64,
    pub steps: usize,
    pub zero_order_hold: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_angles: 1000,
            theta_min_deg: 0.0,
            theta_max_deg: 89.0,
            step: DEFAULT_STEP,
            steps: DEFAULT_STEPS,
            zero_order_hold: false,
        }
    }
}

impl SweepConfig {
    /// Equidistant angles over the closed range.
    pub fn angles_deg(&self) -> Vec<f64> {
        match self.n_angles {
            0 => Vec::new(),
            1 => vec![self.theta_min_deg],
            n => (0..n)
                .map(|i| {
                    if i + 1 == n {
                        self.theta_max_deg
                    } else {
                        self.theta_min_deg + (self.theta_max_deg - self.theta_min_deg) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta0_deg: f64,
    pub j_sontag: f64,
    pub j_lqr: f64,
    pub j_fbl: f64,
    /// `J_sontag / J_lqr`; `None` unless both runs stabilized.
    pub ratio_lqr: Option<f64>,
    /// `J_sontag / J_fbl`; `None` unless both runs stabilized.
    pub ratio_fbl: Option<f64>,
    pub stab_sontag: bool,
    pub stab_lqr: bool,
    pub stab_fbl: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn cost_ratio(num: f64, num_ok: bool, den: f64, den_ok: bool) -> Option<f64> {
    if !(num_ok && den_ok) {
        return None;
    }
    if num == 0.0 && den == 0.0 {
        return Some(1.0);
    }
    (den > 0.0).then(|| num / den)
}

fn sweep_row(
    sys: &dyn AffineSystem,
    controllers: &SweepControllers,
    q: &Matrix,
    r: &Matrix,
    cfg: &SweepConfig,
    theta0_deg: f64,
) -> SweepRow {
    let mut sim = SimConfig::new(Vector::from_vec(vec![theta0_deg.to_radians(), 0.0])).with_step(cfg.step, cfg.steps);
    sim.zero_order_hold = cfg.zero_order_hold;
    sim.record_clf = false;
    let run = |c: &Controller| {
        let traj = simulate(sys, c, &sim, None);
        (cost_index(&traj, q, r), traj.stabilized())
    };
    let (j_sontag, stab_sontag) = run(&controllers.sontag);
    let (j_lqr, stab_lqr) = run(&controllers.lqr);
    let (j_fbl, stab_fbl) = run(&controllers.fbl);
    SweepRow {
        theta0_deg,
        j_sontag,
        j_lqr,
        j_fbl,
        ratio_lqr: cost_ratio(j_sontag, stab_sontag, j_lqr, stab_lqr),
        ratio_fbl: cost_ratio(j_sontag, stab_sontag, j_fbl, stab_fbl),
        stab_sontag,
        stab_lqr,
        stab_fbl,
    }
}

/// Simulate every controller from `(θ₀, 0)` for each sweep angle. Rows come
/// back in angle order regardless of scheduling.
pub fn sweep_initial_angles(
    sys: &dyn AffineSystem,
    controllers: &SweepControllers,
    q: &Matrix,
    r: &Matrix,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if sys.state_dim() != 2 {
        return Err(Error::Dimension("the angle sweep needs a state (θ, θ̇)".into()));
    }
    let rows = cfg
        .angles_deg()
        .into_par_iter()
        .map(|theta| sweep_row(sys, controllers, q, r, cfg, theta))
        .collect();
    Ok(SweepResult { rows })
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(result: &SweepResult, mut out: W) -> io::Result<()> {
    writeln!(out, "theta0_deg,J_sontag,J_lqr,J_fbl,ratio_lqr,ratio_fbl,stab_sontag,stab_lqr,stab_fbl")?;
    for row in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            format_real(row.theta0_deg),
            format_real(row.j_sontag),
            format_real(row.j_lqr),
            format_real(row.j_fbl),
            opt_real(row.ratio_lqr),
            opt_real(row.ratio_fbl),
            row.stab_sontag,
            row.stab_lqr,
            row.stab_fbl
        )?;
    }
    Ok(())
}

pub fn write_roa_csv<W: Write>(cert: &RoaCertificate, mut out: W) -> io::Result<()> {
    let n = cert.grid.dim();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["V", "member_lqr", "member_sontag"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for p in &cert.points {
        let mut row: Vec<String> = p.x.iter().map(|v| format_real(*v)).collect();
        row.push(format_real(p.value));
        row.push(p.member_lqr.to_string());
        row.push(p.member_sontag.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
