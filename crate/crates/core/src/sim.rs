//! Fixed-step RK4 closed-loop simulation and the cost functionals evaluated
//! along the recorded samples.

use std::io::{self, Write};

use crate::clf::Clf;
use crate::control::{Controller, SontagController};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::AffineSystem;

pub const DEFAULT_STEP: f64 = 0.01;
pub const DEFAULT_STEPS: usize = 1500;
/// A run counts as stabilized when `‖x_N‖∞` is below this.
pub const STABILIZED_TOL: f64 = 1e-2;
/// Recording stops once `‖x‖∞` exceeds this.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Step size `h` (s).
    pub step: f64,
    /// Number of steps `N`.
    pub steps: usize,
    pub x0: Vector,
    /// Record `V(x_k)` when a CLF is supplied to [`simulate`].
    pub record_clf: bool,
    /// Hold `u_k` over each step instead of re-evaluating the controller at
    /// the RK4 stages.
    pub zero_order_hold: bool,
}

impl SimConfig {
    pub fn new(x0: Vector) -> Self {
        Self {
            step: DEFAULT_STEP,
            steps: DEFAULT_STEPS,
            x0,
            record_clf: true,
            zero_order_hold: false,
        }
    }

    pub fn with_step(mut self, step: f64, steps: usize) -> Self {
        self.step = step;
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) || self.steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "simulation needs h > 0 and N ≥ 1 (h = {}, N = {})",
                self.step, self.steps
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(())
    }
}

/// Event markers attached to a recorded state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub domain_violation: bool,
    pub clf_violation: bool,
    pub diverged: bool,
}

impl StepFlags {
    pub fn is_empty(&self) -> bool {
        !(self.domain_violation || self.clf_violation || self.diverged)
    }

    /// `|`-separated names, empty when no flag is set.
    pub fn to_field(&self) -> String {
        let mut names = Vec::new();
        if self.domain_violation {
            names.push("domain");
        }
        if self.clf_violation {
            names.push("clf");
        }
        if self.diverged {
            names.push("diverged");
        }
        names.join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub step: f64,
    /// Number of steps requested.
    pub requested_steps: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// `u_k` sampled at the start of step `k`; one fewer than `states`.
    pub inputs: Vec<Vector>,
    /// `V(x_k)` per state, empty if no CLF was recorded.
    pub clf_values: Vec<f64>,
    /// `λ(x_k)` per input sample.
    pub lambdas: Vec<Option<f64>>,
    /// Per state.
    pub flags: Vec<StepFlags>,
    /// The run was cut short by divergence or a domain violation.
    pub halted: bool,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        !self.halted && self.inputs.len() == self.requested_steps
    }

    pub fn diverged(&self) -> bool {
        self.flags.iter().any(|f| f.diverged)
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("a trajectory holds at least x0")
    }

    /// `‖x_N‖∞ < STABILIZED_TOL` on a complete run.
    pub fn stabilized(&self) -> bool {
        self.is_complete() && self.final_state().amax() < STABILIZED_TOL
    }

    pub fn clf_violations(&self) -> usize {
        self.flags.iter().filter(|f| f.clf_violation).count()
    }
}

fn rk4<F>(mut rhs: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let k1 = rhs(x)?;
    let k2 = rhs(&(x + &k1 * (h / 2.0)))?;
    let k3 = rhs(&(x + &k2 * (h / 2.0)))?;
    let k4 = rhs(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn closed_loop_rhs(sys: &dyn AffineSystem, u: &Vector, x: &Vector) -> Result<Vector> {
    let dx = sys.drift(x) + sys.input_matrix(x) * u;
    if dx.iter().all(|v| v.is_finite()) {
        Ok(dx)
    } else {
        Err(Error::NonFinite("closed-loop vector field"))
    }
}

/// One classical RK4 step of `ẋ = f(x) + G(x)·u(x)`, with the controller
/// evaluated at every stage.
pub fn rk4_step(sys: &dyn AffineSystem, controller: &Controller, x: &Vector, h: f64) -> Result<Vector> {
    rk4(
        |s| {
            let u = controller.evaluate(s)?.u;
            closed_loop_rhs(sys, &u, s)
        },
        x,
        h,
    )
}

/// One RK4 step with the input held at `u`.
pub fn rk4_step_held(sys: &dyn AffineSystem, u: &Vector, x: &Vector, h: f64) -> Result<Vector> {
    rk4(|s| closed_loop_rhs(sys, u, s), x, h)
}

/// Simulate the closed loop for `cfg.steps` steps. Pathologies end the run
/// and are reported through flags rather than errors.
pub fn simulate(sys: &dyn AffineSystem, controller: &Controller, cfg: &SimConfig, clf: Option<&Clf>) -> Trajectory {
    let h = cfg.step;
    let clf = clf.filter(|_| cfg.record_clf);
    let value = |x: &Vector| clf.map(|c| c.value(x).unwrap_or(f64::NAN));
    let mut traj = Trajectory {
        step: h,
        requested_steps: cfg.steps,
        times: vec![0.0],
        states: vec![cfg.x0.clone()],
        inputs: Vec::with_capacity(cfg.steps),
        clf_values: Vec::new(),
        lambdas: Vec::with_capacity(cfg.steps),
        flags: vec![StepFlags::default()],
        halted: false,
    };
    if let Some(v) = value(&cfg.x0) {
        traj.clf_values.push(v);
    }
    if cfg.validate().is_err() || cfg.x0.len() != sys.state_dim() {
        traj.flags[0].domain_violation = true;
        traj.halted = true;
        return traj;
    }

    let mut x = cfg.x0.clone();
    for k in 0..cfg.steps {
        let eval = match controller.evaluate(&x) {
            Ok(e) => e,
            Err(_) => {
                traj.flags[k].domain_violation = true;
                traj.halted = true;
                break;
            }
        };
        traj.flags[k].clf_violation = eval.clf_violation;
        let next = if cfg.zero_order_hold {
            rk4_step_held(sys, &eval.u, &x, h)
        } else {
            rk4_step(sys, controller, &x, h)
        };
        let next = match next {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                traj.flags[k].diverged = true;
                traj.halted = true;
                break;
            }
            Err(_) => {
                traj.flags[k].domain_violation = true;
                traj.halted = true;
                break;
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            traj.flags[k].diverged = true;
            traj.halted = true;
            break;
        }
        traj.inputs.push(eval.u);
        traj.lambdas.push(eval.lambda);
        traj.times.push((k + 1) as f64 * h);
        if let Some(v) = value(&next) {
            traj.clf_values.push(v);
        }
        let mut flags = StepFlags::default();
        let escaped = next.amax() > DIVERGENCE_BOUND;
        flags.diverged = escaped;
        traj.flags.push(flags);
        traj.states.push(next.clone());
        if escaped {
            traj.halted = true;
            break;
        }
        x = next;
    }
    traj
}

/// `(h/2)·Σ (x_kᵀQx_k + u_kᵀRu_k)` over paired samples.
pub fn quadratic_cost(states: &[Vector], inputs: &[Vector], q: &Matrix, r: &Matrix, h: f64) -> f64 {
    let sum: f64 = states
        .iter()
        .zip(inputs)
        .map(|(x, u)| x.dot(&(q * x)) + u.dot(&(r * u)))
        .sum();
    0.5 * h * sum
}

/// Discrete quadratic performance index over the recorded samples; `+∞`
/// for runs that did not complete.
pub fn cost_index(traj: &Trajectory, q: &Matrix, r: &Matrix) -> f64 {
    if !traj.is_complete() {
        return f64::INFINITY;
    }
    quadratic_cost(&traj.states, &traj.inputs, q, r, traj.step)
}

/// Inverse-optimal cost `(h/2)·Σ (1/λ_k)(x_kᵀQx_k + u_kᵀRu_k)`, with
/// `λ_k := 1` wherever it is undefined. Returns the cost and the number of
/// substitutions.
pub fn distorted_cost(traj: &Trajectory, q: &Matrix, r: &Matrix) -> Result<(f64, usize)> {
    if !traj.is_complete() {
        return Ok((f64::INFINITY, 0));
    }
    let mut fallback = 0;
    let mut sum = 0.0;
    for (k, ((x, u), lambda)) in traj.states.iter().zip(&traj.inputs).zip(&traj.lambdas).enumerate() {
        let weight = match lambda {
            Some(l) if *l > 0.0 => 1.0 / l,
            Some(l) => return Err(Error::NonPositiveLambda { step: k, value: *l }),
            None => {
                fallback += 1;
                1.0
            }
        };
        sum += weight * (x.dot(&(q * x)) + u.dot(&(r * u)));
    }
    Ok((0.5 * traj.step * sum, fallback))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub j_quadratic: f64,
    pub j_distorted: f64,
    pub lambda_fallback_count: usize,
    pub stabilized: bool,
}

pub fn cost_report(traj: &Trajectory, q: &Matrix, r: &Matrix) -> Result<CostReport> {
    let (j_distorted, lambda_fallback_count) = distorted_cost(traj, q, r)?;
    Ok(CostReport {
        j_quadratic: cost_index(traj, q, r),
        j_distorted,
        lambda_fallback_count,
        stabilized: traj.stabilized(),
    })
}

/// Largest normalized gap between the central-difference `dV/dt` along the
/// recorded states and the closed-form decay of the Sontag-type law:
/// `|fd − analytic| / (1 + |analytic|)`.
pub fn lyap_decay_check(traj: &Trajectory, ctrl: &SontagController) -> Result<f64> {
    let values: Vec<f64> = if traj.clf_values.len() == traj.states.len() {
        traj.clf_values.clone()
    } else {
        traj.states
            .iter()
            .map(|x| ctrl.clf().value(x))
            .collect::<Result<_>>()?
    };
    let h = traj.step;
    let mut worst: f64 = 0.0;
    for k in 1..traj.states.len().saturating_sub(1) {
        let x = &traj.states[k];
        let fd = (values[k + 1] - values[k - 1]) / (2.0 * h);
        let lie = ctrl.lie(x)?;
        let (_, analytic) = ctrl.evaluate_with(x, &lie)?;
        worst = worst.max((fd - analytic).abs() / (1.0 + analytic.abs()));
    }
    Ok(worst)
}

fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Format a real with 17 significant digits; `inf` for infinities.
pub fn format_real(v: f64) -> String {
    fmt_real(v)
}

/// Write `t,x1..xn,u1..um,V,lambda,flags`. The last row has no input;
/// undefined `V` and `λ` are empty fields.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, n_inputs: usize, mut out: W) -> io::Result<()> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n_inputs).map(|i| format!("u{i}")));
    header.extend(["V".to_string(), "lambda".to_string(), "flags".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![fmt_real(traj.times[k])];
        row.extend(x.iter().map(|v| fmt_real(*v)));
        match traj.inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|v| fmt_real(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), n_inputs)),
        }
        row.push(traj.clf_values.get(k).map(|v| fmt_real(*v)).unwrap_or_default());
        row.push(traj.lambdas.get(k).copied().flatten().map(fmt_real).unwrap_or_default());
        row.push(traj.flags[k].to_field());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::LqrController;
    use crate::model::{FnSystem, LtiSystem};
    use approx::assert_abs_diff_eq;

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    fn decay_system() -> LtiSystem {
        LtiSystem::new(Matrix::from_element(1, 1, -1.0), Matrix::zeros(1, 1)).unwrap()
    }

    #[test]
    fn frozen_system_does_not_move() {
        let sys = FnSystem::new(2, 1, |_| Vector::zeros(2), |_| Matrix::zeros(2, 1));
        let x = v(&[0.3, -2.0]);
        let next = rk4_step(&sys, &Controller::Zero { inputs: 1 }, &x, 0.1).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn scalar_decay_step() {
        let next = rk4_step(&decay_system(), &Controller::Zero { inputs: 1 }, &v(&[1.0]), 0.1).unwrap();
        // 1 - h + h²/2 - h³/6 + h⁴/24
        assert_abs_diff_eq!(next[0], 0.9048375, epsilon = 1e-15);
        assert!((next[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn zero_start_stays_at_origin() {
        let sys = LtiSystem::new(
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let ctrl = Controller::Lqr(LqrController::new(Matrix::from_row_slice(1, 2, &[1.0, 3f64.sqrt()])));
        let traj = simulate(&sys, &ctrl, &SimConfig::new(Vector::zeros(2)), None);
        assert!(traj.is_complete());
        assert_eq!(traj.states.len(), DEFAULT_STEPS + 1);
        assert_eq!(traj.inputs.len(), DEFAULT_STEPS);
        assert!(traj.states.iter().all(|x| x.amax() == 0.0));
        assert_eq!(cost_index(&traj, &Matrix::identity(2, 2), &Matrix::identity(1, 1)), 0.0);
        let (jd, fallback) = distorted_cost(&traj, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        assert_eq!(jd, 0.0);
        assert_eq!(fallback, DEFAULT_STEPS);
        assert!(traj.stabilized());
        assert_abs_diff_eq!(traj.times[1500], 15.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_trajectory_cost() {
        let states = vec![v(&[1.0, 0.0]); 1500];
        let inputs = vec![v(&[0.0]); 1500];
        let q = Matrix::identity(2, 2);
        let r = Matrix::identity(1, 1);
        assert_abs_diff_eq!(quadratic_cost(&states, &inputs, &q, &r, 0.01), 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(quadratic_cost(&states, &inputs, &(q * 2.0), &r, 0.01), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_is_flagged() {
        let sys = LtiSystem::new(Matrix::from_element(1, 1, 5.0), Matrix::zeros(1, 1)).unwrap();
        let traj = simulate(&sys, &Controller::Zero { inputs: 1 }, &SimConfig::new(v(&[1.0])), None);
        assert!(traj.halted);
        assert!(traj.diverged());
        assert!(!traj.stabilized());
        assert_eq!(cost_index(&traj, &Matrix::identity(1, 1), &Matrix::identity(1, 1)), f64::INFINITY);
        assert_eq!(traj.states.len(), traj.inputs.len() + 1);
    }

    #[test]
    fn nonpositive_lambda_is_rejected() {
        let sys = decay_system();
        let mut traj = simulate(&sys, &Controller::Zero { inputs: 1 }, &SimConfig::new(v(&[1.0])).with_step(0.1, 3), None);
        traj.lambdas[1] = Some(0.0);
        let err = distorted_cost(&traj, &Matrix::identity(1, 1), &Matrix::identity(1, 1)).unwrap_err();
        assert_eq!(err, Error::NonPositiveLambda { step: 1, value: 0.0 });
    }

    #[test]
    fn csv_layout() {
        let traj = simulate(
            &decay_system(),
            &Controller::Zero { inputs: 1 },
            &SimConfig::new(v(&[1.0])).with_step(0.5, 2),
            None,
        );
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,V,lambda,flags");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0,,,");
        assert!(lines[3].ends_with(",,,,"));
    }

    #[test]
    fn invalid_config_is_flagged() {
        let cfg = SimConfig::new(v(&[1.0])).with_step(0.0, 10);
        let traj = simulate(&decay_system(), &Controller::Zero { inputs: 1 }, &cfg, None);
        assert!(traj.halted);
        assert!(traj.flags[0].domain_violation);
    }
}
