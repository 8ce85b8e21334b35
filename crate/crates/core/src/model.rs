//! Input-affine models `ẋ = f(x) + G(x)·u`, their linearization at the
//! origin, and the feedback-linearization structure
//! `ż = Ãz + B̃(ψ(z) + γ(z)·u)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix, Vector};

/// Tolerance on `f(0) = 0`, `T(0) = 0` and `ψ(0) = 0`.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;
/// Relative finite-difference step: `h = FD_REL_STEP · (1 + |xᵢ|)`.
pub const FD_REL_STEP: f64 = 1e-6;
/// `γ(z)` counts as singular once a pivot drops below this fraction of
/// `‖γ(0)‖`.
pub const GAMMA_PIVOT_TOL: f64 = 1e-6;

/// An input-affine system with its equilibrium at the origin.
///
/// Implementations must be pure: the closed loop evaluates them from several
/// threads at once.
pub trait AffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Drift `f(x)`.
    fn drift(&self, x: &Vector) -> Vector;
    /// Input matrix `G(x)`, n×m.
    fn input_matrix(&self, x: &Vector) -> Matrix;
    /// Analytic `∂f/∂x`, if known.
    fn drift_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
    /// Operating domain of the raw dynamics.
    fn in_domain(&self, _x: &Vector) -> bool {
        true
    }
}

/// `f(x) + G(x)·u`.
pub fn eval_dynamics(sys: &dyn AffineSystem, x: &Vector, u: &Vector) -> Result<Vector> {
    if x.len() != sys.state_dim() || u.len() != sys.input_dim() {
        return Err(Error::Dimension(format!(
            "expected x in R^{} and u in R^{}, got {} and {}",
            sys.state_dim(),
            sys.input_dim(),
            x.len(),
            u.len()
        )));
    }
    if !sys.in_domain(x) {
        return Err(Error::DomainViolation(format!("x = {:?}", x.as_slice())));
    }
    let dx = sys.drift(x) + sys.input_matrix(x) * u;
    if dx.iter().all(|v| v.is_finite()) {
        Ok(dx)
    } else {
        Err(Error::NonFinite("dynamics"))
    }
}

/// Central-difference Jacobian with step `rel_step · (1 + |xᵢ|)` per axis.
pub fn central_difference_jacobian_with_step<F>(f: F, x: &Vector, rel_step: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let f0 = f(x);
    let mut jac = Matrix::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    jac
}

pub fn central_difference_jacobian<F>(f: F, x: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    central_difference_jacobian_with_step(f, x, FD_REL_STEP)
}

/// Fail unless `f(0) = 0` within [`EQUILIBRIUM_TOL`].
pub fn check_equilibrium(sys: &dyn AffineSystem) -> Result<()> {
    let f0 = sys.drift(&Vector::zeros(sys.state_dim()));
    let err = f0.amax();
    if err <= EQUILIBRIUM_TOL {
        Ok(())
    } else {
        Err(Error::NotAnEquilibrium(err))
    }
}

/// `(A, B) = (∂f/∂x(0), G(0))`.
pub fn linearize(sys: &dyn AffineSystem) -> Result<(Matrix, Matrix)> {
    check_equilibrium(sys)?;
    let origin = Vector::zeros(sys.state_dim());
    let a = sys
        .drift_jacobian(&origin)
        .unwrap_or_else(|| central_difference_jacobian(|x| sys.drift(x), &origin));
    let b = sys.input_matrix(&origin);
    if a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        Ok((a, b))
    } else {
        Err(Error::NonFiniteJacobian)
    }
}

/// `ẋ = A·x + B·u`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: Matrix,
    pub b: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() || a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }
}

impl AffineSystem for LtiSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &Vector) -> Vector {
        &self.a * x
    }
    fn input_matrix(&self, _x: &Vector) -> Matrix {
        self.b.clone()
    }
    fn drift_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.a.clone())
    }
}

type DriftFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type InputFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// A system given by closures; linearization falls back to finite
/// differences.
pub struct FnSystem {
    n: usize,
    m: usize,
    drift: Box<DriftFn>,
    input: Box<InputFn>,
}

impl FnSystem {
    pub fn new<F, G>(n: usize, m: usize, drift: F, input: G) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            drift: Box::new(drift),
            input: Box::new(input),
        }
    }
}

impl fmt::Debug for FnSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSystem").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl AffineSystem for FnSystem {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, x: &Vector) -> Vector {
        (self.drift)(x)
    }
    fn input_matrix(&self, x: &Vector) -> Matrix {
        (self.input)(x)
    }
}

/// Coordinates `z = T(x)` in which the system reads
/// `ż = Ãz + B̃(ψ(z) + γ(z)·u)` with `γ(z)` nonsingular on the domain.
pub trait FeedbackLinearization: Send + Sync {
    /// `T(x)`.
    fn transform(&self, x: &Vector) -> Vector;
    /// Analytic `∂T/∂x`, if known.
    fn transform_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
    fn psi(&self, z: &Vector) -> Vector;
    fn psi_jacobian(&self, _z: &Vector) -> Option<Matrix> {
        None
    }
    fn gamma(&self, z: &Vector) -> Matrix;
    fn a_tilde(&self) -> Matrix;
    fn b_tilde(&self) -> Matrix;
    /// Whether `x` lies where the transformation is valid.
    fn fbl_domain_contains(&self, _x: &Vector) -> bool {
        true
    }
    fn domain_description(&self) -> String {
        "global".to_string()
    }
}

/// `∂T/∂x` at `x`, analytic when available.
pub fn transform_jacobian_at(fbl: &dyn FeedbackLinearization, x: &Vector) -> Matrix {
    fbl.transform_jacobian(x)
        .unwrap_or_else(|| central_difference_jacobian(|v| fbl.transform(v), x))
}

/// `∂ψ/∂z` at `z`, analytic when available.
pub fn psi_jacobian_at(fbl: &dyn FeedbackLinearization, z: &Vector) -> Matrix {
    fbl.psi_jacobian(z)
        .unwrap_or_else(|| central_difference_jacobian(|v| fbl.psi(v), z))
}

/// `∂T/∂x(0)`.
pub fn transform_jacobian_origin(fbl: &dyn FeedbackLinearization) -> Matrix {
    let n = fbl.a_tilde().nrows();
    transform_jacobian_at(fbl, &Vector::zeros(n))
}

/// Solve `γ(z)·u = rhs`, reporting a domain violation once `γ(z)` is
/// numerically singular relative to `γ(0)`.
pub fn gamma_solve(fbl: &dyn FeedbackLinearization, z: &Vector, rhs: &Vector) -> Result<Vector> {
    let gamma = fbl.gamma(z);
    let scale = fbl.gamma(&Vector::zeros(z.len())).amax();
    Lu::factor_with(&gamma, GAMMA_PIVOT_TOL, scale)
        .map(|lu| lu.solve(rhs))
        .map_err(|_| Error::DomainViolation(format!("γ(z) singular at z = {:?}", z.as_slice())))
}

/// Check the structural invariants of a feedback linearization:
/// `T(0) = 0`, `ψ(0) = 0`, `∂T/∂x(0)` invertible, and `γ` nonsingular at
/// every sample inside the domain.
pub fn validate_feedback_linearization(fbl: &dyn FeedbackLinearization, samples: &[Vector]) -> Result<()> {
    let a = fbl.a_tilde();
    let b = fbl.b_tilde();
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("Ã must be n×n and B̃ n×m".into()));
    }
    let origin = Vector::zeros(n);
    let t0 = fbl.transform(&origin).amax();
    let psi0 = fbl.psi(&origin).amax();
    if t0 > EQUILIBRIUM_TOL {
        return Err(Error::InvalidParameter(format!("T(0) ≠ 0 ({t0:.3e})")));
    }
    if psi0 > EQUILIBRIUM_TOL {
        return Err(Error::InvalidParameter(format!("ψ(0) ≠ 0 ({psi0:.3e})")));
    }
    Lu::factor(&transform_jacobian_origin(fbl))?;
    let m = b.ncols();
    for x in samples.iter().filter(|x| fbl.fbl_domain_contains(x)) {
        let z = fbl.transform(x);
        gamma_solve(fbl, &z, &Vector::zeros(m))?;
    }
    Ok(())
}

/// Physical parameters of the cart-driven inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Mass (kg).
    pub mass: f64,
    /// Gravity (m/s²).
    pub gravity: f64,
    /// Length to the center of mass (m).
    pub length: f64,
    /// Inertia about the center of mass (kg·m²).
    pub inertia: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            length: 1.0,
            inertia: 0.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.gravity > 0.0
            && self.length > 0.0
            && self.inertia >= 0.0
            && self.inertia + self.mass * self.length * self.length > 0.0
            && [self.mass, self.gravity, self.length, self.inertia].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("pendulum parameters {self:?}")))
        }
    }
}

/// Inverted pendulum driven by cart acceleration, state `(θ, θ̇)`:
///
/// `θ̈ = (mgL·sin θ − mL·cos θ·u) / (J + mL²)`.
///
/// It is already in feedback-linearized form with `T = id`,
/// `ψ(z) = mgL·sin z₁/(J+mL²)`, `γ(z) = −mL·cos z₁/(J+mL²)`, valid for
/// `|θ| < π/2`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub params: PendulumParams,
    gravity_gain: f64,
    input_gain: f64,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        let denom = params.inertia + params.mass * params.length * params.length;
        Ok(Self {
            params,
            gravity_gain: params.mass * params.gravity * params.length / denom,
            input_gain: params.mass * params.length / denom,
        })
    }

    /// `mgL/(J+mL²)`.
    pub fn gravity_gain(&self) -> f64 {
        self.gravity_gain
    }

    /// `mL/(J+mL²)`.
    pub fn input_gain(&self) -> f64 {
        self.input_gain
    }
}

impl AffineSystem for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], self.gravity_gain * x[0].sin()])
    }
    fn input_matrix(&self, x: &Vector) -> Matrix {
        Matrix::from_column_slice(2, 1, &[0.0, -self.input_gain * x[0].cos()])
    }
    fn drift_jacobian(&self, x: &Vector) -> Option<Matrix> {
        Some(Matrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, self.gravity_gain * x[0].cos(), 0.0],
        ))
    }
}

impl FeedbackLinearization for Pendulum {
    fn transform(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn transform_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(Matrix::identity(2, 2))
    }
    fn psi(&self, z: &Vector) -> Vector {
        Vector::from_element(1, self.gravity_gain * z[0].sin())
    }
    fn psi_jacobian(&self, z: &Vector) -> Option<Matrix> {
        Some(Matrix::from_row_slice(1, 2, &[self.gravity_gain * z[0].cos(), 0.0]))
    }
    fn gamma(&self, z: &Vector) -> Matrix {
        Matrix::from_element(1, 1, -self.input_gain * z[0].cos())
    }
    fn a_tilde(&self) -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }
    fn b_tilde(&self) -> Matrix {
        Matrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn fbl_domain_contains(&self, x: &Vector) -> bool {
        x[0].abs() < FRAC_PI_2
    }
    fn domain_description(&self) -> String {
        "|θ| < π/2".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_6};

    fn pendulum() -> Pendulum {
        Pendulum::new(PendulumParams::default()).unwrap()
    }

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    #[test]
    fn pendulum_dynamics_examples() {
        let p = pendulum();
        let zero = eval_dynamics(&p, &v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(zero, v(&[0.0, 0.0]));

        let dx = eval_dynamics(&p, &v(&[FRAC_PI_6, 0.0]), &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(dx[0], 0.0);
        assert_abs_diff_eq!(dx[1], 4.905, epsilon = 1e-12);

        let dx = eval_dynamics(&p, &v(&[0.0, 0.0]), &v(&[2.0])).unwrap();
        assert_abs_diff_eq!(dx[1], -2.0, epsilon = 1e-15);

        let f = p.drift(&v(&[FRAC_PI_4, 0.0]));
        assert_abs_diff_eq!(f[1], 9.81 * 2f64.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_dynamics_dimension_check() {
        let p = pendulum();
        assert!(matches!(
            eval_dynamics(&p, &v(&[0.0]), &v(&[0.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pendulum_linearization() {
        let (a, b) = linearize(&pendulum()).unwrap();
        assert_eq!(a, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 9.81, 0.0]));
        assert_eq!(b, Matrix::from_column_slice(2, 1, &[0.0, -1.0]));
        let fd = central_difference_jacobian(|x| pendulum().drift(x), &Vector::zeros(2));
        assert!((fd - a).amax() < 1e-6);
    }

    #[test]
    fn lti_linearization_is_exact() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 4.0]);
        let sys = LtiSystem::new(a.clone(), b.clone()).unwrap();
        assert_eq!(linearize(&sys).unwrap(), (a, b));
    }

    #[test]
    fn fn_system_linearization() {
        let sys = FnSystem::new(
            2,
            1,
            |x| v(&[x[1], -x[0].sin()]),
            |_| Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        let (a, b) = linearize(&sys).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((a - expected).amax() < 1e-9);
        assert_eq!(b, Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn linearize_rejects_non_equilibrium() {
        let sys = FnSystem::new(1, 1, |x| v(&[x[0] + 1.0]), |_| Matrix::identity(1, 1));
        assert!(matches!(linearize(&sys), Err(Error::NotAnEquilibrium(_))));
    }

    #[test]
    fn linearize_rejects_nan() {
        let sys = FnSystem::new(
            1,
            1,
            |x| v(&[if x[0] == 0.0 { 0.0 } else { f64::NAN }]),
            |_| Matrix::identity(1, 1),
        );
        assert_eq!(linearize(&sys).unwrap_err(), Error::NonFiniteJacobian);
    }

    #[test]
    fn pendulum_feedback_linearization() {
        let p = pendulum();
        assert_eq!(transform_jacobian_origin(&p), Matrix::identity(2, 2));
        assert_eq!(p.gamma(&Vector::zeros(2))[(0, 0)], -1.0);
        assert_eq!(p.transform(&v(&[0.3, -1.0])), v(&[0.3, -1.0]));
        let samples: Vec<Vector> = (-15..=15).map(|i| v(&[0.1 * i as f64, 0.0])).collect();
        validate_feedback_linearization(&p, &samples).unwrap();
        assert!(!p.fbl_domain_contains(&v(&[FRAC_PI_2, 0.0])));
    }

    #[test]
    fn gamma_solve_near_singularity() {
        let p = pendulum();
        let z = v(&[FRAC_PI_2 - 1e-9, 0.0]);
        assert!(matches!(gamma_solve(&p, &z, &v(&[1.0])), Err(Error::DomainViolation(_))));
        let z = v(&[89f64.to_radians(), 0.0]);
        assert!(gamma_solve(&p, &z, &v(&[1.0])).is_ok());
    }

    #[test]
    fn invalid_params() {
        let bad = PendulumParams { mass: 0.0, ..Default::default() };
        assert!(Pendulum::new(bad).is_err());
        let bad = PendulumParams { inertia: -1.0, ..Default::default() };
        assert!(Pendulum::new(bad).is_err());
    }
}
