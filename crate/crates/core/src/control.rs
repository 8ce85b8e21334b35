//! Feedback laws: the Sontag-type formula, LQR, and feedback-linearizing
//! control tuned to match the LQR at the origin.

use std::fmt;
use std::sync::Arc;

use crate::clf::{lie_from_gradient, Clf, LieDerivatives};
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_pd, symmetrize, Lu, Matrix, Vector};
use crate::model::{
    central_difference_jacobian, gamma_solve, psi_jacobian_at, transform_jacobian_origin, AffineSystem,
    FeedbackLinearization,
};
use crate::riccati::LqrDesign;

/// Which case of the Sontag-type law was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `b(x) ≠ 0`: `u = −R⁻¹bᵀλ`.
    BNonzero,
    /// `b(x) = 0`: `u = 0`.
    BZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlEval {
    pub u: Vector,
    /// `λ(x)`; `None` on the `BZero` branch and for non-Sontag controllers.
    pub lambda: Option<f64>,
    /// `None` for non-Sontag controllers.
    pub branch: Option<Branch>,
    /// Set when `b(x) = 0` and `a(x) ≥ 0` at `x ≠ 0`: no input can decrease
    /// `V` there.
    pub clf_violation: bool,
}

impl ControlEval {
    fn plain(u: Vector) -> Self {
        Self {
            u,
            lambda: None,
            branch: None,
            clf_violation: false,
        }
    }
}

/// `λ = (a + √(a² + q·β)) / β`.
///
/// For `a < 0` the rationalized form `q / (√(a² + q·β) − a)` is used, which
/// avoids cancellation when `q·β ≪ a²`.
pub fn lambda_factor(a: f64, q: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !(q >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda factor needs beta > 0, q ≥ 0 (a = {a}, q = {q}, beta = {beta})"
        )));
    }
    let root = a.hypot((q * beta).sqrt());
    let lambda = if a < 0.0 { q / (root - a) } else { (a + root) / beta };
    if lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(Error::NonFinite("lambda"))
    }
}

/// Sontag-type controller `u = −R⁻¹b(x)ᵀλ(x)` for a given CLF.
#[derive(Clone)]
pub struct SontagController {
    clf: Clf,
    sys: Arc<dyn AffineSystem>,
    q: Matrix,
    r: Matrix,
    r_inv: Matrix,
}

impl fmt::Debug for SontagController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SontagController")
            .field("clf", &self.clf)
            .field("q", &self.q)
            .field("r", &self.r)
            .finish()
    }
}

impl SontagController {
    pub fn new(clf: Clf, sys: Arc<dyn AffineSystem>, q: Matrix, r: Matrix) -> Result<Self> {
        let (n, m) = (sys.state_dim(), sys.input_dim());
        if clf.state_dim() != n || q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::Dimension("CLF, Q and R must match the system".into()));
        }
        if cholesky_pd(&q).is_err() || cholesky_pd(&r).is_err() {
            return Err(Error::BadWeights);
        }
        let r = symmetrize(&r);
        let r_inv = symmetrize(&linalg::inverse(&r)?);
        Ok(Self {
            clf,
            sys,
            q: symmetrize(&q),
            r,
            r_inv,
        })
    }

    pub fn clf(&self) -> &Clf {
        &self.clf
    }

    pub fn system(&self) -> &Arc<dyn AffineSystem> {
        &self.sys
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn r_inv(&self) -> &Matrix {
        &self.r_inv
    }

    pub fn lie(&self, x: &Vector) -> Result<LieDerivatives> {
        let (_, grad) = self.clf.value_grad(x)?;
        Ok(lie_from_gradient(&grad, self.sys.as_ref(), x))
    }

    pub fn evaluate(&self, x: &Vector) -> Result<ControlEval> {
        let lie = self.lie(x)?;
        Ok(self.evaluate_with(x, &lie)?.0)
    }

    /// Evaluate from precomputed Lie derivatives; also returns the closed
    /// form of `dV/dt`: `−√(a² + xᵀQx·bR⁻¹bᵀ)` or `a`.
    pub fn evaluate_with(&self, x: &Vector, lie: &LieDerivatives) -> Result<(ControlEval, f64)> {
        let m = self.r.nrows();
        if lie.b.amax() <= self.clf.tol_b(x) {
            let nonzero = x.iter().any(|v| *v != 0.0);
            let eval = ControlEval {
                u: Vector::zeros(m),
                lambda: None,
                branch: Some(Branch::BZero),
                clf_violation: nonzero && lie.a >= 0.0,
            };
            return Ok((eval, lie.a));
        }
        let q = x.dot(&(&self.q * x));
        let rinv_b = &self.r_inv * &lie.b;
        let beta = lie.b.dot(&rinv_b);
        let lambda = lambda_factor(lie.a, q, beta)?;
        let decay = -lie.a.hypot((q * beta).sqrt());
        let eval = ControlEval {
            u: -rinv_b * lambda,
            lambda: Some(lambda),
            branch: Some(Branch::BNonzero),
            clf_violation: false,
        };
        Ok((eval, decay))
    }
}

pub fn sontag_control(ctrl: &SontagController, x: &Vector) -> Result<ControlEval> {
    ctrl.evaluate(x)
}

/// `u = −K·x`.
pub fn lqr_control(k: &Matrix, x: &Vector) -> Vector {
    -(k * x)
}

#[derive(Debug, Clone)]
pub struct LqrController {
    pub k: Matrix,
}

impl LqrController {
    pub fn new(k: Matrix) -> Self {
        Self { k }
    }

    pub fn from_design(design: &LqrDesign) -> Self {
        Self { k: design.k.clone() }
    }
}

/// Gain `K̃` on `z` such that `u = γ(z)⁻¹(−ψ(z) − K̃z)` has
/// `∂u/∂x(0) = −K_lqr`: `K̃ = γ(0)·K_lqr·J⁻¹ − ∂ψ/∂z(0)`.
pub fn fbl_gain_design(fbl: &dyn FeedbackLinearization, design: &LqrDesign) -> Result<Matrix> {
    let n = design.state_dim();
    let origin = Vector::zeros(n);
    let j_inv = Lu::factor(&transform_jacobian_origin(fbl))?.inverse();
    let gamma0 = fbl.gamma(&origin);
    Lu::factor(&gamma0)?;
    let dpsi = psi_jacobian_at(fbl, &origin);
    Ok(gamma0 * &design.k * j_inv - dpsi)
}

/// Feedback-linearizing controller with linear outer loop `v = −K̃z`.
#[derive(Clone)]
pub struct FblController {
    fbl: Arc<dyn FeedbackLinearization>,
    k_fbl: Matrix,
}

impl fmt::Debug for FblController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FblController")
            .field("k_fbl", &self.k_fbl)
            .field("domain", &self.fbl.domain_description())
            .finish()
    }
}

/// Accepted mismatch between `∂u/∂x(0)` and `−K_lqr`.
pub const FBL_LINEARIZATION_TOL: f64 = 1e-6;

impl FblController {
    pub fn new(fbl: Arc<dyn FeedbackLinearization>, k_fbl: Matrix) -> Self {
        Self { fbl, k_fbl }
    }

    /// Tune the outer-loop gain to the LQR and check the match at the origin.
    pub fn from_design(fbl: Arc<dyn FeedbackLinearization>, design: &LqrDesign) -> Result<Self> {
        let k_fbl = fbl_gain_design(fbl.as_ref(), design)?;
        let ctrl = Self::new(fbl, k_fbl);
        let err = (ctrl.linearization() + &design.k).amax();
        let scale = 1.0 + design.k.amax();
        if err > FBL_LINEARIZATION_TOL * scale {
            return Err(Error::InvalidParameter(format!(
                "feedback-linearizing control does not match the LQR at the origin (error {err:.3e})"
            )));
        }
        Ok(ctrl)
    }

    pub fn gain(&self) -> &Matrix {
        &self.k_fbl
    }

    pub fn fbl(&self) -> &Arc<dyn FeedbackLinearization> {
        &self.fbl
    }

    /// Central-difference `∂u/∂x` at the origin.
    pub fn linearization(&self) -> Matrix {
        let n = self.k_fbl.ncols();
        central_difference_jacobian(
            |x| fbl_control(self, x).expect("origin lies inside the linearization domain"),
            &Vector::zeros(n),
        )
    }
}

/// `u = γ(z)⁻¹(−ψ(z) − K̃z)` with `z = T(x)`.
pub fn fbl_control(ctrl: &FblController, x: &Vector) -> Result<Vector> {
    if !ctrl.fbl.fbl_domain_contains(x) {
        return Err(Error::DomainViolation(format!(
            "x = {:?} outside {}",
            x.as_slice(),
            ctrl.fbl.domain_description()
        )));
    }
    let z = ctrl.fbl.transform(x);
    let v = -(&ctrl.k_fbl * &z);
    gamma_solve(ctrl.fbl.as_ref(), &z, &(v - ctrl.fbl.psi(&z)))
}

/// `½xᵀQx + a(x) − ½b(x)R⁻¹b(x)ᵀ`; zero where `V` solves the HJB equation.
pub fn hjb_residual(clf: &Clf, sys: &dyn AffineSystem, q: &Matrix, r: &Matrix, x: &Vector) -> Result<f64> {
    let (_, grad) = clf.value_grad(x)?;
    let lie = lie_from_gradient(&grad, sys, x);
    let r_lu = Lu::factor(r)?;
    let rinv_b = r_lu.solve(&lie.b);
    Ok(0.5 * x.dot(&(q * x)) + lie.a - 0.5 * lie.b.dot(&rinv_b))
}

/// Any of the designs compared in the closed-loop experiments.
#[derive(Debug, Clone)]
pub enum Controller {
    Sontag(SontagController),
    Lqr(LqrController),
    Fbl(FblController),
    Zero { inputs: usize },
}

impl Controller {
    pub fn evaluate(&self, x: &Vector) -> Result<ControlEval> {
        match self {
            Controller::Sontag(c) => c.evaluate(x),
            Controller::Lqr(c) => Ok(ControlEval::plain(lqr_control(&c.k, x))),
            Controller::Fbl(c) => fbl_control(c, x).map(ControlEval::plain),
            Controller::Zero { inputs } => Ok(ControlEval::plain(Vector::zeros(*inputs))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::Sontag(_) => "sontag",
            Controller::Lqr(_) => "lqr",
            Controller::Fbl(_) => "fbl",
            Controller::Zero { .. } => "zero",
        }
    }
}

impl From<SontagController> for Controller {
    fn from(c: SontagController) -> Self {
        Controller::Sontag(c)
    }
}

impl From<LqrController> for Controller {
    fn from(c: LqrController) -> Self {
        Controller::Lqr(c)
    }
}

impl From<FblController> for Controller {
    fn from(c: FblController) -> Self {
        Controller::Fbl(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clf::{build_lqr_clf, QuadraticClf};
    use crate::model::{linearize, LtiSystem, Pendulum, PendulumParams};
    use crate::riccati::solve_care;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    fn pendulum_setup() -> (Arc<Pendulum>, LqrDesign) {
        let pend = Arc::new(Pendulum::new(PendulumParams::default()).unwrap());
        let (a, b) = linearize(pend.as_ref()).unwrap();
        let design = solve_care(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        (pend, design)
    }

    fn pendulum_sontag(pend: &Arc<Pendulum>, design: &LqrDesign) -> SontagController {
        SontagController::new(
            build_lqr_clf(design).into(),
            pend.clone(),
            design.q.clone(),
            design.r.clone(),
        )
        .unwrap()
    }

    #[test]
    fn lambda_examples() {
        for (q, beta) in [(1.0, 1.0), (0.3, 7.0), (12.0, 0.01)] {
            let a = (beta - q) / 2.0;
            assert_abs_diff_eq!(lambda_factor(a, q, beta).unwrap(), 1.0, epsilon = 1e-15);
        }
        assert_eq!(lambda_factor(0.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(lambda_factor(-3.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(lambda_factor(1.0, 1.0, 0.0).is_err());
        assert!(lambda_factor(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn lambda_rationalized_branch_avoids_cancellation() {
        // q·β ≪ a²: λ ≈ q / (2|a|)
        let lambda = lambda_factor(-1e6, 1e-3, 1e-3).unwrap();
        assert!((lambda - 1e-3 / 2e6).abs() <= 1e-12 * 1e-3 / 2e6);
    }

    #[test]
    fn lqr_control_examples() {
        let k = Matrix::from_row_slice(1, 2, &[1.0, 3f64.sqrt()]);
        assert_eq!(lqr_control(&k, &Vector::zeros(2)), Vector::zeros(1));
        assert_eq!(lqr_control(&k, &v(&[1.0, 0.0]))[0], -1.0);
        let x = v(&[0.2, -0.7]);
        assert_eq!(lqr_control(&k, &(&x * 2.0)), lqr_control(&k, &x) * 2.0);
    }

    #[test]
    fn sontag_at_origin_is_zero() {
        let (pend, design) = pendulum_setup();
        let ctrl = pendulum_sontag(&pend, &design);
        let eval = ctrl.evaluate(&Vector::zeros(2)).unwrap();
        assert_eq!(eval.u, Vector::zeros(1));
        assert_eq!(eval.branch, Some(Branch::BZero));
        assert_eq!(eval.lambda, None);
        assert!(!eval.clf_violation);
    }

    #[test]
    fn sontag_recovers_lqr_on_double_integrator() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let design = solve_care(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        let sys = Arc::new(LtiSystem::new(a, b).unwrap());
        let ctrl = SontagController::new(build_lqr_clf(&design).into(), sys, design.q.clone(), design.r.clone()).unwrap();
        let x = v(&[0.5, -1.5]);
        let eval = ctrl.evaluate(&x).unwrap();
        let u_lqr = lqr_control(&design.k, &x);
        assert!((eval.u - &u_lqr).amax() <= 1e-9 * (1.0 + u_lqr.amax()));
        assert_abs_diff_eq!(eval.lambda.unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sontag_matches_lqr_near_pendulum_origin() {
        let (pend, design) = pendulum_setup();
        let ctrl = pendulum_sontag(&pend, &design);
        let x = v(&[1e-4, 0.0]);
        let u_s = ctrl.evaluate(&x).unwrap().u;
        let u_l = lqr_control(&design.k, &x);
        assert!((u_s - &u_l).norm() / u_l.norm() <= 1e-3);
    }

    #[test]
    fn bzero_with_nonnegative_drift_is_flagged() {
        // Unforced double integrator with a CLF whose gradient is orthogonal
        // to B along x = (1, 0): b = 0 and a = 0.
        let sys = Arc::new(
            LtiSystem::new(
                Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
            )
            .unwrap(),
        );
        let clf = QuadraticClf::new(Matrix::identity(2, 2)).unwrap();
        let ctrl = SontagController::new(clf.into(), sys, Matrix::identity(2, 2), Matrix::identity(1, 1)).unwrap();
        let eval = ctrl.evaluate(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(eval.branch, Some(Branch::BZero));
        assert!(eval.clf_violation);
        assert_eq!(eval.u, Vector::zeros(1));
    }

    #[test]
    fn fbl_gain_for_pendulum() {
        let (pend, design) = pendulum_setup();
        let k_fbl = fbl_gain_design(pend.as_ref(), &design).unwrap();
        let expected = -&design.k - Matrix::from_row_slice(1, 2, &[9.81, 0.0]);
        assert!((&k_fbl - expected).amax() < 1e-12);
        let ctrl = FblController::from_design(pend.clone(), &design).unwrap();
        assert!((ctrl.linearization() + &design.k).amax() < 1e-5);
    }

    #[test]
    fn fbl_control_cancels_nonlinearity() {
        let (pend, design) = pendulum_setup();
        let ctrl = FblController::from_design(pend.clone(), &design).unwrap();
        assert_eq!(fbl_control(&ctrl, &Vector::zeros(2)).unwrap(), Vector::zeros(1));
        for x in [v(&[0.3, 0.0]), v(&[-1.0, 2.0]), v(&[1.2, -0.5])] {
            let u = fbl_control(&ctrl, &x).unwrap();
            let lhs = pend.psi(&x) + pend.gamma(&x) * &u;
            let rhs = -(ctrl.gain() * &x);
            assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + u.amax()));
        }
    }

    #[test]
    fn fbl_control_singular_gamma() {
        let (pend, design) = pendulum_setup();
        let ctrl = FblController::from_design(pend, &design).unwrap();
        let r = fbl_control(&ctrl, &v(&[FRAC_PI_2 - 1e-9, 0.0]));
        assert!(matches!(r, Err(Error::DomainViolation(_))));
        assert!(matches!(fbl_control(&ctrl, &v(&[2.0, 0.0])), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn hjb_residual_cases() {
        let (pend, design) = pendulum_setup();
        let clf: Clf = build_lqr_clf(&design).into();
        assert_eq!(hjb_residual(&clf, pend.as_ref(), &design.q, &design.r, &Vector::zeros(2)).unwrap(), 0.0);
        let res = hjb_residual(&clf, pend.as_ref(), &design.q, &design.r, &v(&[0.5, 0.0])).unwrap();
        assert!(res.abs() > 1e-3, "residual {res}");
        let lin = Arc::new(LtiSystem::new(design.a.clone(), design.b.clone()).unwrap());
        let x = v(&[0.5, -0.3]);
        let res = hjb_residual(&clf, lin.as_ref(), &design.q, &design.r, &x).unwrap();
        assert!(res.abs() <= 1e-9 * (1.0 + x.norm_squared()));
    }

    #[test]
    fn zero_controller() {
        let eval = Controller::Zero { inputs: 2 }.evaluate(&v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(eval.u, Vector::zeros(2));
    }
}
