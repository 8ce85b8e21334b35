//! Control Lyapunov functions built from an LQR design.
//!
//! Two families are supported: the LQR value function `V(x) = ½xᵀPx`, and
//! `V(x) = ½T(x)ᵀP̃T(x)` quadratic in feedback-linearizing coordinates, with
//! `P̃ = J⁻ᵀPJ⁻¹` (`J = ∂T/∂x(0)`) so that both agree to second order at the
//! origin.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_pd, norm_inf, symmetrize, Lu, Matrix, Vector};
use crate::model::{transform_jacobian_at, transform_jacobian_origin, AffineSystem, FeedbackLinearization};
use crate::riccati::LqrDesign;

/// Absolute part of the `b(x) ≈ 0` threshold.
pub const TOL_B: f64 = 1e-9;
/// Relative drift-decay margin for the CLF inequality.
pub const TOL_A: f64 = 1e-9;

/// `V(x) = ½xᵀPx` with `P ≻ 0`.
#[derive(Debug, Clone)]
pub struct QuadraticClf {
    p: Matrix,
}

impl QuadraticClf {
    pub fn new(p: Matrix) -> Result<Self> {
        cholesky_pd(&p)?;
        Ok(Self { p: symmetrize(&p) })
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn value_grad(&self, x: &Vector) -> (f64, Vector) {
        let grad = &self.p * x;
        (0.5 * x.dot(&grad), grad)
    }
}

/// `V(x) = ½T(x)ᵀP̃T(x)`, defined on the domain of `T`.
#[derive(Clone)]
pub struct TransformedClf {
    p_tilde: Matrix,
    fbl: Arc<dyn FeedbackLinearization>,
}

impl fmt::Debug for TransformedClf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformedClf")
            .field("p_tilde", &self.p_tilde)
            .field("domain", &self.fbl.domain_description())
            .finish()
    }
}

impl TransformedClf {
    pub fn new(p_tilde: Matrix, fbl: Arc<dyn FeedbackLinearization>) -> Result<Self> {
        cholesky_pd(&p_tilde)?;
        if p_tilde.nrows() != fbl.a_tilde().nrows() {
            return Err(Error::Dimension("P̃ does not match the transformed state".into()));
        }
        Ok(Self {
            p_tilde: symmetrize(&p_tilde),
            fbl,
        })
    }

    pub fn p_tilde(&self) -> &Matrix {
        &self.p_tilde
    }

    pub fn fbl(&self) -> &Arc<dyn FeedbackLinearization> {
        &self.fbl
    }

    pub fn value_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        if !self.fbl.fbl_domain_contains(x) {
            return Err(Error::DomainViolation(format!(
                "x = {:?} outside {}",
                x.as_slice(),
                self.fbl.domain_description()
            )));
        }
        let z = self.fbl.transform(x);
        let pz = &self.p_tilde * &z;
        let jac = transform_jacobian_at(self.fbl.as_ref(), x);
        Ok((0.5 * z.dot(&pz), jac.transpose() * pz))
    }
}

#[derive(Debug, Clone)]
pub enum Clf {
    Quadratic(QuadraticClf),
    Transformed(TransformedClf),
}

impl Clf {
    /// `(V(x), ∇V(x))`.
    pub fn value_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "state has length {}, CLF expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        match self {
            Clf::Quadratic(c) => Ok(c.value_grad(x)),
            Clf::Transformed(c) => c.value_grad(x),
        }
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.value_grad(x).map(|(v, _)| v)
    }

    pub fn state_dim(&self) -> usize {
        self.weight().nrows()
    }

    /// `P` or `P̃`.
    pub fn weight(&self) -> &Matrix {
        match self {
            Clf::Quadratic(c) => c.p(),
            Clf::Transformed(c) => c.p_tilde(),
        }
    }

    /// Threshold below which `‖b(x)‖∞` is treated as zero:
    /// `TOL_B · (1 + ‖P‖∞) · ‖x‖`. It scales like `b` itself, so states that
    /// have decayed to tiny norms are not mistaken for the switching set.
    pub fn tol_b(&self, x: &Vector) -> f64 {
        TOL_B * (1.0 + norm_inf(self.weight())) * x.norm()
    }
}

impl From<QuadraticClf> for Clf {
    fn from(c: QuadraticClf) -> Self {
        Clf::Quadratic(c)
    }
}

impl From<TransformedClf> for Clf {
    fn from(c: TransformedClf) -> Self {
        Clf::Transformed(c)
    }
}

/// `a(x) = L_f V(x)` and `b(x) = L_G V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    pub a: f64,
    /// Row vector `∇Vᵀ·G(x)` stored as a column.
    pub b: Vector,
}

impl LieDerivatives {
    /// `inf_u (a + b·u) < 0`: either an input direction exists or the drift
    /// alone decreases `V`.
    pub fn satisfies_condition(&self, x: &Vector, tol_b: f64, tol_a: f64) -> bool {
        self.b.amax() > tol_b || self.a < -tol_a * x.norm_squared()
    }
}

pub fn lie_derivatives(clf: &Clf, sys: &dyn AffineSystem, x: &Vector) -> Result<LieDerivatives> {
    let (_, grad) = clf.value_grad(x)?;
    Ok(lie_from_gradient(&grad, sys, x))
}

pub(crate) fn lie_from_gradient(grad: &Vector, sys: &dyn AffineSystem, x: &Vector) -> LieDerivatives {
    LieDerivatives {
        a: grad.dot(&sys.drift(x)),
        b: sys.input_matrix(x).transpose() * grad,
    }
}

/// Pointwise CLF condition at `x ≠ 0`.
pub fn clf_condition_at(clf: &Clf, sys: &dyn AffineSystem, x: &Vector, tol_b: f64, tol_a: f64) -> Result<bool> {
    Ok(lie_derivatives(clf, sys, x)?.satisfies_condition(x, tol_b, tol_a))
}

/// `P̃ = J⁻ᵀ·P·J⁻¹`.
pub fn transform_p(p: &Matrix, j_t0: &Matrix) -> Result<Matrix> {
    if p.shape() != j_t0.shape() {
        return Err(Error::Dimension("P and ∂T/∂x(0) must have equal shape".into()));
    }
    let j_inv = Lu::factor(j_t0)?.inverse();
    Ok(symmetrize(&(j_inv.transpose() * p * j_inv)))
}

pub fn build_lqr_clf(design: &LqrDesign) -> QuadraticClf {
    QuadraticClf::new(design.p.clone()).expect("LQR designs carry a positive definite P")
}

pub fn build_global_clf(design: &LqrDesign, fbl: Arc<dyn FeedbackLinearization>) -> Result<TransformedClf> {
    let j_t0 = transform_jacobian_origin(fbl.as_ref());
    let p_tilde = transform_p(&design.p, &j_t0)?;
    TransformedClf::new(p_tilde, fbl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{central_difference_jacobian, LtiSystem, Pendulum, PendulumParams};
    use crate::riccati::solve_care;
    use approx::assert_abs_diff_eq;

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    fn double_integrator_design() -> LqrDesign {
        solve_care(
            &Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            &Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
            &Matrix::identity(2, 2),
            &Matrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_value_and_gradient() {
        let s3 = 3f64.sqrt();
        let clf = Clf::from(QuadraticClf::new(Matrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3])).unwrap());
        let (val, grad) = clf.value_grad(&v(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(val, s3 / 2.0, epsilon = 1e-15);
        assert_eq!(grad, v(&[s3, 1.0]));
        let (val, grad) = clf.value_grad(&Vector::zeros(2)).unwrap();
        assert_eq!(val, 0.0);
        assert_eq!(grad, Vector::zeros(2));
    }

    #[test]
    fn quadratic_rejects_indefinite() {
        assert!(QuadraticClf::new(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn transform_p_examples() {
        let p = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(transform_p(&p, &Matrix::identity(2, 2)).unwrap(), p);
        let pt = transform_p(&Matrix::identity(2, 2), &(Matrix::identity(2, 2) * 2.0)).unwrap();
        assert_abs_diff_eq!((pt - Matrix::identity(2, 2) * 0.25).amax(), 0.0, epsilon = 1e-15);
        let pt = transform_p(&Matrix::identity(2, 2), &Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert_abs_diff_eq!((pt - expected).amax(), 0.0, epsilon = 1e-15);
        assert_eq!(
            transform_p(&Matrix::identity(2, 2), &Matrix::zeros(2, 2)).unwrap_err(),
            Error::SingularMatrix
        );
    }

    #[test]
    fn condition_cases() {
        let x = v(&[1.0, 0.0]);
        let lie = LieDerivatives { a: 5.0, b: v(&[1.0, 0.0]) };
        assert!(lie.satisfies_condition(&x, 1e-9, 1e-9));
        let lie = LieDerivatives { a: -1.0, b: v(&[0.0, 0.0]) };
        assert!(lie.satisfies_condition(&x, 1e-9, 1e-9));
        let lie = LieDerivatives { a: 0.0, b: v(&[0.0, 0.0]) };
        assert!(!lie.satisfies_condition(&x, 1e-9, 1e-9));
    }

    #[test]
    fn lqr_clf_from_designs() {
        let s3 = 3f64.sqrt();
        let clf = build_lqr_clf(&double_integrator_design());
        assert!((clf.p() - Matrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3])).amax() < 1e-9);
        let one = Matrix::identity(1, 1);
        let scalar = solve_care(&Matrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert_abs_diff_eq!(build_lqr_clf(&scalar).p()[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lie_derivatives_lti_structure() {
        let d = double_integrator_design();
        let sys = LtiSystem::new(d.a.clone(), d.b.clone()).unwrap();
        let clf = Clf::from(build_lqr_clf(&d));
        let x = v(&[0.3, -1.2]);
        let lie = lie_derivatives(&clf, &sys, &x).unwrap();
        let pa = &d.p * &d.a;
        assert_abs_diff_eq!(lie.a, x.dot(&(&pa * &x)), epsilon = 1e-12);
        assert_abs_diff_eq!(lie.b[0], (x.transpose() * &d.p * &d.b)[(0, 0)], epsilon = 1e-12);
        let zero = lie_derivatives(&clf, &sys, &Vector::zeros(2)).unwrap();
        assert_eq!(zero.a, 0.0);
        assert_eq!(zero.b, Vector::zeros(1));
    }

    #[test]
    fn transformed_identity_matches_quadratic() {
        let pend = Arc::new(Pendulum::new(PendulumParams::default()).unwrap());
        let p = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let q = Clf::from(QuadraticClf::new(p.clone()).unwrap());
        let t = Clf::from(TransformedClf::new(p, pend).unwrap());
        let x = v(&[0.4, -2.0]);
        let (vq, gq) = q.value_grad(&x).unwrap();
        let (vt, gt) = t.value_grad(&x).unwrap();
        assert_abs_diff_eq!(vq, vt, epsilon = 1e-15);
        assert_abs_diff_eq!((gq - gt).amax(), 0.0, epsilon = 1e-15);
        assert!(matches!(t.value_grad(&v(&[2.0, 0.0])), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let clf = Clf::from(QuadraticClf::new(Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0])).unwrap());
        let x = v(&[0.7, -0.2]);
        let fd = central_difference_jacobian(|y| Vector::from_element(1, clf.value(y).unwrap()), &x);
        let (_, grad) = clf.value_grad(&x).unwrap();
        assert!((fd.transpose() - grad).amax() < 1e-6);
    }
}
