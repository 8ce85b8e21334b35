//! Continuous algebraic Riccati equation and LQR gain.
//!
//! `solve_care` seeds a stabilizing solution from the matrix sign function of
//! the Hamiltonian and then polishes it with Kleinman–Newton steps, each of
//! which is a single Lyapunov solve.

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_pd, is_hurwitz, norm_inf, solve_lyapunov, symmetrize, Lu, Matrix};

/// Newton stops once `‖P_{k+1} − P_k‖∞ ≤ NEWTON_TOL · ‖P_k‖∞`.
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 200;
/// Updates this small relative to `‖P‖∞` count as converged once they stop
/// shrinking for [`NEWTON_STALL_ITERS`] iterations.
pub const NEWTON_PLATEAU_TOL: f64 = 1e-8;
pub const NEWTON_STALL_ITERS: usize = 5;
/// Accepted relative ARE residual `‖res‖∞ / ‖Q‖∞`.
pub const RESIDUAL_TOL: f64 = 1e-8;

const SIGN_TOL: f64 = 1e-12;
const SIGN_MAX_ITER: usize = 100;

/// Result of an LQR design on the pair `(A, B)` with weights `(Q, R)`.
#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    /// Stabilizing solution of the Riccati equation.
    pub p: Matrix,
    /// Gain `K = R⁻¹BᵀP`.
    pub k: Matrix,
    /// Newton iterations used after the seed.
    pub iterations: usize,
}

impl LqrDesign {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn residual(&self) -> Matrix {
        care_residual(&self.a, &self.b, &self.q, &self.r, &self.p)
            .expect("design dimensions were validated at construction")
    }

    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖∞ / ‖Q‖∞`.
    pub fn relative_residual(&self) -> f64 {
        norm_inf(&self.residual()) / norm_inf(&self.q)
    }

    pub fn closed_loop(&self) -> Matrix {
        &self.a - &self.b * &self.k
    }

    pub fn is_closed_loop_hurwitz(&self) -> bool {
        is_hurwitz(&self.closed_loop())
    }
}

fn check_dims(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<(usize, usize)> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n || m == 0 {
        return Err(Error::Dimension(format!("B is {}x{}, expected {n} rows", b.nrows(), m)));
    }
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    if r.shape() != (m, m) {
        return Err(Error::Dimension(format!("R must be {m}x{m}")));
    }
    Ok((n, m))
}

/// Riccati residual `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    check_dims(a, b, q, r)?;
    let r_inv = linalg::inverse(r)?;
    Ok(a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &Matrix) -> Result<Matrix> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..SIGN_MAX_ITER {
        let lu = Lu::factor(&z).map_err(|_| {
            Error::NotStabilizable("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let det = lu.determinant().abs();
        let c = if det.is_finite() && det > 0.0 { det.powf(-1.0 / dim) } else { 1.0 };
        let next = (&z * c + lu.inverse() / c) * 0.5;
        let change = (&next - &z).abs().row_sum().amax();
        let size = next.abs().row_sum().amax();
        z = next;
        if !change.is_finite() {
            break;
        }
        if change <= SIGN_TOL * size {
            return Ok(z);
        }
    }
    Err(Error::NotStabilizable(
        "sign iteration on the Hamiltonian did not converge".into(),
    ))
}

/// Stabilizing Riccati solution from the stable invariant subspace of the
/// Hamiltonian, recovered from `sign(H)`.
fn sign_function_seed(a: &Matrix, s: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&h)?;
    // (W + I)·[I; P] = 0
    let eye = Matrix::identity(n, n);
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(w.view((0, 0), (n, n)) + &eye));
    rhs.view_mut((n, 0), (n, n)).copy_from(&w.view((n, 0), (n, n)));
    let normal = lhs.transpose() * &lhs;
    let p = Lu::factor(&normal)
        .map_err(|_| Error::NotStabilizable("stable subspace has no graph form".into()))?
        .solve_matrix(&(-(lhs.transpose() * rhs)));
    Ok(symmetrize(&p))
}

/// Solve `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` for the stabilizing `P ≻ 0`.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrDesign> {
    check_dims(a, b, q, r)?;
    for m in [a, b, q, r] {
        if !linalg::is_valid(m) {
            return Err(Error::NonFinite("CARE input"));
        }
    }
    if cholesky_pd(q).is_err() || cholesky_pd(r).is_err() {
        return Err(Error::BadWeights);
    }
    let q = symmetrize(q);
    let r = symmetrize(r);
    let r_inv = symmetrize(&linalg::inverse(&r)?);
    let rinv_bt = &r_inv * b.transpose();
    let s = symmetrize(&(b * &rinv_bt));

    let mut p = sign_function_seed(a, &s, &q)?;
    let mut k = &rinv_bt * &p;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::NotStabilizable("seed gain is not stabilizing".into()));
    }

    let mut iterations = 0;
    let mut best_change = f64::INFINITY;
    let mut stalled = 0;
    // Best iterate by Riccati residual once the updates are at roundoff level.
    let mut plateau_best: Option<(f64, Matrix)> = None;
    loop {
        if iterations == NEWTON_MAX_ITER {
            return Err(Error::NotStabilizable(format!(
                "Newton iteration did not converge in {NEWTON_MAX_ITER} steps"
            )));
        }
        iterations += 1;
        let closed = a - b * &k;
        let w = &q + k.transpose() * &r * &k;
        let next = solve_lyapunov(&closed, &w)
            .map_err(|_| Error::NotStabilizable("closed loop lost stability".into()))?;
        let change = norm_inf(&(&next - &p));
        p = next;
        let size = norm_inf(&p);
        k = &rinv_bt * &p;
        if change <= NEWTON_TOL * size {
            break;
        }
        // Ill-conditioned problems level off above NEWTON_TOL; stop once the
        // updates are roundoff and let the residual check decide.
        if change < best_change {
            best_change = change;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if change <= NEWTON_PLATEAU_TOL * size {
            let res = norm_inf(&(a.transpose() * &p + &p * a - &p * &s * &p + &q));
            if plateau_best.as_ref().is_none_or(|(best, _)| res < *best) {
                plateau_best = Some((res, p.clone()));
            }
        }
        if stalled >= NEWTON_STALL_ITERS && best_change <= NEWTON_PLATEAU_TOL * size {
            if let Some((_, best)) = plateau_best {
                p = best;
                k = &rinv_bt * &p;
            }
            break;
        }
    }

    let design = LqrDesign {
        a: a.clone(),
        b: b.clone(),
        q,
        r,
        p,
        k,
        iterations,
    };
    if cholesky_pd(&design.p).is_err() {
        return Err(Error::NotStabilizable("Riccati solution is not positive definite".into()));
    }
    if !design.is_closed_loop_hurwitz() {
        return Err(Error::NotStabilizable("A − BK is not Hurwitz".into()));
    }
    let rel = design.relative_residual();
    if !(rel <= RESIDUAL_TOL) {
            return Err(Error::NotStabilizable(format!("ARE residual {rel:.3e} too large")));
    }
    Ok(design)
}

/// `(A, B)` is stabilizable iff the CARE with `Q = I`, `R = I` has a
/// certified stabilizing solution.
pub fn stabilizability_check(a: &Matrix, b: &Matrix) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    if n == 0 || m == 0 {
        return false;
    }
    solve_care(a, b, &Matrix::identity(n, n), &Matrix::identity(m, m)).is_ok()
}
