#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub const DEFAULT_SEED: u64 = 0x5eed_c1f0;

/// Seed for randomized tests; override with `SONTAG_TEST_SEED`.
pub fn test_seed() -> u64 {
    std::env::var("SONTAG_TEST_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

pub fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(test_seed() ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    Uniform::new(lo, hi).unwrap().sample(rng)
}

pub fn uniform_usize(rng: &mut ChaCha8Rng, lo: usize, hi_inclusive: usize) -> usize {
    Uniform::new_inclusive(lo, hi_inclusive).unwrap().sample(rng)
}

/// Random symmetric positive definite `MMᵀ/n + shift·I`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = randn(rng, n, n);
    let s = &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift;
    (&s + s.transpose()) * 0.5
}

/// Random LTI problem `(A, B, Q, R)` with n ≤ 5, m ≤ 2, drawn until the pair
/// is stabilizable with margin [`MIN_PBH_MARGIN`].
pub struct LtiProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub fn random_lti(rng: &mut ChaCha8Rng) -> LtiProblem {
    loop {
        let n = uniform_usize(rng, 1, 5);
        let m = uniform_usize(rng, 1, 2);
        let a = randn(rng, n, n) / (n as f64).sqrt();
        let b = randn(rng, n, m);
        if pbh_margin(&a, &b) < MIN_PBH_MARGIN {
            continue;
        }
        return LtiProblem {
            a,
            b,
            q: random_pd(rng, n, 0.5),
            r: random_pd(rng, m, 0.5),
        };
    }
}

/// Pairs closer than this to an unstabilizable one have Riccati solutions too
/// large for a `1e-8·‖Q‖` residual in double precision.
pub const MIN_PBH_MARGIN: f64 = 0.2;

/// `min σ_min([A − λI, B])` over eigenvalues with `Re λ ≥ 0` (PBH distance).
pub fn pbh_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let m = b.ncols();
    let mut margin = f64::INFINITY;
    for lambda in a.complex_eigenvalues().iter().filter(|l| l.re >= 0.0) {
        let pencil = DMatrix::from_fn(n, n + m, |i, j| {
            if j < n {
                Complex::new(a[(i, j)], 0.0) - if i == j { *lambda } else { Complex::new(0.0, 0.0) }
            } else {
                Complex::new(b[(i, j - n)], 0.0)
            }
        });
        margin = margin.min(pencil.singular_values().min());
    }
    margin
}

/// Independent Hurwitz oracle from eigenvalues.
pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

pub mod pendulum {
    use std::sync::Arc;

    use sontag_core::analysis::SweepControllers;
    use sontag_core::clf::Clf;
    use sontag_core::control::{Controller, SontagController};
    use sontag_core::design::{build_controller, synthesize_lqr, DesignKind, Plant};
    use sontag_core::linalg::Matrix;
    use sontag_core::model::{Pendulum, PendulumParams};
    use sontag_core::riccati::LqrDesign;

    pub struct Setup {
        pub pend: Arc<Pendulum>,
        pub plant: Plant,
        pub design: LqrDesign,
        pub q: Matrix,
        pub r: Matrix,
    }

    impl Setup {
        pub fn new() -> Self {
            let pend = Arc::new(Pendulum::new(PendulumParams::default()).unwrap());
            let plant = Plant::with_fbl(pend.clone(), pend.clone());
            let q = Matrix::identity(2, 2);
            let r = Matrix::identity(1, 1);
            let design = synthesize_lqr(pend.as_ref(), &q, &r).unwrap();
            Self { pend, plant, design, q, r }
        }

        pub fn controller(&self, kind: DesignKind) -> Controller {
            build_controller(&self.plant, &self.design, kind).unwrap().controller
        }

        pub fn local_clf(&self) -> Clf {
            build_controller(&self.plant, &self.design, DesignKind::SontagLocal).unwrap().clf.unwrap()
        }

        pub fn sontag_local(&self) -> SontagController {
            match self.controller(DesignKind::SontagLocal) {
                Controller::Sontag(c) => c,
                _ => unreachable!(),
            }
        }

        pub fn sweep_controllers(&self) -> SweepControllers {
            SweepControllers {
                sontag: self.controller(DesignKind::SontagLocal),
                lqr: self.controller(DesignKind::Lqr),
                fbl: self.controller(DesignKind::FeedbackLinearizing),
            }
        }
    }
}
