//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use sontag_core::analysis::SweepControllers;
use sontag_core::{build_controller, synthesize_lqr, DesignKind, LqrDesign, Matrix, Pendulum, PendulumParams, Plant};

/// Pendulum with default parameters and its `Q = I`, `R = 1` design.
pub struct PendulumFixture {
    pub pend: Arc<Pendulum>,
    pub plant: Plant,
    pub design: LqrDesign,
}

impl PendulumFixture {
    pub fn new() -> Self {
        let pend = Arc::new(Pendulum::new(PendulumParams::default()).expect("default parameters are valid"));
        let plant = Plant::with_fbl(pend.clone(), pend.clone());
        let design = synthesize_lqr(pend.as_ref(), &Matrix::identity(2, 2), &Matrix::identity(1, 1))
            .expect("pendulum is stabilizable");
        Self { pend, plant, design }
    }

    pub fn controller(&self, kind: DesignKind) -> sontag_core::Controller {
        build_controller(&self.plant, &self.design, kind).expect("pendulum supports every design").controller
    }

    pub fn sweep_controllers(&self) -> SweepControllers {
        SweepControllers {
            sontag: self.controller(DesignKind::SontagLocal),
            lqr: self.controller(DesignKind::Lqr),
            fbl: self.controller(DesignKind::FeedbackLinearizing),
        }
    }
}

impl Default for PendulumFixture {
    fn default() -> Self {
        Self::new()
    }
}

/// A fixed controllable `n`-state chain (shifted integrators with light
/// damping) driven at its last state, with `Q = I`, `R = 1`.
pub fn chain_problem(n: usize) -> (Matrix, Matrix, Matrix, Matrix) {
    let a = Matrix::from_fn(n, n, |i, j| {
        if j == i + 1 {
            1.0
        } else if i == j {
            -0.1 * (i as f64 + 1.0) / n as f64
        } else {
            0.0
        }
    });
    let mut b = Matrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    (a, b, Matrix::identity(n, n), Matrix::identity(1, 1))
}
