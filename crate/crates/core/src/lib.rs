//! Control-Lyapunov-function feedback for input-affine systems.
//!
//! The pipeline linearizes a plant at the origin, solves the Riccati
//! equation for an LQR design, turns its value function into a CLF, and
//! builds the Sontag-type law from that CLF. Feedback-linearizable plants
//! additionally get a CLF pulled back through their coordinate change and a
//! feedback-linearizing controller for comparison. The `sim` and `analysis`
//! modules run the closed loops and compare the designs.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clf;
pub mod control;
pub mod design;
pub mod error;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod sim;

pub use analysis::{GridSpec, RoaCertificate, SweepConfig, SweepControllers, SweepResult, SweepRow};
pub use clf::{Clf, LieDerivatives, QuadraticClf, TransformedClf};
pub use control::{Branch, ControlEval, Controller, FblController, LqrController, SontagController};
pub use design::{build_controller, synthesize_lqr, BuiltController, DesignKind, Plant};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{AffineSystem, FeedbackLinearization, FnSystem, LtiSystem, Pendulum, PendulumParams};
pub use riccati::{solve_care, LqrDesign};
pub use sim::{simulate, CostReport, SimConfig, Trajectory};
