//! Controller synthesis from the linearization at the equilibrium, and the
//! four designs compared on feedback-linearizable plants:
//!
//! * (i) Sontag-type law with the LQR value function as CLF,
//! * (ii) Sontag-type law with the CLF quadratic in linearizing coordinates,
//! * (iii) feedback linearization with an outer gain matched to the LQR,
//! * (iv) the LQR itself.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::clf::{build_global_clf, build_lqr_clf, Clf};
use crate::control::{Controller, FblController, LqrController, SontagController};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{linearize, AffineSystem, FeedbackLinearization};
use crate::riccati::{solve_care, stabilizability_check, LqrDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignKind {
    SontagLocal,
    SontagGlobal,
    FeedbackLinearizing,
    Lqr,
}

impl DesignKind {
    pub const ALL: [DesignKind; 4] = [
        DesignKind::SontagLocal,
        DesignKind::SontagGlobal,
        DesignKind::FeedbackLinearizing,
        DesignKind::Lqr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DesignKind::SontagLocal => "i",
            DesignKind::SontagGlobal => "ii",
            DesignKind::FeedbackLinearizing => "iii",
            DesignKind::Lqr => "iv",
        }
    }

    pub fn needs_feedback_linearization(self) -> bool {
        matches!(self, DesignKind::SontagGlobal | DesignKind::FeedbackLinearizing)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(DesignKind::SontagLocal),
            "ii" => Ok(DesignKind::SontagGlobal),
            "iii" => Ok(DesignKind::FeedbackLinearizing),
            "iv" => Ok(DesignKind::Lqr),
            other => Err(Error::InvalidParameter(format!("unknown design `{other}` (expected i, ii, iii or iv)"))),
        }
    }
}

/// A plant together with its feedback-linearizing structure, when it has
/// one.
#[derive(Clone)]
pub struct Plant {
    pub sys: Arc<dyn AffineSystem>,
    pub fbl: Option<Arc<dyn FeedbackLinearization>>,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant")
            .field("n", &self.sys.state_dim())
            .field("m", &self.sys.input_dim())
            .field("feedback_linearizable", &self.fbl.is_some())
            .finish()
    }
}

impl Plant {
    pub fn new(sys: Arc<dyn AffineSystem>) -> Self {
        Self { sys, fbl: None }
    }

    pub fn with_fbl(sys: Arc<dyn AffineSystem>, fbl: Arc<dyn FeedbackLinearization>) -> Self {
        Self { sys, fbl: Some(fbl) }
    }
}

/// Linearize, require stabilizability, and solve the Riccati equation for
/// the chosen weights.
pub fn synthesize_lqr(sys: &dyn AffineSystem, q: &Matrix, r: &Matrix) -> Result<LqrDesign> {
    let (a, b) = linearize(sys)?;
    if !stabilizability_check(&a, &b) {
        return Err(Error::NotStabilizable("linearization (A, B) is not stabilizable".into()));
    }
    solve_care(&a, &b, q, r)
}

/// A synthesized controller and the CLF it was built from, if any.
#[derive(Debug, Clone)]
pub struct BuiltController {
    pub kind: DesignKind,
    pub controller: Controller,
    pub clf: Option<Clf>,
}

pub fn build_controller(plant: &Plant, design: &LqrDesign, kind: DesignKind) -> Result<BuiltController> {
    let fbl = || {
        plant.fbl.clone().ok_or_else(|| {
            Error::InvalidParameter(format!("design {kind} requires a feedback-linearizable plant"))
        })
    };
    let sontag = |clf: Clf| -> Result<BuiltController> {
        let ctrl = SontagController::new(clf.clone(), plant.sys.clone(), design.q.clone(), design.r.clone())?;
        Ok(BuiltController {
            kind,
            controller: ctrl.into(),
            clf: Some(clf),
        })
    };
    match kind {
        DesignKind::SontagLocal => sontag(build_lqr_clf(design).into()),
        DesignKind::SontagGlobal => sontag(build_global_clf(design, fbl()?)?.into()),
        DesignKind::FeedbackLinearizing => Ok(BuiltController {
            kind,
            controller: FblController::from_design(fbl()?, design)?.into(),
            clf: Some(build_lqr_clf(design).into()),
        }),
        DesignKind::Lqr => Ok(BuiltController {
            kind,
            controller: LqrController::from_design(design).into(),
            clf: Some(build_lqr_clf(design).into()),
        }),
    }
}
