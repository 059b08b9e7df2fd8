//! Minimization of the linearized functionals `E^I`, `F^I` and of the
//! rescaled nonlinear functional `F^I_h`.

pub mod assembly;
pub mod flowparam;
pub mod lbfgs;
pub mod linear;
pub mod nonlinear;

use serde::{Deserialize, Serialize};

use crate::domain::{DivConstraint, NodalField};
use crate::error::{Error, Result};
use crate::tensor::Vec3;

pub use flowparam::{minimize_nonlinear_flowparam, FlowParamBasis};
pub use linear::{minimize_e_i, minimize_f_i, project_rigid, LinearProblem, RigidPart};
pub use nonlinear::{minimize_nonlinear, NonlinearObjective};

/// Increasing penalty weights for the `det = 1` constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PenaltySchedule {
    pub betas: Vec<f64>,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule { betas: vec![1e2, 1e4, 1e6, 1e8] }
    }
}

impl PenaltySchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        let s = PenaltySchedule { betas };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::Config("penalty schedule is empty".into()));
        }
        if self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("penalty weights must be positive".into()));
        }
        if self.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("penalty weights must increase strictly".into()));
        }
        Ok(())
    }
}

fn default_tol_opt() -> f64 {
    1e-8
}
fn default_tol_det_soft() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    2000
}
fn default_memory() -> usize {
    10
}
fn default_tol_div() -> f64 {
    1e-11
}
fn default_uzawa_penalty() -> f64 {
    1e4
}
fn default_uzawa_max_iter() -> usize {
    2000
}
fn default_substeps() -> usize {
    16
}
fn default_flow_degree() -> u32 {
    6
}
fn default_flow_max_iter() -> usize {
    60
}

/// Solver block of a scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_tol_opt")]
    pub tol_opt: f64,
    #[serde(default = "default_tol_det_soft")]
    pub tol_det_soft: f64,
    #[serde(default)]
    pub schedule: PenaltySchedule,
    /// L-BFGS iteration cap per penalty stage.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default)]
    pub constraint: DivConstraint,
    /// Absolute tolerance on the discrete divergence in linear solves.
    #[serde(default = "default_tol_div")]
    pub tol_div: f64,
    /// Augmentation weight of the Uzawa iteration, relative to the
    /// stiffness-to-divergence trace ratio.
    #[serde(default = "default_uzawa_penalty")]
    pub uzawa_penalty: f64,
    #[serde(default = "default_uzawa_max_iter")]
    pub uzawa_max_iter: usize,
    /// RK4 substeps of the flow-parametrized solver.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Maximal monomial degree of the vector potentials in the
    /// flow-parametrized solver.
    #[serde(default = "default_flow_degree")]
    pub flow_degree: u32,
    #[serde(default = "default_flow_max_iter")]
    pub flow_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_opt: default_tol_opt(),
            tol_det_soft: default_tol_det_soft(),
            schedule: PenaltySchedule::default(),
            max_iter: default_max_iter(),
            memory: default_memory(),
            constraint: DivConstraint::default(),
            tol_div: default_tol_div(),
            uzawa_penalty: default_uzawa_penalty(),
            uzawa_max_iter: default_uzawa_max_iter(),
            substeps: default_substeps(),
            flow_degree: default_flow_degree(),
            flow_max_iter: default_flow_max_iter(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("tol_opt", self.tol_opt)?;
        pos("tol_det_soft", self.tol_det_soft)?;
        pos("tol_div", self.tol_div)?;
        pos("uzawa_penalty", self.uzawa_penalty)?;
        if self.max_iter == 0 || self.memory == 0 || self.uzawa_max_iter == 0 || self.flow_max_iter == 0 {
            return Err(Error::Config("iteration caps and memory must be positive".into()));
        }
        if self.substeps < 4 {
            return Err(Error::Config(format!("need at least 4 substeps, got {}", self.substeps)));
        }
        if !(2..=6).contains(&self.flow_degree) {
            return Err(Error::Config(format!("flow_degree must lie in 2..=6, got {}", self.flow_degree)));
        }
        Ok(())
    }
}

/// Result of a linearized minimization.
#[derive(Debug, Clone, Serialize)]
pub struct LinearSolveReport {
    #[serde(skip)]
    pub v_star: NodalField,
    pub value: f64,
    /// Max `|div v - c|` over the active constraint rows.
    pub div_residual: f64,
    /// Norm of the gradient of the Lagrangian, rigid components removed.
    pub opt_residual: f64,
    /// Optimal axial vector of the outer skew minimization (`F^I` only).
    pub w_star: Option<Vec3>,
    pub uzawa_iterations: usize,
}

/// Result of a nonlinear minimization.
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearReport {
    #[serde(skip)]
    pub v_h: NodalField,
    /// `h⁻² ∫ W(x, I + h∇v) - L(v)` without the penalty term.
    pub value: f64,
    /// Max `|det(I + h∇v) - 1|` over the active constraint points.
    pub det_violation: f64,
    pub iterations: usize,
    pub penalty_final: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub message: String,
}
