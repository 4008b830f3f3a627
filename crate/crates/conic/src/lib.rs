//! Dense primal-dual interior-point solver for linear conic programs over products of
//! nonnegative orthants, second-order cones and PSD cones.
//!
//! Problems take the form
//!
//! ```text
//! minimize    c^T x
//! subject to  A x = b
//!             h - G x in K
//! ```
//!
//! and are solved through the homogeneous self-dual embedding with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector, so infeasible and unbounded problems
//! come back with certificates instead of diverging.

pub mod cones;
mod dump;
mod hermitian;
mod ipm;
mod kkt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use cones::Cone;
pub use dump::write_sparse_text;
pub use hermitian::{
    hermitian_from_params, hermitian_param_count, hermitian_to_params, lift_hermitian,
    lifted_psd_columns, psd_project_rank, trace_coefficients, unlift_hermitian, PsdFactor,
};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
}

/// A conic program `min c^T x  s.t.  A x = b,  h - G x in K`.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    /// Standard form `min c^T x  s.t.  A x = b,  x in K`: the cone blocks partition `x`.
    pub fn standard_form(
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        cones: Vec<Cone>,
    ) -> ConicProblem {
        let n = c.len();
        ConicProblem {
            c,
            a,
            b,
            g: -DMatrix::identity(n, n),
            h: DVector::zeros(n),
            cones,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn cone_dim(&self) -> usize {
        self.cones.iter().map(|k| k.dim()).sum()
    }

    pub fn degree(&self) -> usize {
        self.cones.iter().map(|k| k.degree()).sum()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.c.len();
        let m = self.cone_dim();
        if self.a.ncols() != n && self.a.nrows() > 0 {
            return Err(ConicError::Dimension(format!(
                "A has {} columns, expected {n}",
                self.a.ncols()
            )));
        }
        if self.a.nrows() != self.b.len() {
            return Err(ConicError::Dimension("A rows differ from b length".into()));
        }
        if self.g.nrows() != m || self.h.len() != m {
            return Err(ConicError::Dimension(format!(
                "cone blocks cover {m} rows but G has {} and h has {}",
                self.g.nrows(),
                self.h.len()
            )));
        }
        if self.g.ncols() != n {
            return Err(ConicError::Dimension("G columns differ from c length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    /// Record per-iteration objective bounds in [`ConicSolution::log`].
    pub record_log: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol: 1e-8,
            max_iter: 200,
            record_log: false,
        }
    }
}

/// Per-iteration snapshot of the normalised iterate.
#[derive(Debug, Clone, Copy)]
pub struct IterLog {
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    /// Bound on how far the objectives may cross because the iterate is infeasible.
    pub infeasibility_slack: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    /// Multipliers of `A x = b`.
    pub y: DVector<f64>,
    /// Multipliers of the cone constraints.
    pub z: DVector<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap_res: f64,
    pub iterations: usize,
    pub log: Vec<IterLog>,
}

/// Solves a conic program with default settings.
pub fn solve(problem: &ConicProblem) -> Result<ConicSolution, ConicError> {
    solve_with(problem, &Settings::default())
}

pub fn solve_with(problem: &ConicProblem, settings: &Settings) -> Result<ConicSolution, ConicError> {
    problem.validate()?;
    Ok(ipm::run(problem, settings))
}

/// Residuals of a candidate primal-dual pair, scaled as in the stopping test.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Most negative cone eigenvalue of `s` and `z`, relative to their size.
    pub cone_violation: f64,
}

pub fn kkt_residuals(
    problem: &ConicProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> KktResiduals {
    let s = &problem.h - &problem.g * x;
    let rp_eq = if problem.b.len() > 0 {
        (&problem.a * x - &problem.b).norm() / problem.b.norm().max(1.0)
    } else {
        0.0
    };
    let mut rd = &problem.c + problem.g.transpose() * z;
    if problem.b.len() > 0 {
        rd += problem.a.transpose() * y;
    }
    let pobj = problem.c.dot(x);
    let mut cone_violation: f64 = 0.0;
    let mut off = 0;
    for k in &problem.cones {
        let d = k.dim();
        let ms = cones::min_eig(k, &s.as_slice()[off..off + d]);
        let mz = cones::min_eig(k, &z.as_slice()[off..off + d]);
        cone_violation = cone_violation.max(-ms / s.norm().max(1.0)).max(-mz / z.norm().max(1.0));
        off += d;
    }
    KktResiduals {
        primal: rp_eq,
        dual: rd.norm() / problem.c.norm().max(1.0),
        gap: s.dot(z).abs() / pobj.abs().max(1.0),
        cone_violation,
    }
}
