//! Conic programs over real scalars and complex Hermitian PSD blocks.
//!
//! Build a [`ConicProgram`], then call [`solve`]. Programs with Hermitian
//! blocks and only linear constraints go to a dedicated path-following SDP
//! solver, with Clarabel as the fallback when it stalls; everything else
//! (second-order, exponential cones) goes to Clarabel.

mod clarabel_backend;
mod error;
mod expr;
mod hermitian;
mod ipm;
mod program;
mod standard_form;

pub use error::ConicError;
pub use expr::{LinExpr, Var};
pub use hermitian::{complexify_symmetric, realify_hermitian, HermitianVar, C64};
pub use program::{ConicProgram, Constraint, ConstraintKind, Domain, SolveOutcome, SolveStatus};

/// Default relative accuracy for [`solve`].
pub const DEFAULT_ACCURACY: f64 = 1e-8;

/// Largest Hermitian block for which [`Backend::Auto`] retries with Clarabel.
pub const FALLBACK_MAX_DIM: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Backend {
    /// Path-following for pure SDPs, Clarabel otherwise. Small SDPs on which
    /// path-following stalls are retried with Clarabel.
    #[default]
    Auto,
    Clarabel,
    PathFollowing,
}

/// Solve with the default backend and accuracy.
pub fn solve(prog: &ConicProgram) -> Result<SolveOutcome, ConicError> {
    solve_with(prog, Backend::Auto, DEFAULT_ACCURACY)
}

pub fn solve_with(
    prog: &ConicProgram,
    backend: Backend,
    accuracy: f64,
) -> Result<SolveOutcome, ConicError> {
    prog.validate()?;
    match backend {
        Backend::Clarabel => clarabel_backend::solve(prog, accuracy),
        Backend::PathFollowing => {
            if !standard_form::applicable(prog) {
                return Err(ConicError::Unsupported {
                    backend: "path-following",
                    reason: "needs Hermitian blocks with linear constraints only".into(),
                });
            }
            Ok(standard_form::solve(prog, accuracy))
        }
        Backend::Auto if standard_form::applicable(prog) => {
            let out = standard_form::solve(prog, accuracy);
            let small = prog.hermitian_blocks().iter().all(|h| h.dim() <= FALLBACK_MAX_DIM);
            if out.status == SolveStatus::NumericalFailure && small {
                // nearly empty interiors can stall the path-following iteration;
                // Clarabel's cost grows too fast to use it on larger blocks
                return clarabel_backend::solve(prog, accuracy);
            }
            Ok(out)
        }
        Backend::Auto => clarabel_backend::solve(prog, accuracy),
    }
}
