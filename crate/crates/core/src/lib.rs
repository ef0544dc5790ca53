//! Empirical individual-state observability.
//!
//! The pipeline has four stages, each in its own module:
//!
//! 1. [`sysmodel`] simulates a dynamical system (continuous systems use
//!    fixed-step RK4 with zero-order-hold inputs).
//! 2. [`empobs`] perturbs the initial state of a window by `±ε·e_j`, stacks
//!    the central differences of the outputs into the empirical
//!    observability matrix and derives Gramian-level measures from it.
//! 3. [`sparsereco`] finds a sparse linear combination of matrix rows that
//!    reconstructs one or more state basis vectors within an elementwise
//!    tolerance.
//! 4. [`eiso`] iterates the sparse selection, scores every accumulated row
//!    subset with a rank-truncated squared condition number and reports the
//!    minimum over iterations.
//!
//! [`cli`] wires these together into config-driven experiments that write
//! CSV/JSON reports.
//!
//! ```
//! use eiso_core::eiso::{run, EisoParams};
//! use eiso_core::empobs::EmpiricalObservabilityMatrix;
//! use nalgebra::DMatrix;
//!
//! // Two sensors: one measures x1 directly, the other measures x1 + x2.
//! let m = EmpiricalObservabilityMatrix::from_entries(
//!     DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
//!     2,
//! )
//! .unwrap();
//! let res = run(&m, &[0], &EisoParams::default()).unwrap();
//! assert!(res.observable);
//! assert_eq!(res.kappa_min, 1.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eiso;
pub mod empobs;
pub mod linalg;
pub mod numfmt;
pub mod par;
pub mod sparsereco;
pub mod sysmodel;

pub use eiso::{EisoParams, EisoResult, IterationRecord};
pub use empobs::{EmpiricalObservabilityMatrix, GramianMeasures, RowMeta};
pub use sparsereco::{ReconstructionProblem, SolverSettings, SparseSolution};
pub use sysmodel::{InputSchedule, OutputKind, SystemModel, TimeKind, Trajectory};
