//! Classical emulator of a quantum finite volume method (QFVM) for steady
//! 2D Euler flow.
//!
//! An implicit first-order FVM solver on a bumped channel is driven through
//! the data path a quantum linear solver would use: the residual lives in a
//! sum tree, the right-hand side is prepared by amplitude recursion from
//! that tree, the linear solve is exact but its output is only observed
//! through emulated tomography and amplitude estimation, and the resulting
//! sparse update is written back with local tree refreshes. Logical cost
//! counters distinguish classical accesses from quantum queries.

// Validation guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod fvm;
pub mod instrumentation;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod precond;
pub mod qls;
pub mod solver;
pub mod stateprep;
pub mod sumtree;

pub use config::Config;
pub use driver::{Preconditioning, RunOutcome, RunStatus, Simulation, SolverSettings};
pub use error::{Error, Result};
pub use fvm::{FlowConditions, PhysicalState, Physics};
pub use instrumentation::{Category, CounterSnapshot, QueryCounters};
pub use linalg::BlockSparseMatrix;
pub use mesh::{build_channel_mesh, ChannelSpec, Mesh};
pub use par::Exec;
pub use qls::{QuantumNoiseConfig, SparseUpdate};
pub use sumtree::SumTree;
