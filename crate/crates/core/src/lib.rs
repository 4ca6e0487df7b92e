#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Semi-discrete weak KAM theory on the flat torus `T^d`, `d ∈ {1, 2}`.
//!
//! A Tonelli Lagrangian is discretized in space on a regular grid and in
//! time with step `τ`. The discrete Lax–Oleinik equation on the resulting
//! edge graph is a min-plus eigenproblem: its eigenvalue gives `L̄(τ)`, its
//! eigenvector a weak KAM solution `u_τ`, and the calibration structure of
//! `u_τ` gives the discrete Mather and Aubry sets.

pub mod aubry;
mod digraph;
pub mod error;
pub mod export;
pub mod flow;
pub mod graph;
pub mod mather;
pub mod model;
pub mod phase;
pub mod sweep;
pub mod weakkam;

pub use error::{Error, Result};
pub use graph::{build_edge_graph, build_grid, EdgeGraph, TorusGrid, VelocityBound};
pub use model::LagrangianModel;
pub use phase::{PhasePoint, PhaseSet, PhaseState};
pub use weakkam::{solve_weak_kam, WeakKamSolution};
