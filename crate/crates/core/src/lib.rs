//! Numerical laboratory for the one-dimensional Klein-Gordon-Zakharov system
//!
//! ```text
//! u_tt - u_xx + u + n u = 0,
//! c₀⁻² n_tt - n_xx = (|u|²)_xx,
//! ```
//!
//! its standing waves `(e^{iωt} φ_ω, -φ_ω²)`, the Hessian of the action at
//! those waves, and the virial and modulation diagnostics that separate
//! stable from unstable frequencies.
//!
//! Everything lives on a periodic box (see [`grid`]); derivatives are
//! spectral and quadrature is the rectangle rule.

pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod functionals;
pub mod grid;
pub mod harness;
pub mod linops;
mod krylov;
pub mod soliton;
pub mod state;

pub use error::{KgzError, Result};
pub use functionals::{action, charge, energy, identity_report, momentum, IdentityReport};
pub use harness::{run_instability_experiment, stability_scan, ExperimentConfig, StabilityVerdict};
pub use grid::{inner, make_grid, x_norm, FieldC, FieldR, Grid, Quad};
pub use linops::{assemble_hessian, assemble_lpm, coercivity_check, spectrum, RealBlockOperator, SpectrumReport};
pub use soliton::{family, ground_state, translate_rotate, SolitonFamily};
pub use state::KgzState;
