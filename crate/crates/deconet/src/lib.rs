//! Analysis-sparsity compressed sensing toolkit.
//!
//! Recovers signals x ∈ R^n from noisy underdetermined measurements y = Ax + e
//! under the analysis sparsity model, where a redundant operator W ∈ R^{N×n}
//! (N > n) makes Wx sparse. Three coupled pieces:
//!
//! - [`acf`]: an accelerated first-order solver for the smoothed analysis-l1
//!   problem min ‖Wx‖₁ + (μ/2)‖x−x₀‖₂² subject to the measurement constraint,
//!   usable standalone with fixed operators (redundant Haar, finite differences).
//! - [`net`]: the same iteration unfolded into an L-layer decoder network whose
//!   shared analysis operator W is trained by hand-derived reverse-mode
//!   differentiation and Adam, with norm-clipped outputs.
//! - [`bounds`]: closed-form growth, Lipschitz-in-W, covering-number and
//!   generalization-error quantities for that decoder class, plus empirical
//!   verification hooks that test the inequalities on random draws.
//!
//! Supporting modules: dense linear algebra ([`linalg`]), scalar nonlinearities
//! and analysis operators ([`operators`]), step-size schedules ([`schedule`]),
//! dataset synthesis and IDX ingestion ([`data`]), run configuration
//! ([`config`]), CLI command implementations ([`commands`]) and the invariant
//! verification families ([`verify`]).

pub mod acf;
pub mod bounds;
pub mod commands;
pub mod config;
pub mod data;
pub mod linalg;
pub mod net;
pub mod operators;
pub mod schedule;
pub mod seed;
pub mod verify;
