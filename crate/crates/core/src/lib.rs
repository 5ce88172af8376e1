//! GIC blocking-device placement.
//!
//! The crate models a transmission grid as an AC network plus the quasi-DC
//! circuit that geomagnetically induced currents (GIC) flow through, and
//! searches for budget-limited placements of neutral blocking devices that
//! minimize generation cost plus a load-shedding penalty.
//!
//! - [`netmodel`]: network files, the derived DC circuit, induced sources.
//! - [`gic`]: DC circuit solve and effective GIC per transformer.
//! - [`acopf`]: rectangular AC-OPF with GIC reactive losses; `F(z)`.
//! - [`nlpsolve`]: augmented-Lagrangian NLP solver used by every subproblem.
//! - [`admm`]: three-block ADMM with a binary first block.
//! - [`slearn`]: stochastic learning over Bernoulli placement probabilities.
//! - [`harness`]: brute-force oracle and benchmark runner.

pub mod acopf;
pub mod admm;
pub mod bundled;
pub mod error;
pub mod gic;
pub mod harness;
pub mod linalg;
pub mod netmodel;
pub mod nlpsolve;
pub mod placement;
pub mod slearn;

pub use admm::{knapsack_closed, run_admm, AdmmOptions, AdmmOutcome, AdmmState, AdmmTrace};
pub use error::{GicError, Result};
pub use harness::{brute_force, run_benchmark, Algorithm, BenchmarkOptions, BenchmarkRow, BruteForce};
pub use gic::{effective_gic, solve_gic, transformer_theta, EffectiveGic, FloatingPolicy, GicSolution};
pub use netmodel::{derive_dc_network, load_network, materialize_xi, AcNetwork, DcNetwork, GmdScenario};
pub use nlpsolve::{NlpOptions, NlpProblem, NlpSolution, SolveStatus};
pub use placement::Placement;
pub use slearn::{gradient_estimate, run_sl, sample_budgeted, SlOptions, SlOutcome, SlState, SlTrace};
