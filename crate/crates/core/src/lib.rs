//! Feynman-Kac semigroups with non-local perturbations on finite reversible Markov
//! jump chains: exact and Monte Carlo semigroups, Girsanov reduction, L^p
//! spectral bounds, Kato-class checks and lattice models of stable-like and
//! diffusion processes.

pub mod cli;
pub mod error;
pub mod expr;
pub mod functionals;
pub mod kato;
pub mod linalg;
pub mod markov;
pub mod models;
pub mod semigroup;
pub mod spectral;
pub mod suite;

pub use error::{Error, Result};
pub use functionals::{GirsanovWeight, PathSample, Perturbation};
pub use markov::{JumpFunction, ModelDocument, ReversibleModel, SmoothMeasure, StateSpace};
pub use semigroup::{fk_apply_exact, fk_apply_mc, fk_generator, reduce_via_girsanov, PerturbedOperator};
