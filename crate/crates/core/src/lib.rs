//! Finite-volume laboratory for translation-invariant interacting particle
//! systems: Gibbs specifications from finite-range potentials, jump-rate
//! families and their generators, relative-entropy functionals, and exact
//! master-equation evolution on periodic tori.

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod evolve;
pub mod geometry;
pub mod gibbs;
pub mod measure;

pub use error::{Error, Result};
pub use geometry::{ball, make_box_family, BoxFamily, Point, Shape, Torus, Window};
pub use measure::{Alphabet, Config, DenseMeasure, Encoder};
pub use gibbs::{torus_gibbs, Potential, Specification};
pub use dynamics::{
    averaged_dynamics, check_conditions, detailed_balance_defect, generator_matrix, ConditionReport,
    GeneratorMatrix, RateFamily, RateFamilySpec, Rule,
};
pub use entropy::{
    entropy_loss_finite, f_n, finite_entropy_loss, g_tilde, jensen_monotone_sequence, local_relative_entropy,
    psi, reversible_decomposition, s_r_decomposition, specific_energy_loss, specific_entropy_loss, EntropyReport,
};
pub use evolve::{evolve, run_trajectory, spectral_gap, stationary, Trajectory};
