//! Graph integrals `W_eps^L`, `W_0^L`, anomaly functionals and the vanishing
//! checks.

pub mod checks;
pub mod integrals;
pub mod integrand;
pub mod source;

pub use checks::{
    exponent_bound_check, factorization_check, homogeneity_check, kontsevich_check, localization_check,
    numerically_zero, rank_vanishing_check, reflection_parity_check, subgraph_boundary_reduction,
};
pub use integrals::{
    anomaly_functional, boundary_identity_check, nontrivial_random_source, reduce_positions, uv_sequence, w_0_l, w_eps_l, GraphIntegralProblem,
};
pub use integrand::{global_sign, select_generators, Integrand};
pub use source::{Positions, PolyTerm, Source, TestSource};
