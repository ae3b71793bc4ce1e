//! Exact maximum likelihood estimation for the two-class latent class model
//! on 2x2x2 binary tables, with an EM engine for general shapes and a
//! seeded Monte Carlo harness.
//!
//! ```
//! use latent_mle::{global_mle, CountTensor};
//!
//! let u = CountTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
//! let fit = global_mle(&u).unwrap();
//! assert_eq!(fit.stratum, "0");
//! ```

pub mod em;
pub mod error;
pub mod exact_mle;
pub mod model;
pub mod simulation;
pub mod strata;
pub mod symmetry;
pub mod tensor;

pub use em::{
    classify_zero_pattern, em_step, fixed_point_residual, multi_start_em, run_em, run_em_from, EmConfig,
    EmData, EmRun, MultiStart, ZeroCategory, ZeroPattern,
};
pub use error::{Error, Result};
pub use exact_mle::{global_mle, GlobalMle, MleResult};
pub use model::{LatentParams, MRank, StochasticMatrix, Substream};
pub use strata::{enumerate_strata, StratumClass, StratumDescriptor};
pub use symmetry::SymmetryAction;
pub use tensor::{log_likelihood, CountTensor, ProbTensor, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/membership.md")]
    mod membership {}
    #[doc = include_str!("../../../book/src/strata.md")]
    mod strata {}
    #[doc = include_str!("../../../book/src/exact_mle.md")]
    mod exact_mle {}
    #[doc = include_str!("../../../book/src/em.md")]
    mod em {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
