//! Item response theory with Beta-distributed responses.
//!
//! Respondents have abilities in `(0, 1)`, items have difficulties in
//! `(0, 1)` and real discriminations, and a response is drawn from a Beta
//! distribution whose mean follows [`icc::icc_beta3`]. Models are fitted by
//! stochastic maximum likelihood ([`mle::fit_mle`]) or variational inference
//! ([`vi::fit_vi`]).
//!
//! ```
//! use beta3_irt::mle::{fit_mle, MleConfig};
//! use beta3_irt::synth::{sample_dataset, GeneratorSpec};
//!
//! let (data, _) = sample_dataset(&GeneratorSpec::new(5, 30, 1))?;
//! let fit = fit_mle(&data, &MleConfig { iterations: 200, ..MleConfig::default() })?;
//! assert_eq!(fit.params.num_respondents(), 5);
//! # Ok::<(), beta3_irt::error::Error>(())
//! ```

pub mod adam;
pub mod error;
pub mod eval;
pub mod icc;
pub mod mle;
pub mod params;
pub mod response;
pub mod rng;
pub mod synth;
pub mod vi;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/mle.md")]
    mod mle {}
    #[doc = include_str!("../../../book/src/vi.md")]
    mod vi {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
