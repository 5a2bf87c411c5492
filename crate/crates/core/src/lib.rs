//! Network and accelerator co-search for reconstructing 12-lead ECG from
//! 5-channel intracardiac electrograms.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! * [`sigproc`]: band-pass filtering, beat segmentation, STFT/ISTFT and the
//!   Pearson metric.
//! * [`autodiff`]: a small tape-based reverse-mode differentiation engine over
//!   dense 4-D tensors, with Adam and a Gumbel-Softmax sampler.
//! * [`nas`]: the encoder/decoder supernet, differentiable block search with a
//!   MAC penalty, network derivation and retraining.
//! * [`hwmodel`]: the analytical cost model for the multi-chunk accelerator.
//! * [`das`]: differentiable accelerator search over that cost model, plus
//!   brute-force and random-search baselines.
//! * [`datasynth`]: a seeded generator of paired EGM/ECG beats.
//!
//! The guide under `book/` walks through each stage; its code snippets are
//! compiled and run as doc-tests of this crate.

pub mod autodiff;
pub mod das;
pub mod datasynth;
mod error;
pub mod hwmodel;
pub mod nas;
pub mod sigproc;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/signals.md")]
    struct Signals;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/network_search.md")]
    struct NetworkSearch;
    #[doc = include_str!("../../../book/src/cost_model.md")]
    struct CostModel;
    #[doc = include_str!("../../../book/src/accelerator_search.md")]
    struct AcceleratorSearch;
    #[doc = include_str!("../../../book/src/synthetic_data.md")]
    struct SyntheticData;
}
