//! Cross-modal generation with a multi-encoder, shared-decoder VAE.
//!
//! An audio encoder and a visual encoder each map their modality to a
//! diagonal Gaussian posterior; a shared decoder reconstructs the full
//! (audio, visual) pair from a sample of either. Training minimizes
//!
//! ```text
//! L_total = λ1 · MSE + λ2 · KL + λ3 · W_latent
//! ```
//!
//! where `W_latent` pulls the two modalities' latent samples together.
//! The learned posteriors then drive cross-modal localization and
//! retrieval without any label ever touching training.
//!
//! Modules, bottom-up:
//!
//! - [`ndmath`]: tensors, reverse-mode gradients, Adam, gradient checking.
//! - [`model`]: encoders, decoder(s), reparameterization.
//! - [`losses`]: the three loss terms and the closed-form Gaussian W2.
//! - [`trainer`]: the training loop and checkpoint files.
//! - [`synthdata`]: synthetic paired sequences with ground-truth events.
//! - [`tasks`]: localization, retrieval, latent export.
//! - [`cli`]: the `msvae` command-line tool.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod binio;
pub mod cli;
mod error;
pub mod losses;
pub mod model;
pub mod ndmath;
pub mod synthdata;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};

/// Crate version, embedded in every artifact the CLI writes.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/latents.md")]
    mod latents {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
