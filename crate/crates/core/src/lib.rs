pub mod autograd;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pca;
pub mod plot;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autograd.md")]
mod book_autograd {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pca.md")]
mod book_pca {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dataset.md")]
mod book_dataset {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/losses-metrics.md")]
mod book_losses_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
