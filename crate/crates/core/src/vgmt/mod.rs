//! The vision-guided motion tokenizer: a skeleton stream and a visual stream
//! quantised jointly against a codebook of paired prototypes, and a decoder
//! that maps skeletal prototypes back to poses.

mod codebook;
mod config;
mod grid;
mod model;
mod provider;
mod train;
mod vsa;

pub use codebook::{Assignment, CodebookExport, HybridCodebook, QuantizeMode};
pub use config::{TokenizerTrainConfig, VgmtConfig};
pub use grid::{TokenGrid, TokenGridJson};
pub use model::{Clip, Vgmt, VqForward};
pub use provider::VisualProvider;
pub use train::{train_tokenizer, train_tokenizer_with, TokenizerLogEntry, TokenizerTrainReport};
pub use vsa::Vsa;

pub(crate) use train::BatchSampler;
