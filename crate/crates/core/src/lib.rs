//! Segmentation under false-negative label noise.
//!
//! The crate covers the whole loop of a noisy-label segmentation study at desk
//! scale: synthetic lesion phantoms ([`phantom`]), lesion censoring
//! ([`censor`]), cross-entropy, class-weighted, bootstrap and lopsided
//! bootstrap losses ([`losses`]) trained through a small reverse-mode
//! autodiff engine ([`gradcore`]) on a 2.5D convolutional segmenter
//! ([`segnet`]), and lesion-level evaluation ([`detect`], [`metrics`]).
//! [`runner`] ties these together into reproducible experiment grids and
//! [`plot`] renders their results as SVG.

pub mod censor;
pub mod detect;
pub mod error;
pub mod gradcore;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod plot;
pub mod raster_io;
pub mod runner;
pub mod seeds;
pub mod segnet;
pub mod volume;

pub use error::{Error, Result};
