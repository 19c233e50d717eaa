//! Scalar volumes, transfer functions, bin quantization and histograms.

mod editor;
mod histogram;
pub mod io;
mod tf;
mod volume;

pub use editor::{ColorStop, OpacityPoint, TfEditor, MIN_GAP};
pub use histogram::{histogram, Histogram};
pub use tf::{quantize, BinCoordinate, Rgba, TransferFunction, DEFAULT_TF_SIZE};
pub use volume::{Normalizer, ScalarVolume};
