//! Desk-scale classifiers with a single dropout layer between the feature
//! extractor and the linear head.

mod checkpoint;
mod dropout;
mod layers;
mod model;

pub use checkpoint::{model_checksum, Checkpoint};
pub use dropout::DropoutMask;
pub use layers::{Conv3x3, Layer, LayerCache, Linear, MapShape};
pub use model::{Arch, CalibratableModel, ExtractorCache, Gradients, ModelMeta};
