//! Dataset generation, ingestion, splitting and image I/O.

mod ingest;
mod io;
mod manifest;
mod split;
mod synthetic;

pub use ingest::{ingest_directories, list_images, SUPPORTED_EXTENSIONS};
pub use io::{from_rgb8, load_image, quantize, quantized, save_image, to_rgb8};
pub use manifest::{DatasetManifest, Label, LabeledImages, Record, Split, MANIFEST_VERSION};
pub use split::{split_dataset, SplitRatio};
pub use synthetic::{
    best_threshold_accuracy, generate_synthetic, mean_intensity, verify_digest, SyntheticConfig,
};
