//! Fake-image detectors: three small CNNs and a co-occurrence baseline.

mod arch;
mod eval;
mod io;
mod model;
mod ndl;
mod train;

use rayon::prelude::*;

pub use arch::{ArchId, DetectorArch, Layer};
pub use eval::{evaluate, EvalReport, DECISION_THRESHOLD};
pub use io::{decode_detector, encode_detector, load_model, save_model, FORMAT_VERSION};
pub use model::{DetectorModel, InputGradient, ModelMeta};
pub use ndl::{extract_cooccurrence, train_ndl, CooccurrenceSpec, NdlConfig, NdlDetector, PAIR_COUNT};
pub use train::{train, write_history_csv, EpochRecord, Optimizer, TrainConfig};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Black-box scoring: probability that each image is fake.
pub trait Detector: Sync {
    fn name(&self) -> String;
    fn resolution(&self) -> usize;
    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f32>>;
}

impl Detector for DetectorModel {
    fn name(&self) -> String {
        self.id().to_string()
    }

    fn resolution(&self) -> usize {
        DetectorModel::resolution(self)
    }

    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f32>> {
        self.predict_scores(images)
    }
}

impl Detector for NdlDetector {
    fn name(&self) -> String {
        "NDL".into()
    }

    fn resolution(&self) -> usize {
        self.resolution
    }

    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f32>> {
        for img in images {
            if img.height() != self.resolution || img.width() != self.resolution {
                return Err(Error::shape(
                    "NDL input",
                    &[3, self.resolution, self.resolution],
                    &[3, img.height(), img.width()],
                ));
            }
        }
        Ok(images.par_iter().map(|x| NdlDetector::predict(self, x)).collect())
    }
}

/// Any detector that can be stored in a model file.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedDetector {
    Cnn(DetectorModel),
    Ndl(NdlDetector),
}

impl TrainedDetector {
    pub fn as_cnn(&self) -> Option<&DetectorModel> {
        match self {
            TrainedDetector::Cnn(m) => Some(m),
            TrainedDetector::Ndl(_) => None,
        }
    }

    pub fn into_cnn(self) -> Result<DetectorModel> {
        match self {
            TrainedDetector::Cnn(m) => Ok(m),
            TrainedDetector::Ndl(_) => Err(Error::InvalidArgument(
                "the NDL detector has no gradients and cannot be an attack source".into(),
            )),
        }
    }

    fn inner(&self) -> &dyn Detector {
        match self {
            TrainedDetector::Cnn(m) => m,
            TrainedDetector::Ndl(n) => n,
        }
    }
}

impl Detector for TrainedDetector {
    fn name(&self) -> String {
        self.inner().name()
    }

    fn resolution(&self) -> usize {
        self.inner().resolution()
    }

    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f32>> {
        self.inner().predict(images)
    }
}
