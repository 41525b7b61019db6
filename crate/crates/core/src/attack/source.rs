use crate::autodiff::{Tape, SCORE_CLAMP};
use crate::data::Label;
use crate::detector::{Detector, DetectorModel};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// A white-box model the attacks can differentiate through.
pub trait GradientSource: Sync {
    fn name(&self) -> String;
    fn resolution(&self) -> usize;
    /// Probability of "fake" for one image.
    fn score(&self, x: &RgbImage) -> Result<f32>;
    /// Binary cross-entropy against `label` and its gradient w.r.t. `x`.
    fn loss_and_gradient(&self, x: &RgbImage, label: Label) -> Result<(f32, RgbImage)>;
}

impl GradientSource for DetectorModel {
    fn name(&self) -> String {
        self.id().to_string()
    }

    fn resolution(&self) -> usize {
        DetectorModel::resolution(self)
    }

    fn score(&self, x: &RgbImage) -> Result<f32> {
        Ok(self.predict_scores(&[x])?[0])
    }

    fn loss_and_gradient(&self, x: &RgbImage, label: Label) -> Result<(f32, RgbImage)> {
        let g = self.input_gradient(x, label)?;
        Ok((g.loss, g.gradient))
    }
}

/// Clamped binary cross-entropy of a single score, as used by the tape.
pub fn bce(score: f32, label: Label) -> f32 {
    let s = (score as f64).clamp(SCORE_CLAMP as f64, 1.0 - SCORE_CLAMP as f64);
    let y = label.target() as f64;
    (-(y * s.ln() + (1.0 - y) * (1.0 - s).ln())) as f32
}

/// Several detectors fused by averaging their scores with equal weights
/// before the loss.
#[derive(Clone, Debug)]
pub struct EnsembleSource {
    members: Vec<DetectorModel>,
}

impl EnsembleSource {
    pub fn new(members: Vec<DetectorModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Empty("ensemble members".into()))?;
        let r = first.resolution();
        for m in &members {
            if m.resolution() != r {
                return Err(Error::shape(
                    "ensemble resolution",
                    &[r, r],
                    &[m.resolution(), m.resolution()],
                ));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[DetectorModel] {
        &self.members
    }
}

impl GradientSource for EnsembleSource {
    fn name(&self) -> String {
        self.members
            .iter()
            .map(|m| m.id().to_string())
            .collect::<Vec<_>>()
            .join("+")
    }

    fn resolution(&self) -> usize {
        self.members[0].resolution()
    }

    fn score(&self, x: &RgbImage) -> Result<f32> {
        Ok(self.predict(&[x])?[0])
    }

    fn loss_and_gradient(&self, x: &RgbImage, label: Label) -> Result<(f32, RgbImage)> {
        if let [only] = self.members.as_slice() {
            return only.loss_and_gradient(x, label);
        }
        for m in &self.members {
            m.check_resolution(&[x])?;
        }
        let mut tape = Tape::new();
        let input = tape.leaf(x.to_tensor());
        let mut total = None;
        for m in &self.members {
            let params = m.bind(&mut tape, false);
            let s = m.forward(&mut tape, input, &params)?;
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s)?,
            });
        }
        let mean = tape.scale(total.expect("non-empty"), 1.0 / self.members.len() as f32)?;
        let loss = tape.bce_loss(mean, &[label.target()])?;
        let value = tape.value(loss)?.item()?;
        let mut grads = tape.backward(loss)?;
        let g = grads
            .take(input)
            .ok_or_else(|| Error::NonFinite("missing input gradient".into()))?;
        if !g.is_finite() {
            return Err(Error::NonFinite("ensemble input gradient".into()));
        }
        Ok((value, RgbImage::from_planar(x.height(), x.width(), g.into_data())?))
    }
}

impl Detector for EnsembleSource {
    fn name(&self) -> String {
        GradientSource::name(self)
    }

    fn resolution(&self) -> usize {
        GradientSource::resolution(self)
    }

    fn predict(&self, images: &[&RgbImage]) -> Result<Vec<f32>> {
        let mut sum = vec![0.0f32; images.len()];
        for m in &self.members {
            for (s, v) in sum.iter_mut().zip(m.predict_scores(images)?) {
                *s += v;
            }
        }
        let n = self.members.len() as f32;
        Ok(sum.into_iter().map(|s| s / n).collect())
    }
}
