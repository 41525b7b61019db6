use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{ArchId, DetectorArch, Layer};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::image::{batch_tensor, RgbImage};

/// Images per forward pass when scoring many inputs.
const PREDICT_CHUNK: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: u32,
    /// Validation rates of the retained epoch.
    pub tpr: f64,
    pub tnr: f64,
}

/// A differentiable detector: architecture plus parameters. Scores are the
/// probability that an image is fake.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    arch: DetectorArch,
    params: Vec<Tensor>,
    pub meta: ModelMeta,
}

/// Loss, score and input gradient of one image.
#[derive(Clone, Debug)]
pub struct InputGradient {
    pub loss: f32,
    pub score: f32,
    pub gradient: RgbImage,
}

impl DetectorModel {
    /// He-normal weights, zero biases, all drawn from `seed`.
    pub fn init(arch: DetectorArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let normal =
                    Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid normal");
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("shape matches data")
            })
            .collect();
        Self {
            arch,
            params,
            meta: ModelMeta {
                seed,
                ..ModelMeta::default()
            },
        }
    }

    pub fn from_parts(arch: DetectorArch, params: Vec<Tensor>, meta: ModelMeta) -> Result<Self> {
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} parameter tensors, got {}",
                arch.id,
                shapes.len(),
                params.len()
            )));
        }
        for (want, p) in shapes.iter().zip(&params) {
            if want.as_slice() != p.shape() {
                return Err(Error::shape("parameters", want, p.shape()));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("model parameters".into()));
            }
        }
        Ok(Self { arch, params, meta })
    }

    pub fn arch(&self) -> &DetectorArch {
        &self.arch
    }

    pub fn id(&self) -> ArchId {
        self.arch.id
    }

    pub fn resolution(&self) -> usize {
        self.arch.resolution
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records the parameters on `tape`, as trainable leaves or constants.
    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass of `x: [N,3,H,W]`, returning scores `[N,1]`.
    pub(crate) fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        let r = self.arch.resolution;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != r || shape[3] != r {
            return Err(Error::shape("detector input", &[shape[0], 3, r, r], &shape));
        }
        let mut next = 0;
        run_layers(tape, &self.arch.layers, x, params, &mut next)
    }

    /// Scores a stacked batch `[N,3,H,W]` on one tape.
    pub fn predict_batch(&self, batch: Tensor) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(batch);
        let scores = self.forward(&mut tape, x, &params)?;
        Ok(tape.value(scores)?.data().to_vec())
    }

    /// Probability of "fake" per image; images are scored in parallel chunks.
    pub fn predict_scores(&self, images: &[&RgbImage]) -> Result<Vec<f32>> {
        self.check_resolution(images)?;
        let chunks: Vec<Result<Vec<f32>>> = images
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| self.predict_batch(batch_tensor(chunk)?))
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub(crate) fn check_resolution(&self, images: &[&RgbImage]) -> Result<()> {
        let r = self.arch.resolution;
        for img in images {
            if img.height() != r || img.width() != r {
                return Err(Error::shape(
                    "detector input",
                    &[3, r, r],
                    &[3, img.height(), img.width()],
                ));
            }
        }
        Ok(())
    }

    /// Binary cross-entropy of one image against `label` and its gradient
    /// with respect to the pixels.
    pub fn input_gradient(&self, x: &RgbImage, label: Label) -> Result<InputGradient> {
        self.check_resolution(&[x])?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let input = tape.leaf(x.to_tensor());
        let scores = self.forward(&mut tape, input, &params)?;
        let score = tape.value(scores)?.data()[0];
        let loss = tape.bce_loss(scores, &[label.target()])?;
        let loss_value = tape.value(loss)?.item()?;
        let mut grads = tape.backward(loss)?;
        let g = grads
            .take(input)
            .ok_or_else(|| Error::NonFinite("missing input gradient".into()))?;
        if !g.is_finite() {
            return Err(Error::NonFinite("input gradient".into()));
        }
        Ok(InputGradient {
            loss: loss_value,
            score,
            gradient: RgbImage::from_planar(x.height(), x.width(), g.into_data())?,
        })
    }
}

fn run_layers(
    tape: &mut Tape,
    layers: &[Layer],
    mut h: Var,
    params: &[Var],
    next: &mut usize,
) -> Result<Var> {
    for layer in layers {
        h = match layer {
            Layer::Normalize => tape.affine(h, 1.0 / 127.5, -1.0)?,
            Layer::Conv {
                stride, padding, ..
            } => {
                let (w, b) = (params[*next], params[*next + 1]);
                *next += 2;
                tape.conv2d(h, w, Some(b), *stride, *padding)?
            }
            Layer::Relu => tape.relu(h)?,
            Layer::AvgPool(s) => tape.avg_pool2d(h, *s)?,
            Layer::MaxPool(s) => tape.max_pool2d(h, *s)?,
            Layer::Flatten => tape.flatten(h)?,
            Layer::Dense { .. } => {
                let (w, b) = (params[*next], params[*next + 1]);
                *next += 2;
                tape.dense(h, w, Some(b))?
            }
            Layer::Residual(body) => {
                let inner = run_layers(tape, body, h, params, next)?;
                tape.add(inner, h)?
            }
            Layer::Sigmoid => tape.sigmoid(h)?,
        };
    }
    Ok(h)
}
