use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::DetectorArch;
use super::eval::{EvalReport, DECISION_THRESHOLD};
use super::model::DetectorModel;
use crate::autodiff::{Tape, Tensor};
use crate::data::{Label, LabeledImages};
use crate::error::{Error, Result};
use crate::image::batch_tensor;

/// Images per tape inside a minibatch. Chunk gradients are summed in chunk
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Stochastic gradient descent with coupled weight decay.
    Sgd,
    /// Adam with coupled (L2) weight decay.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-accuracy improvement before stopping.
    pub patience: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            batch_size: 64,
            max_epochs: 20,
            patience: 5,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    /// Every problem with the configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push("weight_decay must be non-negative".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be positive".to_string());
        }
        if self.patience == 0 {
            problems.push("patience must be positive".to_string());
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_tpr: f64,
    pub val_tnr: f64,
}

struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
}

/// Trains `arch` from scratch on `train`, keeping the parameters of the epoch
/// with the best validation accuracy.
pub fn train(
    arch: DetectorArch,
    train: &LabeledImages,
    val: &LabeledImages,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DetectorModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    for (name, set) in [("train", train), ("val", val)] {
        for label in Label::ALL {
            if set.count(label) == 0 {
                return Err(Error::Empty(format!("{label} images in {name} split")));
            }
        }
    }
    let mut model = DetectorModel::init(arch, seed);
    model.check_resolution(&train.refs())?;
    model.check_resolution(&val.refs())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut adam = AdamState {
        m: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        v: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        step: 0,
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, DetectorModel)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(&model, train, batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            apply_update(&mut model, grads, cfg, &mut adam);
        }

        let scores = model.predict_scores(&val.refs())?;
        let report = EvalReport::from_scores(&val.labels, &scores, DECISION_THRESHOLD)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_tpr: report.tpr(),
            val_tnr: report.tnr(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} val tpr {:.3} tnr {:.3}",
            model.id(),
            record.train_loss,
            record.val_tpr,
            record.val_tnr
        );
        history.push(record);

        let acc = report.accuracy();
        if best.as_ref().map_or(true, |(a, _)| acc > *a) {
            let mut kept = model.clone();
            kept.meta.epochs = epoch as u32;
            kept.meta.tpr = report.tpr();
            kept.meta.tnr = report.tnr();
            best = Some((acc, kept));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, history))
}

/// Mean loss over `batch` and its parameter gradients.
fn batch_gradient(
    model: &DetectorModel,
    data: &LabeledImages,
    batch: &[usize],
) -> Result<(f64, Vec<Vec<f32>>)> {
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let images: Vec<_> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<f32> = chunk.iter().map(|&i| data.labels[i].target()).collect();
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let x = tape.constant(batch_tensor(&images)?);
            let scores = model.forward(&mut tape, x, &params)?;
            let loss = tape.bce_loss(scores, &labels)?;
            let value = tape.value(loss)?.item()? as f64;
            let mut grads = tape.backward(loss)?;
            let g = params
                .iter()
                .map(|&p| grads.take(p).expect("parameters are trainable"))
                .collect();
            Ok((value, g))
        })
        .collect();

    let n = batch.len() as f64;
    let mut total: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss = 0.0;
    for (part, chunk) in parts.into_iter().zip(batch.chunks(CHUNK)) {
        let (l, g) = part?;
        let w = chunk.len() as f64 / n;
        loss += l * w;
        for (acc, t) in total.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(t.data()) {
                *a += w * *v as f64;
            }
        }
    }
    let grads = total
        .into_iter()
        .map(|g| g.into_iter().map(|v| v as f32).collect())
        .collect();
    Ok((loss, grads))
}

fn apply_update(model: &mut DetectorModel, grads: Vec<Vec<f32>>, cfg: &TrainConfig, adam: &mut AdamState) {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;
    adam.step += 1;
    let bc1 = 1.0 - BETA1.powi(adam.step);
    let bc2 = 1.0 - BETA2.powi(adam.step);
    for (k, (p, g)) in model.params_mut().iter_mut().zip(grads).enumerate() {
        for (i, (w, g)) in p.data_mut().iter_mut().zip(g).enumerate() {
            let g = g + cfg.weight_decay * *w;
            match cfg.optimizer {
                Optimizer::Sgd => *w -= cfg.learning_rate * g,
                Optimizer::Adam => {
                    let m = &mut adam.m[k][i];
                    let v = &mut adam.v[k][i];
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *w -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Writes `epoch,train_loss,val_tpr,val_tnr` rows.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
