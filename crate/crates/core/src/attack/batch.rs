use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttackConfig, AttackMethod};
use super::methods::{run_attack, AttackResult};
use super::source::GradientSource;
use crate::analysis::{compute_asr, AsrReport};
use crate::color::ColorTransform;
use crate::data::{quantized, Label, LabeledImages};
use crate::detector::{Detector, EvalReport, DECISION_THRESHOLD};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// One line of the attack run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub clean_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_path: Option<PathBuf>,
    pub label: Label,
    /// False when the source already misclassified the clean image.
    pub attacked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub budgets: Vec<f32>,
    pub linf_rgb: [f32; 3],
    pub linf_ycc: [f32; 3],
    /// Largest excess of the 8-bit measured perturbation over its budget.
    pub budget_violation: f32,
    pub targets: Vec<String>,
    pub scores_before: Vec<f32>,
    pub scores_after: Vec<f32>,
    pub success: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: String,
    pub before: EvalReport,
    /// Real-valued adversarial images.
    pub after: EvalReport,
    /// Adversarial images after 8-bit quantization.
    pub after_quantized: EvalReport,
    pub asr: AsrReport,
    pub asr_quantized: AsrReport,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub config: AttackConfig,
    pub source: String,
    pub label: Label,
    /// Images of the attacked class.
    pub selected: usize,
    /// Per selected image; `None` when not attacked or the attack failed.
    pub results: Vec<Option<AttackResult>>,
    pub records: Vec<RunRecord>,
    pub targets: Vec<TargetOutcome>,
    /// The clean class subset.
    pub clean: LabeledImages,
    /// Attacked images replaced by their adversarial versions.
    pub adversarial: Vec<RgbImage>,
    pub adversarial_quantized: Vec<RgbImage>,
}

impl BatchOutcome {
    pub fn is_empty(&self) -> bool {
        self.selected == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    pub fn attacked_count(&self) -> usize {
        self.results.iter().filter(|r| r.is_some()).count()
    }

    pub fn target(&self, name: &str) -> Option<&TargetOutcome> {
        self.targets.iter().find(|t| t.target == name)
    }

    /// Scores clean and adversarial sets on `target`.
    pub fn evaluate(&self, target: &dyn Detector) -> Result<TargetOutcome> {
        Ok(self.evaluate_with_scores(target)?.0)
    }

    fn evaluate_with_scores(&self, target: &dyn Detector) -> Result<(TargetOutcome, Vec<f32>, Vec<f32>)> {
        let labels = vec![self.label; self.selected];
        let (before_s, after_s, after_q) = if self.selected == 0 {
            (vec![], vec![], vec![])
        } else {
            (
                target.predict(&self.clean.refs())?,
                target.predict(&self.adversarial.iter().collect::<Vec<_>>())?,
                target.predict(&self.adversarial_quantized.iter().collect::<Vec<_>>())?,
            )
        };
        let before = EvalReport::from_scores(&labels, &before_s, DECISION_THRESHOLD)?;
        let after = EvalReport::from_scores(&labels, &after_s, DECISION_THRESHOLD)?;
        let after_quantized = EvalReport::from_scores(&labels, &after_q, DECISION_THRESHOLD)?;
        let outcome = TargetOutcome {
            target: target.name(),
            asr: compute_asr(&before, &after, self.label)?,
            asr_quantized: compute_asr(&before, &after_quantized, self.label)?,
            before,
            after,
            after_quantized,
        };
        Ok((outcome, before_s, after_s))
    }
}

/// Attacks every image of class `label` in `data` that the source classifies
/// correctly, then scores clean and adversarial sets on every target. The
/// adversarial set replaces attacked images and keeps the rest clean, so
/// ASR is measured over the whole class subset. Per-image failures are
/// recorded and do not abort the batch.
pub fn attack_batch(
    cfg: &AttackConfig,
    source: &dyn GradientSource,
    data: &LabeledImages,
    label: Label,
    targets: &[&dyn Detector],
) -> Result<BatchOutcome> {
    cfg.validate()?;
    let subset = data.of_class(label);
    let n = subset.len();
    let transform = ColorTransform::ycbcr();

    let attacked: Vec<(bool, Option<Result<AttackResult>>)> = subset
        .images
        .par_iter()
        .map(|x| match source.score(x) {
            Err(e) => (false, Some(Err(e))),
            Ok(s) if Label::from_score(s, DECISION_THRESHOLD) != label => (false, None),
            Ok(_) => (true, Some(run_attack(cfg, source, x, label))),
        })
        .collect();

    let mut results = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let mut was_attacked = Vec::with_capacity(n);
    for (flag, r) in attacked {
        was_attacked.push(flag);
        match r {
            Some(Ok(res)) => {
                results.push(Some(res));
                errors.push(None);
            }
            Some(Err(e)) => {
                log::warn!("attack failed: {e}");
                results.push(None);
                errors.push(Some(e.to_string()));
            }
            None => {
                results.push(None);
                errors.push(None);
            }
        }
    }

    let adversarial: Vec<RgbImage> = subset
        .images
        .iter()
        .zip(&results)
        .map(|(x, r)| r.as_ref().map_or_else(|| x.clone(), |r| r.adversarial.clone()))
        .collect();
    let adversarial_q: Vec<RgbImage> = adversarial
        .iter()
        .map(quantized)
        .collect::<Result<_>>()?;

    let mut outcome = BatchOutcome {
        config: cfg.clone(),
        source: source.name(),
        label,
        selected: n,
        results,
        records: Vec::new(),
        targets: Vec::new(),
        clean: subset,
        adversarial,
        adversarial_quantized: adversarial_q,
    };
    let mut scores = Vec::with_capacity(targets.len());
    for t in targets {
        let (o, before_s, after_s) = outcome.evaluate_with_scores(*t)?;
        outcome.targets.push(o);
        scores.push((before_s, after_s));
    }
    let (subset, results, adversarial_q) =
        (&outcome.clean, &outcome.results, &outcome.adversarial_quantized);
    let outcomes = &outcome.targets;

    let budgets = cfg.budget.values();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (linf_rgb, linf_ycc, violation) = match &results[i] {
            Some(_) => {
                let delta_q = adversarial_q[i].sub(&subset.images[i])?;
                let zeta_q = transform.ycc_difference(&subset.images[i], &adversarial_q[i])?;
                let (rgb, ycc) = (delta_q.max_abs_per_channel(), zeta_q.max_abs_per_channel());
                let measured = if cfg.method == AttackMethod::Ycc { ycc } else { rgb };
                let eps = cfg.budget.per_channel();
                let v = (0..3).map(|c| measured[c] - eps[c]).fold(0.0f32, f32::max);
                (rgb, ycc, v)
            }
            None => ([0.0; 3], [0.0; 3], 0.0),
        };
        records.push(RunRecord {
            index: i,
            clean_path: subset.paths[i].clone(),
            adversarial_path: None,
            label,
            attacked: was_attacked[i],
            error: errors[i].clone(),
            budgets: budgets.clone(),
            linf_rgb,
            linf_ycc,
            budget_violation: violation,
            targets: outcomes.iter().map(|t| t.target.clone()).collect(),
            scores_before: scores.iter().map(|s| s.0[i]).collect(),
            scores_after: scores.iter().map(|s| s.1[i]).collect(),
            success: scores
                .iter()
                .map(|s| {
                    Label::from_score(s.0[i], DECISION_THRESHOLD) == label
                        && Label::from_score(s.1[i], DECISION_THRESHOLD) != label
                })
                .collect(),
        });
    }

    outcome.records = records;
    Ok(outcome)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
