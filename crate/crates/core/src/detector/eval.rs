use serde::{Deserialize, Serialize};

use super::Detector;
use crate::data::{Label, LabeledImages};
use crate::error::{Error, Result};

pub const DECISION_THRESHOLD: f32 = 0.5;

/// Confusion counts with fake as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl EvalReport {
    pub fn from_scores(labels: &[Label], scores: &[f32], threshold: f32) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::shape("evaluate", &[labels.len()], &[scores.len()]));
        }
        let mut r = EvalReport::default();
        for (&label, &s) in labels.iter().zip(scores) {
            match (label, Label::from_score(s, threshold)) {
                (Label::Fake, Label::Fake) => r.tp += 1,
                (Label::Fake, Label::Real) => r.fn_ += 1,
                (Label::Real, Label::Real) => r.tn += 1,
                (Label::Real, Label::Fake) => r.fp += 1,
            }
        }
        Ok(r)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `TP / (TP + FN)`; zero when there are no fake images.
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `TN / (TN + FP)`; zero when there are no real images.
    pub fn tnr(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Rate of correct decisions on `label` images.
    pub fn rate(&self, label: Label) -> f64 {
        match label {
            Label::Fake => self.tpr(),
            Label::Real => self.tnr(),
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Counts plus the derived rates, for reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn_,
            "tpr": self.tpr(), "tnr": self.tnr(), "accuracy": self.accuracy(),
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores `data` with `detector` at the 0.5 threshold.
pub fn evaluate(detector: &dyn Detector, data: &LabeledImages) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let scores = detector.predict(&data.refs())?;
    EvalReport::from_scores(&data.labels, &scores, DECISION_THRESHOLD)
}
