use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::detector::EvalReport;
use crate::error::{Error, Result};

/// Accuracy drop on one class: `TPR − TPR′` for fake images, `TNR − TNR′`
/// for real ones. Negative values are kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub label: Label,
    pub before: f64,
    pub after: f64,
    pub asr: f64,
    /// Images of the attacked class.
    pub count: u64,
}

fn class_count(r: &EvalReport, label: Label) -> u64 {
    match label {
        Label::Fake => r.tp + r.fn_,
        Label::Real => r.tn + r.fp,
    }
}

/// Reports must describe the same image set: equal totals and class counts.
pub fn compute_asr(before: &EvalReport, after: &EvalReport, label: Label) -> Result<AsrReport> {
    if before.total() != after.total() || class_count(before, label) != class_count(after, label) {
        return Err(Error::InvalidArgument(format!(
            "ASR needs reports over the same images ({} vs {} images)",
            before.total(),
            after.total()
        )));
    }
    let (b, a) = (before.rate(label), after.rate(label));
    Ok(AsrReport {
        label,
        before: b,
        after: a,
        asr: b - a,
        count: class_count(before, label),
    })
}
