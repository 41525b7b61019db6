use serde::{Deserialize, Serialize};

use crate::attack::{attack_batch, AttackConfig, GradientSource};
use crate::data::{Label, LabeledImages};
use crate::detector::Detector;

/// ASR of adversarial examples crafted on each source (rows) and scored on
/// each target (columns). Failed cells hold `None` and an error message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub config: AttackConfig,
    pub label: Label,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub asr: Vec<Vec<Option<f64>>>,
    pub errors: Vec<String>,
}

impl TransferMatrix {
    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        let i = self.sources.iter().position(|s| s == source)?;
        let j = self.targets.iter().position(|t| t == target)?;
        self.asr[i][j]
    }

    /// Mean over the valid cells of row `i`, optionally skipping the column
    /// named like the source (its white-box cell).
    pub fn row_mean(&self, i: usize, skip_white_box: bool) -> Option<f64> {
        let vals: Vec<f64> = self.asr[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| !(skip_white_box && self.targets[j] == self.sources[i]))
            .filter_map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Largest `|ASR(a→b) − ASR(b→a)|` over models that are both sources
    /// and targets.
    pub fn max_asymmetry(&self) -> Option<(String, String, f64)> {
        let mut best: Option<(String, String, f64)> = None;
        for a in &self.sources {
            for b in &self.sources {
                if a >= b {
                    continue;
                }
                if let (Some(x), Some(y)) = (self.get(a, b), self.get(b, a)) {
                    let gap = (x - y).abs();
                    if best.as_ref().map_or(true, |t| gap > t.2) {
                        best = Some((a.clone(), b.clone(), gap));
                    }
                }
            }
        }
        best
    }

    /// Row-labeled CSV; invalid cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = format!("source,{}\n", self.targets.join(","));
        for (i, src) in self.sources.iter().enumerate() {
            let cells: Vec<String> = self.asr[i]
                .iter()
                .map(|v| v.map_or(String::new(), |x| format!("{x:.6}")))
                .collect();
            s.push_str(&format!("{src},{}\n", cells.join(",")));
        }
        s
    }
}

/// Crafts once per source and evaluates every target black-box.
pub fn transfer_matrix(
    sources: &[&dyn GradientSource],
    targets: &[&dyn Detector],
    cfg: &AttackConfig,
    data: &LabeledImages,
    label: Label,
) -> TransferMatrix {
    let mut asr = Vec::with_capacity(sources.len());
    let mut errors = Vec::new();
    for src in sources {
        let mut row = vec![None; targets.len()];
        match attack_batch(cfg, *src, data, label, &[]) {
            Ok(outcome) => {
                for (j, t) in targets.iter().enumerate() {
                    match outcome.evaluate(*t) {
                        Ok(o) => row[j] = Some(o.asr.asr),
                        Err(e) => errors.push(format!("{} -> {}: {e}", src.name(), t.name())),
                    }
                }
            }
            Err(e) => errors.push(format!("{}: {e}", src.name())),
        }
        asr.push(row);
    }
    TransferMatrix {
        config: cfg.clone(),
        label,
        sources: sources.iter().map(|s| s.name()).collect(),
        targets: targets.iter().map(|t| t.name()).collect(),
        asr,
        errors,
    }
}
