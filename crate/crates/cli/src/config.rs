//! Optional configuration file, merged under command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use antiforensics::attack::{AttackBudget, AttackMethod};
use antiforensics::color::GradientTransport;
use antiforensics::data::{Label, Split, SyntheticConfig};
use antiforensics::detector::{NdlConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Invalid input; every problem found is listed. Exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

/// Keys accepted in a config file. Every key is optional; flags win.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<Split>,
    pub label: Option<Label>,
    pub arch: Option<String>,
    pub model: Option<PathBuf>,
    pub sources: Option<Vec<PathBuf>>,
    pub targets: Option<Vec<PathBuf>>,
    pub history: Option<PathBuf>,
    pub samples: Option<usize>,
    pub run: Option<PathBuf>,
    pub domain: Option<String>,
    /// Budgets visited by `sweep`.
    pub budgets: Option<Vec<AttackBudget>>,
    pub save_images: Option<bool>,
    pub synthetic: Option<SyntheticConfig>,
    pub train: Option<TrainConfig>,
    pub ndl: Option<NdlConfig>,
    pub attack: Option<AttackSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub method: Option<AttackMethod>,
    pub budget: Option<AttackBudget>,
    pub iterations: Option<usize>,
    pub momentum: Option<f32>,
    pub transport: Option<GradientTransport>,
}

fn known_keys<T: Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Lists every key not recognized at the top level or inside a section.
fn unknown_keys(root: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Value::Object(top) = root else {
        return vec!["config file must contain a table of settings".into()];
    };
    let sections: [(&str, Vec<String>); 4] = [
        ("synthetic", known_keys(&SyntheticConfig::default())),
        ("train", known_keys(&TrainConfig::default())),
        ("ndl", known_keys(&NdlConfig::default())),
        ("attack", known_keys(&AttackSection::default())),
    ];
    let top_keys = known_keys(&FileConfig::default());
    for (k, v) in top {
        if !top_keys.contains(k) {
            out.push(format!("unknown key {k:?}"));
            continue;
        }
        if let Some((_, keys)) = sections.iter().find(|(name, _)| name == k) {
            if let Value::Object(inner) = v {
                for ik in inner.keys() {
                    if !keys.contains(ik) {
                        out.push(format!("unknown key {k}.{ik}"));
                    }
                }
            }
        }
    }
    out
}

/// Reads a TOML file, or JSON when the extension is `.json`.
pub fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(vec![format!("cannot read config {}: {e}", path.display())]))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?
    } else {
        toml::from_str(&text).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?
    };
    let unknown = unknown_keys(&value);
    if !unknown.is_empty() {
        return Err(ConfigError(
            unknown.into_iter().map(|u| format!("{}: {u}", path.display())).collect(),
        ));
    }
    serde_json::from_value(value).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))
}

/// Collects problems while resolving a command's settings.
#[derive(Default)]
pub struct Problems(pub Vec<String>);

impl Problems {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn extend(&mut self, prefix: &str, msgs: Vec<String>) {
        self.0.extend(msgs.into_iter().map(|m| format!("{prefix}{m}")));
    }

    /// `flag` or the file value, recording a problem when neither is set.
    pub fn require<T>(&mut self, name: &str, value: Option<T>) -> Option<T> {
        if value.is_none() {
            self.push(format!("missing required setting `{name}`"));
        }
        value
    }

    pub fn existing_file(&mut self, name: &str, path: &Path) {
        if !path.is_file() {
            self.push(format!("{name}: file {} does not exist", path.display()));
        }
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(self.0))
        }
    }
}
