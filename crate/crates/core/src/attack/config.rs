use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::color::GradientTransport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Mim,
    /// Per-channel momentum attack in YCbCr.
    Ycc,
}

impl AttackMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Mim => "mim",
            AttackMethod::Ycc => "ycc",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "mim" => Ok(AttackMethod::Mim),
            "ycc" | "proposed" => Ok(AttackMethod::Ycc),
            _ => Err(Error::InvalidArgument(format!(
                "unknown attack method {s:?} (expected fgsm, mim or ycc)"
            ))),
        }
    }
}

/// L∞ budget in intensity units: one RGB radius, or one radius per YCbCr channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttackBudget {
    Scalar(f32),
    PerChannel([f32; 3]),
}

impl AttackBudget {
    pub fn scalar(&self) -> Result<f32> {
        match *self {
            AttackBudget::Scalar(e) => Ok(e),
            AttackBudget::PerChannel([a, b, c]) if a == b && b == c => Ok(a),
            AttackBudget::PerChannel(_) => Err(Error::InvalidArgument(
                "RGB attacks take a single budget".into(),
            )),
        }
    }

    pub fn per_channel(&self) -> [f32; 3] {
        match *self {
            AttackBudget::Scalar(e) => [e; 3],
            AttackBudget::PerChannel(e) => e,
        }
    }

    pub fn values(&self) -> Vec<f32> {
        match *self {
            AttackBudget::Scalar(e) => vec![e],
            AttackBudget::PerChannel(e) => e.to_vec(),
        }
    }

    /// Parses `"5.5"` or `"2.5,6,6"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f32> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad budget value {p:?}")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [e] => Ok(AttackBudget::Scalar(*e)),
            [a, b, c] => Ok(AttackBudget::PerChannel([*a, *b, *c])),
            _ => Err(Error::InvalidArgument(format!(
                "budget needs 1 or 3 values, got {}",
                parts.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub budget: AttackBudget,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default)]
    pub transport: GradientTransport,
}

fn default_iterations() -> usize {
    10
}

fn default_momentum() -> f32 {
    1.0
}

impl AttackConfig {
    pub fn fgsm(eps: f32) -> Self {
        Self::new(AttackMethod::Fgsm, AttackBudget::Scalar(eps))
    }

    pub fn mim(eps: f32) -> Self {
        Self::new(AttackMethod::Mim, AttackBudget::Scalar(eps))
    }

    pub fn ycc(eps: [f32; 3]) -> Self {
        Self::new(AttackMethod::Ycc, AttackBudget::PerChannel(eps))
    }

    pub fn new(method: AttackMethod, budget: AttackBudget) -> Self {
        Self {
            method,
            budget,
            iterations: default_iterations(),
            momentum: default_momentum(),
            transport: GradientTransport::default(),
        }
    }

    /// Collects every problem rather than stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.budget.values().iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            out.push(format!(
                "budgets must be finite and non-negative, got {:?}",
                self.budget.values()
            ));
        }
        if self.method != AttackMethod::Ycc && self.budget.scalar().is_err() {
            out.push(format!("{} takes a single RGB budget", self.method));
        }
        if self.iterations == 0 {
            out.push("iterations must be at least 1".into());
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 {
            out.push(format!("momentum must be finite and non-negative, got {}", self.momentum));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(p.join("; ")))
        }
    }
}
