//! FGSM, momentum-iterative and per-channel YCbCr sign attacks.

mod batch;
mod config;
mod methods;
mod source;

pub use batch::{attack_batch, write_jsonl, BatchOutcome, RunRecord, TargetOutcome};
pub use config::{AttackBudget, AttackConfig, AttackMethod};
pub use methods::{
    fgsm, mim, random_sign_perturbation, run_attack, sign, ycc_attack, ycc_attack_with,
    AttackResult, L1_GUARD,
};
pub use source::{bce, EnsembleSource, GradientSource};
