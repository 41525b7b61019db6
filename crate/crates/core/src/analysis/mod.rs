//! Attack success rates, sign-covariance statistics, perturbation histograms
//! and transfer matrices.

mod asr;
mod covariance;
mod histogram;
mod transfer;

pub use asr::{compute_asr, AsrReport};
pub use covariance::{
    collect_sign_samples, correlation, covariance_csv, estimate_sign_covariance,
    estimate_sign_covariance_with, sample_covariance, CovarianceReport,
};
pub use histogram::{perturbation_histogram, PerturbationHistogram, BIN_WIDTH};
pub use transfer::{transfer_matrix, TransferMatrix};
