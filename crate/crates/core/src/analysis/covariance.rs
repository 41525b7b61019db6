use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{sign, GradientSource};
use crate::color::ColorTransform;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Second-order statistics of per-pixel gradient-sign triples in RGB and
/// after the YCbCr transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub n: usize,
    pub sigma_rgb: [[f64; 3]; 3],
    pub sigma_ycc: [[f64; 3]; 3],
    pub corr_rgb: [[f64; 3]; 3],
    pub corr_ycc: [[f64; 3]; 3],
    pub var_ratio_y_cb: f64,
    pub var_ratio_y_cr: f64,
    pub mean_abs_offdiag_corr_rgb: f64,
    pub mean_abs_offdiag_corr_ycc: f64,
}

/// Sample covariance with `1/N` normalization.
pub fn sample_covariance(samples: &[[f64; 3]]) -> Result<Matrix3<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 3];
    for s in samples {
        for c in 0..3 {
            mean[c] += s[c];
        }
    }
    let mean = mean.map(|m| m / n);
    let mut cov = Matrix3::zeros();
    for s in samples {
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    Ok(cov / n)
}

fn to_array(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

/// Correlation matrix; entries involving a zero-variance channel are 0
/// off the diagonal.
pub fn correlation(cov: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| {
        if i == j {
            return 1.0;
        }
        let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
        if d > 0.0 {
            cov[(i, j)] / d
        } else {
            0.0
        }
    })
}

fn mean_abs_offdiag(m: &Matrix3<f64>) -> f64 {
    (m[(0, 1)].abs() + m[(0, 2)].abs() + m[(1, 2)].abs()) / 3.0
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

/// `Σ_S` from the samples and its image `A Σ_S Aᵀ` under `transform`.
pub fn estimate_sign_covariance_with(
    transform: &ColorTransform,
    samples: &[[f64; 3]],
) -> Result<CovarianceReport> {
    let rgb = sample_covariance(samples)?;
    let ycc = transform.transform_covariance(&rgb);
    let (cr, cy) = (correlation(&rgb), correlation(&ycc));
    Ok(CovarianceReport {
        n: samples.len(),
        sigma_rgb: to_array(&rgb),
        sigma_ycc: to_array(&ycc),
        corr_rgb: to_array(&cr),
        corr_ycc: to_array(&cy),
        var_ratio_y_cb: ratio(ycc[(0, 0)], ycc[(1, 1)]),
        var_ratio_y_cr: ratio(ycc[(0, 0)], ycc[(2, 2)]),
        mean_abs_offdiag_corr_rgb: mean_abs_offdiag(&cr),
        mean_abs_offdiag_corr_ycc: mean_abs_offdiag(&cy),
    })
}

pub fn estimate_sign_covariance(samples: &[[f64; 3]]) -> Result<CovarianceReport> {
    estimate_sign_covariance_with(&ColorTransform::ycbcr(), samples)
}

/// Draws `n` (image, pixel) pairs uniformly and returns the sign of the loss
/// gradient at each, one triple per pixel.
pub fn collect_sign_samples(
    source: &dyn GradientSource,
    images: &[&RgbImage],
    label: Label,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<[f64; 3]>> {
    if images.is_empty() {
        return Err(Error::Empty("images for sign sampling".into()));
    }
    let picks: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..images.len());
            (i, rng.gen_range(0..images[i].pixel_count()))
        })
        .collect();
    let mut grads: Vec<Option<RgbImage>> = vec![None; images.len()];
    let mut out = Vec::with_capacity(n);
    for (i, p) in picks {
        if grads[i].is_none() {
            grads[i] = Some(source.loss_and_gradient(images[i], label)?.1);
        }
        let g = grads[i].as_ref().expect("just filled").pixel(p);
        out.push(g.map(|v| sign(v) as f64));
    }
    Ok(out)
}

/// Rows `matrix,row,c0,c1,c2` for both covariance and correlation matrices.
pub fn covariance_csv(report: &CovarianceReport) -> String {
    let mut s = String::from("matrix,row,c0,c1,c2\n");
    let blocks = [
        ("sigma_rgb", &report.sigma_rgb, ["R", "G", "B"]),
        ("sigma_ycc", &report.sigma_ycc, ["Y", "Cb", "Cr"]),
        ("corr_rgb", &report.corr_rgb, ["R", "G", "B"]),
        ("corr_ycc", &report.corr_ycc, ["Y", "Cb", "Cr"]),
    ];
    for (name, m, rows) in blocks {
        for (r, row) in m.iter().enumerate() {
            s.push_str(&format!("{name},{},{},{},{}\n", rows[r], row[0], row[1], row[2]));
        }
    }
    s
}
