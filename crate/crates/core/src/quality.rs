//! Full-reference quality metrics and perturbation norms.

use serde::{Deserialize, Serialize};

use crate::color::{ColorTransform, YCC_MATRIX};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Reported PSNR for identical images and the upper bound for all others.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// `20·log10(255 / RMSE)` over all values, capped at [`PSNR_CAP`].
pub fn psnr(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    reference.check_same_shape(test, "psnr")?;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum::<f64>()
        / reference.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (255.0 / mse.sqrt()).log10()).min(PSNR_CAP))
}

fn luma(x: &RgbImage) -> Vec<f64> {
    let row = YCC_MATRIX[0];
    (0..x.pixel_count())
        .map(|i| {
            let p = x.pixel(i);
            16.0 + row[0] * p[0] as f64 + row[1] * p[1] as f64 + row[2] * p[2] as f64
        })
        .collect()
}

/// Mean SSIM of the luma channel over 8×8 windows placed every 4 pixels.
pub fn ssim(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    reference.check_same_shape(test, "ssim")?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (a, b) = (luma(reference), luma(test));
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in (0..=h - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for x0 in (0..=w - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (p, q) = (a[y * w + x], b[y * w + x]);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    pub linf_rgb: [f32; 3],
    pub linf_ycc: [f32; 3],
    pub l2: f64,
}

pub fn perturbation_norms(x: &RgbImage, x_adv: &RgbImage) -> Result<PerturbationNorms> {
    let delta = x_adv.sub(x)?;
    let zeta = ColorTransform::ycbcr().ycc_difference(x, x_adv)?;
    Ok(PerturbationNorms {
        linf_rgb: delta.max_abs_per_channel(),
        linf_ycc: zeta.max_abs_per_channel(),
        l2: delta.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    #[serde(flatten)]
    pub norms: PerturbationNorms,
}

impl QualityReport {
    pub const CSV_HEADER: &'static str =
        "psnr,ssim,linf_r,linf_g,linf_b,linf_y,linf_cb,linf_cr,l2";

    pub fn compute(x: &RgbImage, x_adv: &RgbImage) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, x_adv)?,
            ssim: ssim(x, x_adv)?,
            norms: perturbation_norms(x, x_adv)?,
        })
    }

    pub fn csv_row(&self) -> String {
        let n = &self.norms;
        format!(
            "{:.6},{:.6},{},{},{},{},{},{},{:.6}",
            self.psnr,
            self.ssim,
            n.linf_rgb[0],
            n.linf_rgb[1],
            n.linf_rgb[2],
            n.linf_ycc[0],
            n.linf_ycc[1],
            n.linf_ycc[2],
            n.l2
        )
    }
}

/// Means of PSNR, SSIM and per-channel L∞ over a set of reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_linf_rgb: [f64; 3],
    pub mean_linf_ycc: [f64; 3],
}

pub fn summarize(reports: &[QualityReport]) -> QualitySummary {
    let n = reports.len();
    if n == 0 {
        return QualitySummary::default();
    }
    let mut s = QualitySummary {
        count: n,
        ..Default::default()
    };
    for r in reports {
        s.mean_psnr += r.psnr / n as f64;
        s.mean_ssim += r.ssim / n as f64;
        for c in 0..3 {
            s.mean_linf_rgb[c] += r.norms.linf_rgb[c] as f64 / n as f64;
            s.mean_linf_ycc[c] += r.norms.linf_ycc[c] as f64 / n as f64;
        }
    }
    s
}
