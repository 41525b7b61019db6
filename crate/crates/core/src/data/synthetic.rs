//! Two-class synthetic surrogate for GAN-generated versus natural images.
//!
//! Fake images are smooth low-resolution fields upsampled with
//! nearest-neighbour interpolation (block and periodic spectral artifacts),
//! with a mild saturation boost and a luminance checkerboard. Real images are
//! Gaussian-smoothed broadband noise under a smooth illumination ramp. Both
//! classes share the same base-colour distribution, so mean intensity alone
//! does not separate them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{quantize, save_image};
use super::manifest::{DatasetManifest, Label, Record, Split};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Values are kept inside this band so perturbations rarely hit the box.
const VALUE_FLOOR: f32 = 20.0;
const VALUE_CEIL: f32 = 235.0;
const MAX_ATTEMPTS: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub resolution: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Nearest-neighbour upsampling factor of the fake class.
    pub upsample_factor: usize,
    /// Amplitude of the checkerboard added to fake images.
    pub artifact_amplitude: f32,
    /// Chroma gain of the fake class (1 = none).
    pub saturation_skew: f32,
    /// Standard deviation of the luminance texture, both classes.
    pub texture_amplitude: f32,
    /// Gaussian width (pixels) of the real-class texture.
    pub smoothing_sigma: f32,
    /// Peak-to-peak strength of the real-class illumination ramp.
    pub illumination: f32,
    /// Per-value Gaussian noise, both classes.
    pub sensor_noise: f32,
    /// Upper bound on test accuracy of the best mean-intensity threshold.
    pub max_intensity_separability: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            train_per_class: 2000,
            val_per_class: 333,
            test_per_class: 333,
            upsample_factor: 4,
            artifact_amplitude: 5.0,
            saturation_skew: 1.15,
            texture_amplitude: 18.0,
            smoothing_sigma: 2.0,
            illumination: 30.0,
            sensor_noise: 2.0,
            max_intensity_separability: 0.65,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Every problem with the configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.resolution == 0 || self.resolution % 4 != 0 {
            problems.push(format!(
                "resolution must be a positive multiple of 4, got {}",
                self.resolution
            ));
        }
        if self.upsample_factor == 0 || self.resolution % self.upsample_factor.max(1) != 0 {
            problems.push(format!(
                "upsample_factor {} must divide resolution {}",
                self.upsample_factor, self.resolution
            ));
        }
        for (name, n) in [
            ("train_per_class", self.train_per_class),
            ("val_per_class", self.val_per_class),
            ("test_per_class", self.test_per_class),
        ] {
            if n == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if !(self.smoothing_sigma > 0.0) {
            problems.push("smoothing_sigma must be positive".into());
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One generated sample before it is written out.
struct Sample {
    label: Label,
    split: Split,
    index: usize,
    image: RgbImage,
}

/// Generates the dataset under `root` as `<label>/<split>/<index>.png` plus
/// `manifest.json`. Redraws (with a derived seed) until mean intensity alone
/// cannot separate the test split better than `max_intensity_separability`.
pub fn generate_synthetic(cfg: &SyntheticConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut samples = None;
    for attempt in 0..MAX_ATTEMPTS {
        let drawn = draw_all(cfg, attempt);
        let (means, labels): (Vec<f64>, Vec<Label>) = drawn
            .iter()
            .filter(|s| s.split == Split::Test)
            .map(|s| (mean_intensity(&s.image), s.label))
            .unzip();
        let acc = best_threshold_accuracy(&means, &labels);
        if acc <= cfg.max_intensity_separability {
            samples = Some(drawn);
            break;
        }
        log::warn!("attempt {attempt}: mean-intensity accuracy {acc:.3} too high, redrawing");
    }
    let samples = samples.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no draw within {MAX_ATTEMPTS} attempts kept mean-intensity accuracy <= {}",
            cfg.max_intensity_separability
        ))
    })?;

    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = Path::new(s.label.as_str())
            .join(s.split.as_str())
            .join(format!("{}.png", s.index));
        save_image(&s.image, &root.join(&rel))?;
        records.push(Record {
            path: rel,
            label: s.label,
            split: s.split,
        });
    }
    let manifest = DatasetManifest::new(
        root,
        cfg.resolution,
        cfg.digest(),
        Some(cfg.clone()),
        records,
    );
    manifest.save()?;
    Ok(manifest)
}

/// Checks that a manifest's recorded digest matches its generator config.
pub fn verify_digest(manifest: &DatasetManifest) -> Result<()> {
    match &manifest.generator {
        Some(cfg) if cfg.digest() == manifest.digest => Ok(()),
        Some(_) => Err(Error::InvalidArgument(
            "manifest digest does not match its generator config".into(),
        )),
        None => Ok(()),
    }
}

fn draw_all(cfg: &SyntheticConfig, attempt: u64) -> Vec<Sample> {
    let mut jobs = Vec::new();
    for label in Label::ALL {
        for split in Split::ALL {
            for index in 0..cfg.count(split) {
                jobs.push((label, split, index));
            }
        }
    }
    let seed = cfg
        .seed
        .wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    jobs.into_par_iter()
        .enumerate()
        .map(|(stream, (label, split, index))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let image = match label {
                Label::Fake => fake_image(cfg, &mut rng),
                Label::Real => real_image(cfg, &mut rng),
            };
            Sample {
                label,
                split,
                index,
                image,
            }
        })
        .collect()
}

fn base_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let gray = rng.gen_range(85.0f32..170.0);
    let tint = Normal::new(0.0f32, 8.0).expect("valid normal");
    [
        gray + tint.sample(rng),
        gray + tint.sample(rng),
        gray + tint.sample(rng),
    ]
}

pub(crate) fn fake_image(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    let res = cfg.resolution;
    let f = cfg.upsample_factor;
    let low = res / f;
    let base = base_color(rng);
    let lum = smooth_field(rng, low, 1.0);
    let chroma: Vec<Vec<f32>> = (0..3).map(|_| smooth_field(rng, low, 1.0)).collect();
    let noise = Normal::new(0.0f32, cfg.sensor_noise.max(0.0)).expect("valid normal");

    let mut img = RgbImage::zeros(res, res);
    for y in 0..res {
        for x in 0..res {
            let li = (y / f) * low + x / f;
            let mut v = [0.0f32; 3];
            for c in 0..3 {
                v[c] = base[c]
                    + cfg.texture_amplitude * lum[li]
                    + 0.25 * cfg.texture_amplitude * chroma[c][li];
            }
            let m = (v[0] + v[1] + v[2]) / 3.0;
            let checker = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            for c in v.iter_mut() {
                *c = m + (*c - m) * cfg.saturation_skew
                    + cfg.artifact_amplitude * checker
                    + noise.sample(rng);
            }
            img.set_pixel(y * res + x, finish(v));
        }
    }
    img
}

pub(crate) fn real_image(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    let res = cfg.resolution;
    let base = base_color(rng);
    let lum = smooth_field(rng, res, cfg.smoothing_sigma);
    let chroma: Vec<Vec<f32>> = (0..3)
        .map(|_| smooth_field(rng, res, cfg.smoothing_sigma))
        .collect();
    let theta = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let strength = rng.gen_range(-cfg.illumination..=cfg.illumination);
    let noise = Normal::new(0.0f32, cfg.sensor_noise.max(0.0)).expect("valid normal");
    let centre = (res as f32 - 1.0) / 2.0;

    let mut img = RgbImage::zeros(res, res);
    for y in 0..res {
        for x in 0..res {
            let i = y * res + x;
            let ramp = strength
                * ((x as f32 - centre) * theta.cos() + (y as f32 - centre) * theta.sin())
                / res as f32;
            let mut v = [0.0f32; 3];
            for c in 0..3 {
                v[c] = base[c]
                    + cfg.texture_amplitude * lum[i]
                    + 0.25 * cfg.texture_amplitude * chroma[c][i]
                    + ramp
                    + noise.sample(rng);
            }
            img.set_pixel(i, finish(v));
        }
    }
    img
}

fn finish(v: [f32; 3]) -> [f32; 3] {
    v.map(|c| quantize(c.clamp(VALUE_FLOOR, VALUE_CEIL)) as f32)
}

/// `n × n` white noise blurred by a Gaussian of width `sigma`, rescaled to unit variance.
fn smooth_field(rng: &mut ChaCha8Rng, n: usize, sigma: f32) -> Vec<f32> {
    let white: Vec<f32> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let blurred = gaussian_blur(&white, n, sigma);
    let mean = blurred.iter().map(|&v| v as f64).sum::<f64>() / blurred.len() as f64;
    let var = blurred
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / blurred.len() as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    blurred
        .into_iter()
        .map(|v| ((v as f64 - mean) * scale) as f32)
        .collect()
}

/// Separable Gaussian blur of a square plane with mirrored borders.
fn gaussian_blur(src: &[f32], n: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f32> = (-radius..=radius)
        .map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = weights.iter().sum();
    let reflect = |i: isize| -> usize {
        let m = n as isize;
        let mut i = i;
        while i < 0 || i >= m {
            i = if i < 0 { -i - 1 } else { 2 * m - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for (k, w) in weights.iter().enumerate() {
                s += w * src[y * n + reflect(x as isize + k as isize - radius)];
            }
            tmp[y * n + x] = s / norm;
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for (k, w) in weights.iter().enumerate() {
                s += w * tmp[reflect(y as isize + k as isize - radius) * n + x];
            }
            out[y * n + x] = s / norm;
        }
    }
    out
}

pub fn mean_intensity(img: &RgbImage) -> f64 {
    img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64
}

/// Accuracy of the best single threshold on `values` (either polarity).
pub fn best_threshold_accuracy(values: &[f64], labels: &[Label]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = values.len() as f64;
    let total_fake = labels.iter().filter(|&&l| l == Label::Fake).count() as f64;
    // Predict fake above the cut; sweep the cut through the sorted values.
    let mut fake_below = 0.0;
    let mut real_below = 0.0;
    let mut best: f64 = 0.0;
    let score = |fake_below: f64, real_below: f64| {
        let correct = real_below + (total_fake - fake_below);
        (correct / n).max(1.0 - correct / n)
    };
    best = best.max(score(0.0, 0.0));
    for (k, &i) in order.iter().enumerate() {
        match labels[i] {
            Label::Fake => fake_below += 1.0,
            Label::Real => real_below += 1.0,
        }
        let tie_next = order
            .get(k + 1)
            .is_some_and(|&j| values[j] == values[i]);
        if !tie_next {
            best = best.max(score(fake_below, real_below));
        }
    }
    best
}
