//! Non-differentiable detector: co-occurrence histograms of quantized
//! horizontal residuals fed to a logistic-regression classifier.

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledImages};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Quantization of a residual `r`: `clamp(round(r / step), -3, 4) + 3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurrenceSpec {
    pub levels: usize,
    pub step: f32,
}

impl Default for CooccurrenceSpec {
    fn default() -> Self {
        Self {
            levels: 8,
            step: 2.0,
        }
    }
}

/// Same-channel pairs at horizontal offset one (R, G, B), then cross-channel
/// pairs at the same position (RG, GB, RB).
pub const PAIR_COUNT: usize = 6;

impl CooccurrenceSpec {
    pub fn feature_len(&self) -> usize {
        self.levels * self.levels * PAIR_COUNT
    }

    /// Bin index of a zero residual.
    pub fn zero_level(&self) -> usize {
        (self.levels - 1) / 2
    }

    fn quantize(&self, r: f32) -> usize {
        let lo = -(self.zero_level() as f32);
        let hi = (self.levels - 1 - self.zero_level()) as f32;
        ((r / self.step).round().clamp(lo, hi) - lo) as usize
    }
}

/// L1-normalized co-occurrence histogram of `x`.
pub fn extract_cooccurrence(x: &RgbImage, spec: &CooccurrenceSpec) -> Vec<f32> {
    let (h, w) = (x.height(), x.width());
    let l = spec.levels;
    let mut hist = vec![0.0f64; spec.feature_len()];
    if w < 2 {
        return vec![0.0; spec.feature_len()];
    }
    let rw = w - 1;
    let q: Vec<Vec<usize>> = (0..3)
        .map(|c| {
            let ch = x.channel(c);
            (0..h)
                .flat_map(|y| (0..rw).map(move |i| (y, i)))
                .map(|(y, i)| spec.quantize(ch[y * w + i + 1] - ch[y * w + i]))
                .collect()
        })
        .collect();
    for y in 0..h {
        for i in 0..rw {
            let k = y * rw + i;
            if i + 1 < rw {
                for c in 0..3 {
                    hist[c * l * l + q[c][k] * l + q[c][k + 1]] += 1.0;
                }
            }
            for (p, (a, b)) in [(0, 1), (1, 2), (0, 2)].into_iter().enumerate() {
                hist[(3 + p) * l * l + q[a][k] * l + q[b][k]] += 1.0;
            }
        }
    }
    let total: f64 = hist.iter().sum();
    hist.into_iter().map(|v| (v / total) as f32).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NdlConfig {
    pub spec: CooccurrenceSpec,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for NdlConfig {
    fn default() -> Self {
        Self {
            spec: CooccurrenceSpec::default(),
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

impl NdlConfig {
    /// Every problem with the configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.spec.levels < 2 {
            out.push(format!("spec.levels must be at least 2, got {}", self.spec.levels));
        }
        if !(self.spec.step > 0.0 && self.spec.step.is_finite()) {
            out.push(format!("spec.step must be positive, got {}", self.spec.step));
        }
        if self.iterations == 0 {
            out.push("iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            out.push(format!("l2 must be non-negative, got {}", self.l2));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdlDetector {
    pub spec: CooccurrenceSpec,
    pub resolution: usize,
    /// Per-feature standardization.
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl NdlDetector {
    pub fn predict(&self, x: &RgbImage) -> f32 {
        let f = extract_cooccurrence(x, &self.spec);
        let mut z = self.bias as f64;
        for i in 0..f.len() {
            z += self.weights[i] as f64 * ((f[i] - self.mean[i]) / self.std[i]) as f64;
        }
        (1.0 / (1.0 + (-z).exp())) as f32
    }
}

/// Full-batch gradient descent on the logistic loss. Deterministic.
pub fn train_ndl(data: &LabeledImages, cfg: &NdlConfig) -> Result<NdlDetector> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    if Label::ALL.iter().any(|&l| data.count(l) == 0) {
        return Err(Error::Empty("NDL training needs both labels".into()));
    }
    let resolution = data.images[0].height();
    let features: Vec<Vec<f32>> = data
        .images
        .iter()
        .map(|x| extract_cooccurrence(x, &cfg.spec))
        .collect();
    let d = cfg.spec.feature_len();
    let n = features.len() as f64;
    let mut mean = vec![0.0f64; d];
    let mut var = vec![0.0f64; d];
    for f in &features {
        for j in 0..d {
            mean[j] += f[j] as f64 / n;
        }
    }
    for f in &features {
        for j in 0..d {
            var[j] += (f[j] as f64 - mean[j]).powi(2) / n;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-6)).collect();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| (0..d).map(|j| (f[j] as f64 - mean[j]) / std[j]).collect())
        .collect();
    let y: Vec<f64> = data.labels.iter().map(|l| l.target() as f64).collect();

    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0f64; d];
        let mut gb = 0.0;
        for (zi, &yi) in z.iter().zip(&y) {
            let s = b + zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-s).exp()) - yi;
            gb += err / n;
            for j in 0..d {
                gw[j] += err * zi[j] / n;
            }
        }
        for j in 0..d {
            w[j] -= cfg.learning_rate * (gw[j] + cfg.l2 * w[j]);
        }
        b -= cfg.learning_rate * gb;
    }
    Ok(NdlDetector {
        spec: cfg.spec,
        resolution,
        mean: mean.iter().map(|&v| v as f32).collect(),
        std: std.iter().map(|&v| v as f32).collect(),
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: b as f32,
    })
}
