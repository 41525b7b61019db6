use rand::Rng;

use super::config::{AttackConfig, AttackMethod};
use super::source::{bce, GradientSource};
use crate::color::{project_box, ColorTransform, GradientTransport};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::image::{RgbImage, YccImage};

/// Gradients whose L1 norm falls below this are treated as zero and the
/// iteration's step is skipped.
pub const L1_GUARD: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub adversarial: RgbImage,
    /// `x_adv - x`.
    pub delta: RgbImage,
    /// Measured `T(x_adv) - T(x)` under the YCbCr transform.
    pub zeta: YccImage,
    /// The YCbCr iterate before box projection (YCbCr attack only).
    pub internal_zeta: Option<YccImage>,
    /// Loss at every iterate, including the final one.
    pub losses: Vec<f32>,
    pub source: String,
}

impl AttackResult {
    fn finish(
        source: &dyn GradientSource,
        x: &RgbImage,
        adversarial: RgbImage,
        internal_zeta: Option<YccImage>,
        mut losses: Vec<f32>,
        label: Label,
    ) -> Result<Self> {
        losses.push(bce(source.score(&adversarial)?, label));
        let delta = adversarial.sub(x)?;
        let zeta = ColorTransform::ycbcr().ycc_difference(x, &adversarial)?;
        Ok(Self {
            adversarial,
            delta,
            zeta,
            internal_zeta,
            losses,
            source: source.name(),
        })
    }
}

/// `+1` for positive values, `-1` for negative ones, `0` otherwise.
pub fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_budget(name: &str, eps: f32) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} budget must be finite and non-negative, got {eps}"
        )))
    }
}

fn check_input(source: &dyn GradientSource, x: &RgbImage) -> Result<()> {
    let r = source.resolution();
    if x.height() != r || x.width() != r {
        return Err(Error::shape("attack input", &[3, r, r], &[3, x.height(), x.width()]));
    }
    Ok(())
}

/// `x + d`, rounded once from the exact sum.
fn offset(x: &RgbImage, d: &[f32]) -> RgbImage {
    let mut out = x.clone();
    for (o, v) in out.data_mut().iter_mut().zip(d) {
        *o = (*o as f64 + *v as f64) as f32;
    }
    out
}

/// `g ← μ g + grad / ‖grad‖₁`. Returns `false` (leaving `g` untouched) when
/// the gradient is numerically zero.
fn accumulate_momentum(g: &mut [f32], grad: &[f32], mu: f32) -> bool {
    let l1: f64 = grad.iter().map(|v| v.abs() as f64).sum();
    if l1 < L1_GUARD {
        return false;
    }
    for (m, v) in g.iter_mut().zip(grad) {
        *m = mu * *m + (*v as f64 / l1) as f32;
    }
    true
}

/// Single-step sign attack: `Proj_D(x + ε·sign(∇ₓL))`.
pub fn fgsm(source: &dyn GradientSource, x: &RgbImage, label: Label, eps: f32) -> Result<AttackResult> {
    check_budget("FGSM", eps)?;
    check_input(source, x)?;
    let (loss, grad) = source.loss_and_gradient(x, label)?;
    let step: Vec<f32> = grad.data().iter().map(|&g| eps * sign(g)).collect();
    let adv = project_box(&offset(x, &step));
    AttackResult::finish(source, x, adv, None, vec![loss], label)
}

/// Momentum iterative sign attack with step `ε/K` and an L∞ ball of radius
/// `ε` around `x`. The accumulated offset is kept unprojected between
/// iterations; every iterate is box-projected before the next gradient.
pub fn mim(
    source: &dyn GradientSource,
    x: &RgbImage,
    label: Label,
    eps: f32,
    iterations: usize,
    mu: f32,
) -> Result<AttackResult> {
    check_budget("MIM", eps)?;
    check_input(source, x)?;
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let alpha = eps / iterations as f32;
    let n = x.data().len();
    let mut g = vec![0.0f32; n];
    let mut delta = vec![0.0f32; n];
    let mut current = x.clone();
    let mut losses = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (loss, grad) = source.loss_and_gradient(&current, label)?;
        losses.push(loss);
        if !accumulate_momentum(&mut g, grad.data(), mu) {
            continue;
        }
        for (d, m) in delta.iter_mut().zip(&g) {
            *d = (*d + alpha * sign(*m)).clamp(-eps, eps);
        }
        current = project_box(&offset(x, &delta));
    }
    AttackResult::finish(source, x, current, None, losses, label)
}

/// Momentum sign attack carried out on a perturbation `ζ` in the transformed
/// colour space with per-channel budgets: gradients are transported through
/// `x = x₀ + A⁻¹ζ`, each channel steps by `ε[c]/K` and is clamped to
/// `[-ε[c], ε[c]]`, and the reconstructed image is box-projected.
#[allow(clippy::too_many_arguments)]
pub fn ycc_attack_with(
    transform: &ColorTransform,
    source: &dyn GradientSource,
    x: &RgbImage,
    label: Label,
    eps: [f32; 3],
    iterations: usize,
    mu: f32,
    mode: GradientTransport,
) -> Result<AttackResult> {
    for (c, e) in eps.iter().enumerate() {
        check_budget(["Y", "Cb", "Cr"][c], *e)?;
    }
    check_input(source, x)?;
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let alpha = eps.map(|e| e / iterations as f32);
    let plane = x.pixel_count();
    let mut g = vec![0.0f32; 3 * plane];
    let mut zeta = YccImage::zeros(x.height(), x.width());
    let mut current = x.clone();
    let mut losses = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (loss, grad) = source.loss_and_gradient(&current, label)?;
        losses.push(loss);
        let transported = transform.transport_gradient(&grad, mode);
        if !accumulate_momentum(&mut g, transported.data(), mu) {
            continue;
        }
        for c in 0..3 {
            let gc = &g[c * plane..(c + 1) * plane];
            for (z, m) in zeta.channel_mut(c).iter_mut().zip(gc) {
                *z = (*z + alpha[c] * sign(*m)).clamp(-eps[c], eps[c]);
            }
        }
        current = project_box(&transform.apply_ycc_perturbation(x, &zeta)?);
    }
    AttackResult::finish(source, x, current, Some(zeta), losses, label)
}

/// [`ycc_attack_with`] under the standard YCbCr transform.
pub fn ycc_attack(
    source: &dyn GradientSource,
    x: &RgbImage,
    label: Label,
    eps: [f32; 3],
    iterations: usize,
    mu: f32,
    mode: GradientTransport,
) -> Result<AttackResult> {
    ycc_attack_with(&ColorTransform::ycbcr(), source, x, label, eps, iterations, mu, mode)
}

/// Runs the attack described by `cfg`. The label is the image's true class;
/// the attack raises the loss against it.
pub fn run_attack(
    cfg: &AttackConfig,
    source: &dyn GradientSource,
    x: &RgbImage,
    label: Label,
) -> Result<AttackResult> {
    cfg.validate()?;
    match cfg.method {
        AttackMethod::Fgsm => fgsm(source, x, label, cfg.budget.scalar()?),
        AttackMethod::Mim => mim(source, x, label, cfg.budget.scalar()?, cfg.iterations, cfg.momentum),
        AttackMethod::Ycc => ycc_attack(
            source,
            x,
            label,
            cfg.budget.per_channel(),
            cfg.iterations,
            cfg.momentum,
            cfg.transport,
        ),
    }
}

/// `Proj_D(x + ε·s)` with `s` uniform on `{-1, +1}` per value: a perturbation
/// of the same magnitude as FGSM that carries no gradient information.
pub fn random_sign_perturbation(x: &RgbImage, eps: f32, rng: &mut impl Rng) -> RgbImage {
    let step: Vec<f32> = (0..x.data().len())
        .map(|_| if rng.gen::<bool>() { eps } else { -eps })
        .collect();
    project_box(&offset(x, &step))
}
