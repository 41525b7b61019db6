//! 64-bit shadow implementations of the differentiable primitives and the
//! detector forward pass, plus central-difference gradient checks against the
//! tape.
#![allow(dead_code)]

use antiforensics::autodiff::{Tape, Tensor, Var};
use antiforensics::detector::{DetectorModel, Layer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self::new(t.shape(), t.data().iter().map(|&v| v as f64).collect())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }
}

pub fn conv2d(x: &T64, k: &T64, bias: Option<&[f64]>, stride: usize, pad: usize) -> T64 {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (f, kh, kw) = (k.shape[0], k.shape[2], k.shape[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += k.data[((o * c + ci) * kh + i) * kw + j]
                                    * x.data[((b * c + ci) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    T64::new(&[n, f, oh, ow], out)
}

pub fn dense(x: &T64, wt: &T64, bias: Option<&[f64]>) -> T64 {
    let (n, i) = (x.shape[0], x.shape[1]);
    let o = wt.shape[0];
    let mut out = vec![0.0; n * o];
    for b in 0..n {
        for r in 0..o {
            out[b * o + r] = bias.map_or(0.0, |bb| bb[r])
                + (0..i).map(|k| wt.data[r * i + k] * x.data[b * i + k]).sum::<f64>();
        }
    }
    T64::new(&[n, o], out)
}

pub fn relu(x: &T64) -> T64 {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &T64) -> T64 {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

fn pool(x: &T64, s: usize, reduce: impl Fn(&[f64]) -> f64) -> T64 {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (h / s, w / s);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut window = Vec::with_capacity(s * s);
    for p in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                window.clear();
                for i in 0..s {
                    for j in 0..s {
                        window.push(x.data[(p * h + y * s + i) * w + xo * s + j]);
                    }
                }
                out.push(reduce(&window));
            }
        }
    }
    T64::new(&[n, c, oh, ow], out)
}

pub fn avg_pool(x: &T64, s: usize) -> T64 {
    pool(x, s, |w| w.iter().sum::<f64>() / w.len() as f64)
}

pub fn max_pool(x: &T64, s: usize) -> T64 {
    pool(x, s, |w| w.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

pub fn zip(a: &T64, b: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
    T64::new(&a.shape, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

pub fn bce(scores: &[f64], labels: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / scores.len() as f64
}

fn run_layers(layers: &[Layer], mut h: T64, params: &[T64], next: &mut usize) -> T64 {
    for layer in layers {
        h = match layer {
            Layer::Normalize => h.map(|v| v / 127.5 - 1.0),
            Layer::Conv {
                stride, padding, ..
            } => {
                let (w, b) = (&params[*next], &params[*next + 1]);
                *next += 2;
                conv2d(&h, w, Some(&b.data), *stride, *padding)
            }
            Layer::Relu => relu(&h),
            Layer::AvgPool(s) => avg_pool(&h, *s),
            Layer::MaxPool(s) => max_pool(&h, *s),
            Layer::Flatten => {
                let n = h.shape[0];
                let rest = h.data.len() / n;
                T64::new(&[n, rest], h.data)
            }
            Layer::Dense { .. } => {
                let (w, b) = (&params[*next], &params[*next + 1]);
                *next += 2;
                dense(&h, w, Some(&b.data))
            }
            Layer::Residual(body) => {
                let inner = run_layers(body, h.clone(), params, next);
                zip(&inner, &h, |a, b| a + b)
            }
            Layer::Sigmoid => sigmoid(&h),
        };
    }
    h
}

/// Detector score of one `[3,H,W]` image, evaluated entirely in `f64`.
pub fn detector_score(model: &DetectorModel, x: &[f64]) -> f64 {
    let r = model.resolution();
    let params: Vec<T64> = model.params().iter().map(T64::from_tensor).collect();
    let mut next = 0;
    let out = run_layers(
        &model.arch().layers,
        T64::new(&[1, 3, r, r], x.to_vec()),
        &params,
        &mut next,
    );
    out.data[0]
}

pub fn detector_loss(model: &DetectorModel, x: &[f64], target: f64) -> f64 {
    bce(&[detector_score(model, x)], &[target])
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// `‖a − b‖₂ / ‖b‖₂` (absolute when `b` vanishes).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 1e-12 {
        diff / norm
    } else {
        diff
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU's kink is never within one step.
fn off_kink_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05f32..1.5);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values on a lattice with spacing far above the step, so the
/// argmax of every pooling window is stable under perturbation.
fn spaced_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - n as f32 * 0.025).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Gradients of `Σ w ⊙ op(inputs)` from the tape versus central differences
/// of the `f64` shadow, for every input. Returns the worst relative error.
fn check(
    inputs: &[Tensor],
    weights_seed: u64,
    tape_op: impl Fn(&mut Tape, &[Var]) -> Var,
    shadow_op: impl Fn(&[T64]) -> T64,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = tape_op(&mut tape, &vars);
    let out_shape = tape.value(y).unwrap().shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = random_tensor(&mut rng, &out_shape, -1.0, 1.0);
    let w64 = T64::from_tensor(&w);
    let wv = tape.constant(w);
    let prod = tape.mul(y, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let shadows: Vec<T64> = inputs.iter().map(T64::from_tensor).collect();
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads.get(*var).unwrap().data().iter().map(|&v| v as f64).collect();
        let objective = |d: &[f64]| {
            let mut args = shadows.clone();
            args[k].data = d.to_vec();
            let out = shadow_op(&args);
            out.data.iter().zip(&w64.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric: Vec<f64> = (0..shadows[k].data.len())
            .map(|i| central_difference(objective, &shadows[k].data, i, FD_STEP))
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Runs the finite-difference check of every primitive on shapes drawn from
/// `seed`; returns `(primitive, worst relative error)`.
pub fn primitive_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let n = rng.gen_range(1..3);
    let c = rng.gen_range(1..4);
    let f = rng.gen_range(1..4);
    let k = rng.gen_range(1..4);
    let stride = rng.gen_range(1..3);
    let pad = rng.gen_range(0..2);
    // Choose a spatial extent compatible with the stride.
    let mut side = rng.gen_range(4..8);
    while (side + 2 * pad < k) || (side + 2 * pad - k) % stride != 0 {
        side += 1;
    }

    let x = random_tensor(&mut rng, &[n, c, side, side], -1.0, 1.0);
    let kern = random_tensor(&mut rng, &[f, c, k, k], -1.0, 1.0);
    let bias = random_tensor(&mut rng, &[f], -1.0, 1.0);
    out.push((
        "conv2d",
        check(
            &[x, kern, bias],
            seed ^ 1,
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap(),
            |a| conv2d(&a[0], &a[1], Some(&a[2].data), stride, pad),
        ),
    ));

    let (i, o) = (rng.gen_range(1..12), rng.gen_range(1..6));
    let x = random_tensor(&mut rng, &[n, i], -1.0, 1.0);
    let wt = random_tensor(&mut rng, &[o, i], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[o], -1.0, 1.0);
    out.push((
        "dense",
        check(
            &[x, wt, b],
            seed ^ 2,
            |t, v| t.dense(v[0], v[1], Some(v[2])).unwrap(),
            |a| dense(&a[0], &a[1], Some(&a[2].data)),
        ),
    ));

    let shape = [n, c, 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4)];
    let x = off_kink_tensor(&mut rng, &shape);
    out.push(("relu", check(&[x], seed ^ 3, |t, v| t.relu(v[0]).unwrap(), |a| relu(&a[0]))));

    let x = random_tensor(&mut rng, &shape, -4.0, 4.0);
    out.push((
        "sigmoid",
        check(&[x], seed ^ 4, |t, v| t.sigmoid(v[0]).unwrap(), |a| sigmoid(&a[0])),
    ));

    let x = random_tensor(&mut rng, &shape, -1.0, 1.0);
    out.push((
        "avg_pool2d",
        check(&[x], seed ^ 5, |t, v| t.avg_pool2d(v[0], 2).unwrap(), |a| avg_pool(&a[0], 2)),
    ));

    let x = spaced_tensor(&mut rng, &shape);
    out.push((
        "max_pool2d",
        check(&[x], seed ^ 6, |t, v| t.max_pool2d(v[0], 2).unwrap(), |a| max_pool(&a[0], 2)),
    ));

    let x = random_tensor(&mut rng, &shape, -1.0, 1.0);
    let total: usize = shape.iter().product();
    out.push((
        "reshape",
        check(
            &[x.clone()],
            seed ^ 7,
            |t, v| t.reshape(v[0], vec![total]).unwrap(),
            |a| T64::new(&[total], a[0].data.clone()),
        ),
    ));
    out.push((
        "flatten",
        check(
            &[x.clone()],
            seed ^ 8,
            |t, v| t.flatten(v[0]).unwrap(),
            |a| T64::new(&[shape[0], total / shape[0]], a[0].data.clone()),
        ),
    ));

    let y = random_tensor(&mut rng, &shape, -1.0, 1.0);
    out.push((
        "add",
        check(
            &[x.clone(), y.clone()],
            seed ^ 9,
            |t, v| t.add(v[0], v[1]).unwrap(),
            |a| zip(&a[0], &a[1], |p, q| p + q),
        ),
    ));
    out.push((
        "mul",
        check(
            &[x.clone(), y],
            seed ^ 10,
            |t, v| t.mul(v[0], v[1]).unwrap(),
            |a| zip(&a[0], &a[1], |p, q| p * q),
        ),
    ));

    let (sc, sh) = (rng.gen_range(-2.0f32..2.0), rng.gen_range(-1.0f32..1.0));
    out.push((
        "affine",
        check(
            &[x.clone()],
            seed ^ 11,
            |t, v| t.affine(v[0], sc, sh).unwrap(),
            |a| a[0].map(|p| sc as f64 * p + sh as f64),
        ),
    ));
    out.push((
        "sum",
        check(
            &[x],
            seed ^ 12,
            |t, v| t.sum(v[0]).unwrap(),
            |a| T64::new(&[], vec![a[0].data.iter().sum()]),
        ),
    ));

    let m = rng.gen_range(1..8);
    let p = random_tensor(&mut rng, &[m, 1], 0.05, 0.95);
    let labels: Vec<f32> = (0..m).map(|_| if rng.gen() { 1.0 } else { 0.0 }).collect();
    let labels64: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    out.push((
        "bce_loss",
        check(
            &[p],
            seed ^ 13,
            |t, v| t.bce_loss(v[0], &labels).unwrap(),
            |a| T64::new(&[], vec![bce(&a[0].data, &labels64)]),
        ),
    ));
    out
}

/// Input-gradient of the BCE loss from the tape versus central differences of
/// the `f64` shadow network at `count` random (channel, pixel) entries.
/// Returns `(relative error over the sampled entries, analytic, numeric)`.
pub fn end_to_end_gradient_error(
    model: &DetectorModel,
    x: &antiforensics::image::RgbImage,
    label: antiforensics::data::Label,
    count: usize,
    seed: u64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let g = model.input_gradient(x, label).unwrap().gradient;
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let target = label.target() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..count).map(|_| rng.gen_range(0..x64.len())).collect();
    let analytic: Vec<f64> = picks.iter().map(|&i| g.data()[i] as f64).collect();
    let numeric: Vec<f64> = picks
        .iter()
        .map(|&i| central_difference(|d| detector_loss(model, d, target), &x64, i, FD_STEP))
        .collect();
    (relative_error(&analytic, &numeric), analytic, numeric)
}
