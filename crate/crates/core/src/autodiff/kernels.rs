//! Raw forward/backward kernels over flat buffers.
//!
//! All inner products accumulate in `f64` and are stored back as `f32`.

/// Geometry of a 2-D cross-correlation over an NCHW batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// Unfolds one sample into a `[patch_len, out_h*out_w]` column matrix.
fn im2col(g: &ConvGeometry, input: &[f32], cols: &mut [f32]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let channel = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &channel[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one input sample.
fn col2im(g: &ConvGeometry, cols: &[f64], out: &mut [f32]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let channel = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut channel[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox] as f32;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(
    g: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let mut out = vec![0.0f32; g.batch * g.filters * plane];
    let mut cols = vec![0.0f32; patch * plane];
    let mut acc = vec![0.0f64; plane];
    for n in 0..g.batch {
        im2col(g, &input[n * g.in_sample()..(n + 1) * g.in_sample()], &mut cols);
        for f in 0..g.filters {
            acc.fill(bias.map_or(0.0, |b| b[f] as f64));
            for k in 0..patch {
                let w = kernel[f * patch + k] as f64;
                let row = &cols[k * plane..(k + 1) * plane];
                for (a, &x) in acc.iter_mut().zip(row) {
                    *a += w * x as f64;
                }
            }
            let dst = &mut out[(n * g.filters + f) * plane..(n * g.filters + f + 1) * plane];
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        }
    }
    out
}

/// Gradients of a convolution. Each output is only computed when requested.
pub struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    want: (bool, bool, bool),
) -> ConvGrads {
    let (want_input, want_kernel, want_bias) = want;
    let (patch, plane) = (g.patch_len(), g.out_plane());
    let mut d_input = want_input.then(|| vec![0.0f32; g.batch * g.in_sample()]);
    let mut d_kernel = want_kernel.then(|| vec![0.0f64; g.filters * patch]);
    let mut d_bias = want_bias.then(|| vec![0.0f64; g.filters]);

    let mut cols = vec![0.0f32; patch * plane];
    let mut d_cols = vec![0.0f64; patch * plane];
    for n in 0..g.batch {
        let dout = &grad_out[n * g.filters * plane..(n + 1) * g.filters * plane];
        if let Some(db) = d_bias.as_mut() {
            for f in 0..g.filters {
                db[f] += dout[f * plane..(f + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_mut() {
            im2col(g, &input[n * g.in_sample()..(n + 1) * g.in_sample()], &mut cols);
            for f in 0..g.filters {
                let drow = &dout[f * plane..(f + 1) * plane];
                for k in 0..patch {
                    let crow = &cols[k * plane..(k + 1) * plane];
                    let dot: f64 = drow
                        .iter()
                        .zip(crow)
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum();
                    dk[f * patch + k] += dot;
                }
            }
        }
        if let Some(di) = d_input.as_mut() {
            d_cols.fill(0.0);
            for f in 0..g.filters {
                let drow = &dout[f * plane..(f + 1) * plane];
                for k in 0..patch {
                    let w = kernel[f * patch + k] as f64;
                    let dst = &mut d_cols[k * plane..(k + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(drow) {
                        *d += w * v as f64;
                    }
                }
            }
            col2im(
                g,
                &d_cols,
                &mut di[n * g.in_sample()..(n + 1) * g.in_sample()],
            );
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel.map(to_f32),
        bias: d_bias.map(to_f32),
    }
}

/// `x: [batch, inputs]`, `w: [outputs, inputs]`.
pub fn dense_forward(
    x: &[f32],
    w: &[f32],
    b: Option<&[f32]>,
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; batch * outputs];
    for n in 0..batch {
        let row = &x[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let wrow = &w[o * inputs..(o + 1) * inputs];
            let dot: f64 = row
                .iter()
                .zip(wrow)
                .map(|(&a, &c)| a as f64 * c as f64)
                .sum();
            out[n * outputs + o] = (dot + b.map_or(0.0, |b| b[o] as f64)) as f32;
        }
    }
    out
}

pub struct DenseGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f32],
    w: &[f32],
    grad_out: &[f32],
    batch: usize,
    inputs: usize,
    outputs: usize,
    want: (bool, bool, bool),
) -> DenseGrads {
    let input = want.0.then(|| {
        let mut acc = vec![0.0f64; batch * inputs];
        for n in 0..batch {
            for o in 0..outputs {
                let d = grad_out[n * outputs + o] as f64;
                let wrow = &w[o * inputs..(o + 1) * inputs];
                for (a, &c) in acc[n * inputs..(n + 1) * inputs].iter_mut().zip(wrow) {
                    *a += d * c as f64;
                }
            }
        }
        to_f32(acc)
    });
    let weight = want.1.then(|| {
        let mut acc = vec![0.0f64; outputs * inputs];
        for n in 0..batch {
            let row = &x[n * inputs..(n + 1) * inputs];
            for o in 0..outputs {
                let d = grad_out[n * outputs + o] as f64;
                for (a, &v) in acc[o * inputs..(o + 1) * inputs].iter_mut().zip(row) {
                    *a += d * v as f64;
                }
            }
        }
        to_f32(acc)
    });
    let bias = want.2.then(|| {
        let mut acc = vec![0.0f64; outputs];
        for n in 0..batch {
            for o in 0..outputs {
                acc[o] += grad_out[n * outputs + o] as f64;
            }
        }
        to_f32(acc)
    });
    DenseGrads {
        input,
        weight,
        bias,
    }
}

/// Non-overlapping average pooling over `[planes, h, w]` with window `size`.
pub fn avg_pool_forward(x: &[f32], planes: usize, h: usize, w: usize, size: usize) -> Vec<f32> {
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0f32; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0f64;
                for i in 0..size {
                    let line = &src[(oy * size + i) * w + ox * size..][..size];
                    s += line.iter().map(|&v| v as f64).sum::<f64>();
                }
                out[(p * oh + oy) * ow + ox] = (s * norm) as f32;
            }
        }
    }
    out
}

pub fn avg_pool_backward(
    grad_out: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
) -> Vec<f32> {
    let (oh, ow) = (h / size, w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0f32; planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                let d = grad_out[(p * oh + y / size) * ow + x / size] as f64;
                out[(p * h + y) * w + x] = (d * norm) as f32;
            }
        }
    }
    out
}

/// Returns pooled values and, for each output, the flat index of the winning input.
pub fn max_pool_forward(
    x: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = vec![0.0f32; planes * oh * ow];
    let mut argmax = vec![0usize; planes * oh * ow];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0;
                for i in 0..size {
                    for j in 0..size {
                        let idx = (p * h + oy * size + i) * w + ox * size + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_padded_conv_matches_direct_loop() {
        let g = ConvGeometry {
            batch: 1,
            in_channels: 2,
            height: 6,
            width: 6,
            filters: 3,
            kernel_h: 4,
            kernel_w: 4,
            stride: 2,
            padding: 1,
            out_h: 3,
            out_w: 3,
        };
        let x: Vec<f32> = (0..72).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let k: Vec<f32> = (0..96).map(|i| ((i * 5) % 13) as f32 * 0.1 - 0.6).collect();
        let out = conv2d_forward(&g, &x, &k, None);
        for f in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = 0.0f64;
                    for c in 0..2 {
                        for i in 0..4 {
                            for j in 0..4 {
                                let iy = (oy * 2 + i) as isize - 1;
                                let ix = (ox * 2 + j) as isize - 1;
                                if (0..6).contains(&iy) && (0..6).contains(&ix) {
                                    s += x[c * 36 + iy as usize * 6 + ix as usize] as f64
                                        * k[((f * 2 + c) * 4 + i) * 4 + j] as f64;
                                }
                            }
                        }
                    }
                    assert!((out[(f * 3 + oy) * 3 + ox] as f64 - s).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let x = vec![3.0f32; 2 * 4 * 4];
        let out = avg_pool_forward(&x, 2, 4, 4, 2);
        assert_eq!(out, vec![3.0; 8]);
        let back = avg_pool_backward(&[1.0; 8], 2, 4, 4, 2);
        assert!(back.iter().all(|&v| v == 0.25));
    }
}
