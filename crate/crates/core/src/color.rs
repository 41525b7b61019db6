//! Affine RGB ↔ YCbCr conversion, perturbations expressed in YCbCr, and
//! gradient transport between the two domains.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RgbImage, YccImage};

/// Studio-swing BT.601 matrix used for the YCbCr domain.
pub const YCC_MATRIX: [[f64; 3]; 3] = [
    [0.2568, 0.5041, 0.0979],
    [-0.1482, -0.2910, 0.4392],
    [0.4392, -0.3678, -0.0714],
];

pub const YCC_BIAS: [f64; 3] = [16.0, 128.0, 128.0];

/// Lower and upper bound of the feasible pixel range.
pub const PIXEL_MIN: f32 = 0.0;
pub const PIXEL_MAX: f32 = 255.0;

/// How an RGB gradient field is mapped onto YCbCr coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientTransport {
    /// Chain rule through `x = x0 + A⁻¹ζ`: the gradient is `(A⁻¹)ᵀ g`.
    #[default]
    Exact,
    /// Elementwise reciprocal matrix `(1 ⊘ A)` applied to `g`.
    Reciprocal,
}

/// `T(x) = A x + b` per pixel, with the inverse precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorTransform {
    matrix: Matrix3<f64>,
    bias: Vector3<f64>,
    inverse: Matrix3<f64>,
    inverse_transpose: Matrix3<f64>,
    reciprocal: Matrix3<f64>,
}

impl Default for ColorTransform {
    fn default() -> Self {
        Self::ycbcr()
    }
}

impl ColorTransform {
    pub fn new(matrix: [[f64; 3]; 3], bias: [f64; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| matrix[r][c]);
        let inverse = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("color matrix is singular".into()))?;
        Ok(Self {
            matrix: m,
            bias: Vector3::from(bias),
            inverse,
            inverse_transpose: inverse.transpose(),
            reciprocal: m.map(|v| 1.0 / v),
        })
    }

    pub fn ycbcr() -> Self {
        Self::new(YCC_MATRIX, YCC_BIAS).expect("YCbCr matrix is invertible")
    }

    /// `A = I`, `b = 0`. Attacks run under this transform reduce to RGB attacks.
    pub fn identity() -> Self {
        Self::new(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0; 3],
        )
        .expect("identity is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn bias(&self) -> &Vector3<f64> {
        &self.bias
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn inverse_transpose(&self) -> &Matrix3<f64> {
        &self.inverse_transpose
    }

    pub fn forward_pixel(&self, rgb: [f32; 3]) -> [f32; 3] {
        mat_vec(&self.matrix, rgb, Some(&self.bias))
    }

    pub fn inverse_pixel(&self, ycc: [f32; 3]) -> [f32; 3] {
        let v = [
            ycc[0] as f64 - self.bias[0],
            ycc[1] as f64 - self.bias[1],
            ycc[2] as f64 - self.bias[2],
        ];
        mat_vec64(&self.inverse, v)
    }

    pub fn rgb_to_ycc(&self, x: &RgbImage) -> YccImage {
        map_pixels(x, |p| self.forward_pixel(p))
    }

    pub fn ycc_to_rgb(&self, x: &YccImage) -> RgbImage {
        map_pixels(x, |p| self.inverse_pixel(p))
    }

    /// `T⁻¹(T(x) + ζ) = x + A⁻¹ζ`. The bias cancels and no box projection is applied.
    pub fn apply_ycc_perturbation(&self, x: &RgbImage, zeta: &YccImage) -> Result<RgbImage> {
        x.check_same_shape(zeta, "apply_ycc_perturbation")?;
        let mut out = x.clone();
        for i in 0..x.pixel_count() {
            let base = x.pixel(i);
            let d = mat_vec(&self.inverse, zeta.pixel(i), None);
            out.set_pixel(
                i,
                [
                    (base[0] as f64 + d[0] as f64) as f32,
                    (base[1] as f64 + d[1] as f64) as f32,
                    (base[2] as f64 + d[2] as f64) as f32,
                ],
            );
        }
        Ok(out)
    }

    /// Measured YCbCr perturbation `T(x_adv) - T(x) = A (x_adv - x)`.
    pub fn ycc_difference(&self, x: &RgbImage, x_adv: &RgbImage) -> Result<YccImage> {
        let delta = x_adv.sub(x)?;
        Ok(map_pixels(&delta, |p| mat_vec(&self.matrix, p, None)))
    }

    /// Maps a per-pixel RGB gradient field onto YCbCr coordinates.
    pub fn transport_gradient(&self, g_rgb: &RgbImage, mode: GradientTransport) -> YccImage {
        let m = match mode {
            GradientTransport::Exact => &self.inverse_transpose,
            GradientTransport::Reciprocal => &self.reciprocal,
        };
        map_pixels(g_rgb, |p| mat_vec(m, p, None))
    }

    /// `A Σ Aᵀ`.
    pub fn transform_covariance(&self, sigma: &Matrix3<f64>) -> Matrix3<f64> {
        self.matrix * sigma * self.matrix.transpose()
    }
}

/// Clamps every value into `[0, 255]`.
pub fn project_box(x: &RgbImage) -> RgbImage {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.clamp(PIXEL_MIN, PIXEL_MAX);
    }
    out
}

pub fn is_in_box(x: &RgbImage) -> bool {
    x.data().iter().all(|v| (PIXEL_MIN..=PIXEL_MAX).contains(v))
}

fn map_pixels<D, E>(x: &Image<D>, f: impl Fn([f32; 3]) -> [f32; 3]) -> Image<E> {
    let mut out: Image<E> = Image::zeros(x.height(), x.width());
    for i in 0..x.pixel_count() {
        out.set_pixel(i, f(x.pixel(i)));
    }
    out
}

fn mat_vec(m: &Matrix3<f64>, v: [f32; 3], bias: Option<&Vector3<f64>>) -> [f32; 3] {
    let out = mat_vec64(m, [v[0] as f64, v[1] as f64, v[2] as f64]);
    match bias {
        Some(b) => [
            (out[0] as f64 + b[0]) as f32,
            (out[1] as f64 + b[1]) as f32,
            (out[2] as f64 + b[2]) as f32,
        ],
        None => out,
    }
}

fn mat_vec64(m: &Matrix3<f64>, v: [f64; 3]) -> [f32; 3] {
    let mut out = [0.0f32; 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (m[(r, 0)] * v[0] + m[(r, 1)] * v[1] + m[(r, 2)] * v[2]) as f32;
    }
    out
}
