//! Planar three-channel images tagged with their color domain.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Marker for the RGB domain (channels R, G, B).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rgb;

/// Marker for the YCbCr domain (channels Y, Cb, Cr).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ycc;

/// Runtime tag for the two domains, used in reports and file formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorDomain {
    Rgb,
    Ycc,
}

impl ColorDomain {
    pub fn channel_names(self) -> [&'static str; 3] {
        match self {
            ColorDomain::Rgb => ["R", "G", "B"],
            ColorDomain::Ycc => ["Y", "Cb", "Cr"],
        }
    }
}

/// `height × width × 3` real-valued image stored channel-planar
/// (`data[c * h * w + y * w + x]`), the layout the detectors consume.
#[derive(Debug, PartialEq)]
pub struct Image<D> {
    height: usize,
    width: usize,
    data: Vec<f32>,
    _domain: PhantomData<D>,
}

pub type RgbImage = Image<Rgb>;
pub type YccImage = Image<Ycc>;

impl<D> Clone for Image<D> {
    fn clone(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
            _domain: PhantomData,
        }
    }
}

impl<D> Image<D> {
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if data.len() != 3 * height * width {
            return Err(Error::shape("image", &[3, height, width], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            data,
            _domain: PhantomData,
        })
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for v in value {
            data.extend(std::iter::repeat(v).take(plane));
        }
        Self {
            height,
            width,
            data,
            _domain: PhantomData,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.pixel_count();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.pixel_count();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn pixel(&self, index: usize) -> [f32; 3] {
        let p = self.pixel_count();
        [self.data[index], self.data[p + index], self.data[2 * p + index]]
    }

    pub fn set_pixel(&mut self, index: usize, value: [f32; 3]) {
        let p = self.pixel_count();
        self.data[index] = value[0];
        self.data[p + index] = value[1];
        self.data[2 * p + index] = value[2];
    }

    pub fn same_shape<E>(&self, other: &Image<E>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape<E>(&self, other: &Image<E>, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                &[3, self.height, self.width],
                &[3, other.height, other.width],
            ))
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self::from_planar(self.height, self.width, data)
    }

    /// Reinterprets the buffer in another domain without touching values.
    pub fn retag<E>(self) -> Image<E> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data,
            _domain: PhantomData,
        }
    }

    /// `[1, 3, H, W]` tensor view for the detectors.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone())
            .expect("image buffer always matches its extents")
    }

    pub fn max_abs_per_channel(&self) -> [f32; 3] {
        let mut out = [0.0f32; 3];
        for (c, m) in out.iter_mut().enumerate() {
            *m = self.channel(c).iter().fold(0.0f32, |a, &v| a.max(v.abs()));
        }
        out
    }
}

/// Stacks same-sized images into a `[N, 3, H, W]` batch tensor.
pub fn batch_tensor<D>(images: &[&Image<D>]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("image batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        first.check_same_shape(img, "batch")?;
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 3, first.height, first.width], data)
}
