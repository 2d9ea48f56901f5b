//! Scalar images and dense flow fields.
//!
//! `Image` is the universal value type of the crate: the high-resolution
//! scene, the low-resolution frames and all intermediate diffusion states
//! are plain row-major grids of `f64` intensities. Values are nominally in
//! [0,255] but are never clamped during iteration; quantisation happens
//! only on PGM export.

use crate::error::{Error, Result};

/// Row-major 2-D grid of double-precision intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from raw row-major data, validating the invariants
    /// (non-empty dimensions, matching length, finite values).
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                context: "image data",
                left: data.len(),
                right: width * height,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image::filled(width, height, 0.0)
    }

    /// Internal constructor for buffers produced by crate arithmetic.
    /// Skips the finiteness scan; callers guarantee the length.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Pixel access with reflecting (half-sample symmetric) boundary
    /// handling: index -1 maps to 0, index n to n-1, folding repeatedly.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        let xr = reflect(x, self.width);
        let yr = reflect(y, self.height);
        self.data[yr * self.width + xr]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.pixels() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &Image, scale: f64) -> Result<Image> {
        check_dims("add_scaled", self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Image::from_raw(self.width, self.height, data))
    }
}

/// Half-sample symmetric reflection of an index into `[0, n)`.
///
/// The extension has period `2n`: ... 1 0 | 0 1 .. n-1 | n-1 .. 1 0 | 0 1 ...
/// This is the boundary rule used by every operator in the crate; it keeps
/// symmetric convolutions exactly self-adjoint.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if i >= 0 && i < n {
        return i as usize;
    }
    let period = 2 * n;
    let mut i = i % period;
    if i < 0 {
        i += period;
    }
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

pub(crate) fn check_dims(context: &'static str, a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch {
            context,
            expected_w: a.width,
            expected_h: a.height,
            actual_w: b.width,
            actual_h: b.height,
        });
    }
    Ok(())
}

/// Dense per-pixel displacement field. `u` is the horizontal component,
/// `v` the vertical one, both in pixels of the grid the field lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "flow dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::LengthMismatch {
                context: "flow components",
                left: u.len().max(v.len()),
                right: width * height,
            });
        }
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("flow components"));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    /// All-zero (identity) flow.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty flow field");
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Constant-translation flow.
    pub fn constant(width: usize, height: usize, du: f64, dv: f64) -> Self {
        assert!(width > 0 && height > 0, "empty flow field");
        FlowField {
            width,
            height,
            u: vec![du; width * height],
            v: vec![dv; width * height],
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Self {
        debug_assert_eq!(u.len(), width * height);
        debug_assert_eq!(v.len(), width * height);
        FlowField {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub(crate) fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub(crate) fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Mean Euclidean norm of the displacement vectors.
    pub fn mean_norm(&self) -> f64 {
        let sum: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(du, dv)| (du * du + dv * dv).sqrt())
            .sum();
        sum / self.pixels() as f64
    }
}

/// Mean squared error between two same-sized images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims("mse", a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels() as f64)
}
