//! The linear operators of the observational model and their adjoints.
//!
//! A low-resolution frame is modelled as an operator chain applied to the
//! high-resolution scene: warping `W` (motion compensation), Gaussian blur
//! `B` (point spread function, self-adjoint) and bilinear downsampling
//! `D`. The seven orders in which the chain can be composed are listed in
//! [`ObservationalModel`]. Every forward operator here is a sparse linear
//! map whose transpose is implemented as the exact scatter of the same
//! bilinear/convolution weights, so `<O u, v> == <u, O^T v>` holds to
//! rounding error. All operators use reflecting (half-sample symmetric)
//! boundaries and preserve constants.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{reflect, FlowField, Image};

/// Gaussian blur operator `B`. `sigma_b = 0` is the identity. The kernel
/// is truncated at 3 sigma per side and renormalised so its taps sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub sigma_b: f64,
}

impl BlurSpec {
    pub fn new(sigma_b: f64) -> Result<Self> {
        if !(sigma_b >= 0.0) || !sigma_b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "blur sigma must be finite and >= 0, got {sigma_b}"
            )));
        }
        Ok(BlurSpec { sigma_b })
    }

    pub fn identity() -> Self {
        BlurSpec { sigma_b: 0.0 }
    }
}

/// Sampled Gaussian taps for offsets -r..=r, normalised to sum 1.
/// Empty for sigma = 0 (identity).
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return Vec::new();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian convolution with reflecting boundaries.
///
/// Half-sample symmetric reflection makes the operator matrix exactly
/// symmetric, so `B^T = B`.
pub fn blur(img: &Image, spec: &BlurSpec) -> Image {
    let taps = gaussian_kernel(spec.sigma_b);
    if taps.is_empty() {
        return img.clone();
    }
    convolve_separable(img, &taps)
}

pub(crate) fn convolve_separable(img: &Image, taps: &[f64]) -> Image {
    let (w, h) = (img.width(), img.height());
    let r = (taps.len() / 2) as isize;

    // Horizontal pass.
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, out_row)| {
        let row = &img.data()[y * w..(y + 1) * w];
        for (x, out) in out_row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let xi = reflect(x as isize + k as isize - r, w);
                acc += t * row[xi];
            }
            *out = acc;
        }
    });

    // Vertical pass.
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, out_row)| {
        for (k, &t) in taps.iter().enumerate() {
            let yi = reflect(y as isize + k as isize - r, h);
            let src = &tmp[yi * w..(yi + 1) * w];
            for (o, s) in out_row.iter_mut().zip(src) {
                *o += t * s;
            }
        }
    });

    Image::from_raw(w, h, out)
}

/// Grid geometry of the downsampling operator `D`: high-resolution and
/// low-resolution dimensions. The per-axis scale factor is the realised
/// ratio `hr / lr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleSpec {
    pub hr_width: usize,
    pub hr_height: usize,
    pub lr_width: usize,
    pub lr_height: usize,
}

impl ScaleSpec {
    pub fn new(hr_width: usize, hr_height: usize, lr_width: usize, lr_height: usize) -> Result<Self> {
        if hr_width == 0 || hr_height == 0 || lr_width == 0 || lr_height == 0 {
            return Err(Error::InvalidParameter("zero-sized grid".into()));
        }
        if lr_width > hr_width || lr_height > hr_height {
            return Err(Error::InvalidParameter(format!(
                "low-resolution grid {lr_width}x{lr_height} larger than high-resolution {hr_width}x{hr_height}"
            )));
        }
        Ok(ScaleSpec {
            hr_width,
            hr_height,
            lr_width,
            lr_height,
        })
    }

    /// Derives the low-resolution grid as `round(hr / factor)`.
    pub fn from_factor(hr_width: usize, hr_height: usize, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) || !factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be >= 1, got {factor}"
            )));
        }
        let lr_w = ((hr_width as f64 / factor).round() as usize).max(1);
        let lr_h = ((hr_height as f64 / factor).round() as usize).max(1);
        ScaleSpec::new(hr_width, hr_height, lr_w, lr_h)
    }

    pub fn identity(width: usize, height: usize) -> Self {
        ScaleSpec {
            hr_width: width,
            hr_height: height,
            lr_width: width,
            lr_height: height,
        }
    }

    pub fn factor_x(&self) -> f64 {
        self.hr_width as f64 / self.lr_width as f64
    }

    pub fn factor_y(&self) -> f64 {
        self.hr_height as f64 / self.lr_height as f64
    }

    pub fn is_identity(&self) -> bool {
        self.hr_width == self.lr_width && self.hr_height == self.lr_height
    }
}

/// The four bilinear taps (reflected indices and weights) for a continuous
/// coordinate. Weights are the usual tensor-product bilinear weights and
/// sum to 1.
#[inline]
pub(crate) fn bilinear_taps(cx: f64, cy: f64, w: usize, h: usize) -> [(usize, usize, f64); 4] {
    let x0f = cx.floor();
    let y0f = cy.floor();
    let fx = cx - x0f;
    let fy = cy - y0f;
    let x0 = reflect(x0f as isize, w);
    let x1 = reflect(x0f as isize + 1, w);
    let y0 = reflect(y0f as isize, h);
    let y1 = reflect(y0f as isize + 1, h);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ]
}

#[inline]
fn sample_bilinear(img: &Image, cx: f64, cy: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y, wt) in bilinear_taps(cx, cy, img.width(), img.height()) {
        acc += wt * img.get(x, y);
    }
    acc
}

/// Destination pixel `i` samples source coordinate `(i + 0.5) * f - 0.5`
/// (pixel-centre alignment; factor 1 is the exact identity).
#[inline]
fn resample_coord(i: usize, factor: f64) -> f64 {
    (i as f64 + 0.5) * factor - 0.5
}

/// Bilinear resampling to an arbitrary grid, pixel-centre aligned. Used
/// for downsampling, for the bilinear-upsampling initialisation of the
/// solver and for pyramid construction.
pub fn resample_bilinear(img: &Image, dst_w: usize, dst_h: usize) -> Image {
    assert!(dst_w > 0 && dst_h > 0, "empty resample target");
    if dst_w == img.width() && dst_h == img.height() {
        return img.clone();
    }
    let fx = img.width() as f64 / dst_w as f64;
    let fy = img.height() as f64 / dst_h as f64;
    let mut out = vec![0.0; dst_w * dst_h];
    out.par_chunks_mut(dst_w).enumerate().for_each(|(y, row)| {
        let cy = resample_coord(y, fy);
        for (x, o) in row.iter_mut().enumerate() {
            *o = sample_bilinear(img, resample_coord(x, fx), cy);
        }
    });
    Image::from_raw(dst_w, dst_h, out)
}

/// Downsampling operator `D`: bilinear sampling of the high-resolution
/// grid at low-resolution pixel centres.
pub fn downsample(img: &Image, scale: &ScaleSpec) -> Result<Image> {
    expect_dims("downsample input", img, scale.hr_width, scale.hr_height)?;
    Ok(resample_bilinear(img, scale.lr_width, scale.lr_height))
}

/// Upsampling operator `D^T`: the exact matrix transpose of
/// [`downsample`], realised by scattering each low-resolution value with
/// its bilinear weights.
pub fn upsample(img: &Image, scale: &ScaleSpec) -> Result<Image> {
    expect_dims("upsample input", img, scale.lr_width, scale.lr_height)?;
    if scale.is_identity() {
        return Ok(img.clone());
    }
    let fx = scale.factor_x();
    let fy = scale.factor_y();
    let (hw, hh) = (scale.hr_width, scale.hr_height);
    let mut out = Image::zeros(hw, hh);
    let data = out.data_mut();
    for ly in 0..scale.lr_height {
        let cy = resample_coord(ly, fy);
        for lx in 0..scale.lr_width {
            let cx = resample_coord(lx, fx);
            let value = img.get(lx, ly);
            for (x, y, wt) in bilinear_taps(cx, cy, hw, hh) {
                data[y * hw + x] += wt * value;
            }
        }
    }
    Ok(out)
}

/// Forward warping operator `W`: `out(x) = img(x + flow(x))`, bilinear,
/// reflecting boundary. The flow lives on the output grid and points from
/// reference coordinates to source-frame coordinates.
pub fn warp_forward(img: &Image, flow: &FlowField) -> Result<Image> {
    expect_dims("warp input", img, flow.width(), flow.height())?;
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let (du, dv) = flow.at(x, y);
            *o = sample_bilinear(img, x as f64 + du, y as f64 + dv);
        }
    });
    Ok(Image::from_raw(w, h, out))
}

/// Backward registration `W^T`: the exact transpose of [`warp_forward`],
/// scattering each input value to the four source taps of its pixel.
pub fn warp_adjoint(img: &Image, flow: &FlowField) -> Result<Image> {
    expect_dims("warp adjoint input", img, flow.width(), flow.height())?;
    let (w, h) = (img.width(), img.height());
    let mut out = Image::zeros(w, h);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.at(x, y);
            let value = img.get(x, y);
            for (tx, ty, wt) in bilinear_taps(x as f64 + du, y as f64 + dv, w, h) {
                data[ty * w + tx] += wt * value;
            }
        }
    }
    Ok(out)
}

/// The seven operator orders of the observational model. `W` acts on the
/// high-resolution grid for M1-M3 and M2.1, and on the low-resolution grid
/// for M4-M6. The blur of M3/M5/M6 that follows downsampling is applied on
/// the low-resolution grid with the same sigma in LR pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservationalModel {
    /// `D B W u`
    M1,
    /// `D W B u`
    M2,
    /// `B D W u`
    M3,
    /// `W D B u`
    M4,
    /// `B W D u`
    M5,
    /// `W B D u`
    M6,
    /// `B u = r_i` with precomputed `r_i = W^T D^T f_i`
    M2_1,
}

impl ObservationalModel {
    pub const ALL: [ObservationalModel; 7] = [
        ObservationalModel::M1,
        ObservationalModel::M2,
        ObservationalModel::M3,
        ObservationalModel::M4,
        ObservationalModel::M5,
        ObservationalModel::M6,
        ObservationalModel::M2_1,
    ];

    /// True when the warp acts on the low-resolution grid.
    pub fn warps_at_lr(&self) -> bool {
        matches!(
            self,
            ObservationalModel::M4 | ObservationalModel::M5 | ObservationalModel::M6
        )
    }

    /// Grid the per-frame prediction (and the observation it is compared
    /// with) lives on. M2.1 compares on the high-resolution grid.
    pub fn observation_dims(&self, scale: &ScaleSpec) -> (usize, usize) {
        match self {
            ObservationalModel::M2_1 => (scale.hr_width, scale.hr_height),
            _ => (scale.lr_width, scale.lr_height),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" | "1" => Some(ObservationalModel::M1),
            "m2" | "2" => Some(ObservationalModel::M2),
            "m3" | "3" => Some(ObservationalModel::M3),
            "m4" | "4" => Some(ObservationalModel::M4),
            "m5" | "5" => Some(ObservationalModel::M5),
            "m6" | "6" => Some(ObservationalModel::M6),
            "m2.1" | "m2_1" | "2.1" => Some(ObservationalModel::M2_1),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObservationalModel::M1 => "m1",
            ObservationalModel::M2 => "m2",
            ObservationalModel::M3 => "m3",
            ObservationalModel::M4 => "m4",
            ObservationalModel::M5 => "m5",
            ObservationalModel::M6 => "m6",
            ObservationalModel::M2_1 => "m2.1",
        }
    }
}

impl std::fmt::Display for ObservationalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn expect_dims(context: &'static str, img: &Image, w: usize, h: usize) -> Result<()> {
    if img.width() != w || img.height() != h {
        return Err(Error::DimensionMismatch {
            context,
            expected_w: w,
            expected_h: h,
            actual_w: img.width(),
            actual_h: img.height(),
        });
    }
    Ok(())
}

fn expect_flow_dims(context: &'static str, flow: &FlowField, w: usize, h: usize) -> Result<()> {
    if flow.width() != w || flow.height() != h {
        return Err(Error::DimensionMismatch {
            context,
            expected_w: w,
            expected_h: h,
            actual_w: flow.width(),
            actual_h: flow.height(),
        });
    }
    Ok(())
}

fn check_model_flow(model: ObservationalModel, flow: &FlowField, scale: &ScaleSpec) -> Result<()> {
    if model.warps_at_lr() {
        expect_flow_dims("model flow (LR warp)", flow, scale.lr_width, scale.lr_height)
    } else {
        expect_flow_dims("model flow (HR warp)", flow, scale.hr_width, scale.hr_height)
    }
}

/// Noiseless prediction of one frame: the model's operator chain applied
/// to the high-resolution scene `u`.
pub fn apply_model(
    model: ObservationalModel,
    u: &Image,
    flow: &FlowField,
    blur_spec: &BlurSpec,
    scale: &ScaleSpec,
) -> Result<Image> {
    expect_dims("model input", u, scale.hr_width, scale.hr_height)?;
    check_model_flow(model, flow, scale)?;
    use ObservationalModel::*;
    Ok(match model {
        M1 => downsample(&blur(&warp_forward(u, flow)?, blur_spec), scale)?,
        M2 => downsample(&warp_forward(&blur(u, blur_spec), flow)?, scale)?,
        M3 => blur(&downsample(&warp_forward(u, flow)?, scale)?, blur_spec),
        M4 => warp_forward(&downsample(&blur(u, blur_spec), scale)?, flow)?,
        M5 => blur(&warp_forward(&downsample(u, scale)?, flow)?, blur_spec),
        M6 => warp_forward(&blur(&downsample(u, scale)?, blur_spec), flow)?,
        M2_1 => blur(u, blur_spec),
    })
}

/// Exact transpose of [`apply_model`]: the reversed chain of transposed
/// operators applied to a residual on the observation grid.
pub fn apply_model_adjoint(
    model: ObservationalModel,
    residual: &Image,
    flow: &FlowField,
    blur_spec: &BlurSpec,
    scale: &ScaleSpec,
) -> Result<Image> {
    let (ow, oh) = model.observation_dims(scale);
    expect_dims("model adjoint input", residual, ow, oh)?;
    check_model_flow(model, flow, scale)?;
    use ObservationalModel::*;
    Ok(match model {
        M1 => warp_adjoint(&blur(&upsample(residual, scale)?, blur_spec), flow)?,
        M2 => blur(&warp_adjoint(&upsample(residual, scale)?, flow)?, blur_spec),
        M3 => warp_adjoint(&upsample(&blur(residual, blur_spec), scale)?, flow)?,
        M4 => blur(&upsample(&warp_adjoint(residual, flow)?, scale)?, blur_spec),
        M5 => upsample(&warp_adjoint(&blur(residual, blur_spec), flow)?, scale)?,
        M6 => upsample(&blur(&warp_adjoint(residual, flow)?, blur_spec), scale)?,
        M2_1 => blur(residual, blur_spec),
    })
}

/// Precomputes the per-frame right-hand sides `r_i = W_i^T D^T f_i` used
/// by model M2.1. Flows must live on the high-resolution grid.
pub fn precompute_m21_rhs(
    frames: &[Image],
    flows: &[FlowField],
    scale: &ScaleSpec,
) -> Result<Vec<Image>> {
    if frames.len() != flows.len() {
        return Err(Error::LengthMismatch {
            context: "frames vs flows",
            left: frames.len(),
            right: flows.len(),
        });
    }
    frames
        .iter()
        .zip(flows)
        .map(|(f, flow)| {
            expect_dims("m2.1 frame", f, scale.lr_width, scale.lr_height)?;
            expect_flow_dims("m2.1 flow", flow, scale.hr_width, scale.hr_height)?;
            warp_adjoint(&upsample(f, scale)?, flow)
        })
        .collect()
}

fn resample_component(data: &[f64], w: usize, h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    let img = Image::from_raw(w, h, data.to_vec());
    resample_bilinear(&img, dst_w, dst_h).data().to_vec()
}

/// Converts a high-resolution flow to the low-resolution grid: bilinear
/// resampling of the components with magnitudes divided by the per-axis
/// scale factor.
pub fn flow_to_lr(flow: &FlowField, scale: &ScaleSpec) -> Result<FlowField> {
    expect_flow_dims("flow_to_lr input", flow, scale.hr_width, scale.hr_height)?;
    let (lw, lh) = (scale.lr_width, scale.lr_height);
    let mut u = resample_component(flow.u(), flow.width(), flow.height(), lw, lh);
    let mut v = resample_component(flow.v(), flow.width(), flow.height(), lw, lh);
    let fx = scale.factor_x();
    let fy = scale.factor_y();
    u.iter_mut().for_each(|x| *x /= fx);
    v.iter_mut().for_each(|x| *x /= fy);
    Ok(FlowField::from_raw(lw, lh, u, v))
}

/// Converts a low-resolution flow to the high-resolution grid (inverse of
/// [`flow_to_lr`]).
pub fn flow_to_hr(flow: &FlowField, scale: &ScaleSpec) -> Result<FlowField> {
    expect_flow_dims("flow_to_hr input", flow, scale.lr_width, scale.lr_height)?;
    let (hw, hh) = (scale.hr_width, scale.hr_height);
    let mut u = resample_component(flow.u(), flow.width(), flow.height(), hw, hh);
    let mut v = resample_component(flow.v(), flow.width(), flow.height(), hw, hh);
    let fx = scale.factor_x();
    let fy = scale.factor_y();
    u.iter_mut().for_each(|x| *x *= fx);
    v.iter_mut().for_each(|x| *x *= fy);
    Ok(FlowField::from_raw(hw, hh, u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Image::from_raw(w, h, (0..w * h).map(|_| rng.uniform_in(0.0, 255.0)).collect())
    }

    fn rand_flow(w: usize, h: usize, seed: u64, amp: f64) -> FlowField {
        let mut rng = SplitMix64::new(seed);
        let u = (0..w * h).map(|_| rng.uniform_in(-amp, amp)).collect();
        let v = (0..w * h).map(|_| rng.uniform_in(-amp, amp)).collect();
        FlowField::from_raw(w, h, u, v)
    }

    fn dot(a: &Image, b: &Image) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.3, 0.9, 1.5, 4.2] {
            let taps = gaussian_kernel(sigma);
            let sum: f64 = taps.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14, "sigma {sigma}: sum {sum}");
            assert!(taps.iter().all(|&t| t >= 0.0));
            assert_eq!(taps.len() as isize, 2 * (3.0 * sigma).ceil() as isize + 1);
        }
        assert!(gaussian_kernel(0.0).is_empty());
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(9, 7, 42.0);
        for sigma in [0.5, 1.0, 2.7] {
            let out = blur(&img, &BlurSpec::new(sigma).unwrap());
            assert!(max_abs_diff(&out, &img) < 1e-12, "sigma {sigma}");
        }
    }

    #[test]
    fn blur_zero_sigma_is_identity() {
        let img = rand_image(8, 5, 3);
        assert_eq!(blur(&img, &BlurSpec::identity()), img);
    }

    #[test]
    fn blur_is_self_adjoint() {
        // <B a, b> == <a, B b> for random images, including kernels wider
        // than the image (repeated reflection).
        for (seed, sigma, w, h) in [(1u64, 1.3, 16, 11), (2, 0.8, 7, 7), (3, 4.0, 9, 6)] {
            let a = rand_image(w, h, seed);
            let b = rand_image(w, h, seed + 100);
            let spec = BlurSpec::new(sigma).unwrap();
            let lhs = dot(&blur(&a, &spec), &b);
            let rhs = dot(&a, &blur(&b, &spec));
            let scale = lhs.abs().max(1.0);
            assert!((lhs - rhs).abs() / scale < 1e-12, "sigma {sigma}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let img = rand_image(6, 6, 9);
        let scale = ScaleSpec::identity(6, 6);
        assert_eq!(downsample(&img, &scale).unwrap(), img);
        assert_eq!(upsample(&img, &scale).unwrap(), img);
    }

    #[test]
    fn downsample_preserves_constants() {
        let img = Image::filled(10, 8, 17.0);
        let scale = ScaleSpec::from_factor(10, 8, 2.0).unwrap();
        let out = downsample(&img, &scale).unwrap();
        assert_eq!(out.width(), 5);
        assert_eq!(out.height(), 4);
        assert!(out.data().iter().all(|&v| (v - 17.0).abs() < 1e-12));
    }

    // Independent dense-matrix realisation of the sampling rule, used as
    // the oracle for downsample/upsample.
    fn dense_downsample_matrix(scale: &ScaleSpec) -> Vec<Vec<f64>> {
        let (hw, hh) = (scale.hr_width, scale.hr_height);
        let (lw, lh) = (scale.lr_width, scale.lr_height);
        let fx = hw as f64 / lw as f64;
        let fy = hh as f64 / lh as f64;
        let mut m = vec![vec![0.0; hw * hh]; lw * lh];
        for ly in 0..lh {
            for lx in 0..lw {
                let cx = (lx as f64 + 0.5) * fx - 0.5;
                let cy = (ly as f64 + 0.5) * fy - 0.5;
                let x0 = cx.floor();
                let y0 = cy.floor();
                let (dx, dy) = (cx - x0, cy - y0);
                for (xx, wx) in [(x0, 1.0 - dx), (x0 + 1.0, dx)] {
                    for (yy, wy) in [(y0, 1.0 - dy), (y0 + 1.0, dy)] {
                        let xi = reflect(xx as isize, hw);
                        let yi = reflect(yy as isize, hh);
                        m[ly * lw + lx][yi * hw + xi] += wx * wy;
                    }
                }
            }
        }
        m
    }

    #[test]
    fn downsample_matches_dense_matrix() {
        let img = Image::from_raw(4, 4, (0..16).map(|i| (i * i) as f64).collect());
        let scale = ScaleSpec::from_factor(4, 4, 2.0).unwrap();
        let m = dense_downsample_matrix(&scale);
        let got = downsample(&img, &scale).unwrap();
        for (row, want) in m.iter().zip(got.data()) {
            let v: f64 = row.iter().zip(img.data()).map(|(a, b)| a * b).sum();
            assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        }
    }

    #[test]
    fn upsample_one_hot_matches_matrix_row() {
        let scale = ScaleSpec::from_factor(6, 5, 1.7).unwrap();
        let m = dense_downsample_matrix(&scale);
        for hot in [0, 3, scale.lr_width * scale.lr_height - 1] {
            let mut lr = Image::zeros(scale.lr_width, scale.lr_height);
            lr.data_mut()[hot] = 1.0;
            let up = upsample(&lr, &scale).unwrap();
            for (got, want) in up.data().iter().zip(&m[hot]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resampling_adjoint_identity() {
        for seed in 0..5u64 {
            let scale = ScaleSpec::from_factor(13, 9, 1.6).unwrap();
            let u = rand_image(13, 9, seed);
            let v = rand_image(scale.lr_width, scale.lr_height, seed + 50);
            let lhs = dot(&downsample(&u, &scale).unwrap(), &v);
            let rhs = dot(&u, &upsample(&v, &scale).unwrap());
            assert!((lhs - rhs).abs() / lhs.abs().max(1.0) < 1e-12);
        }
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let img = rand_image(7, 6, 21);
        let flow = FlowField::zeros(7, 6);
        assert_eq!(warp_forward(&img, &flow).unwrap(), img);
        assert_eq!(warp_adjoint(&img, &flow).unwrap(), img);
    }

    #[test]
    fn warp_preserves_constants() {
        let img = Image::filled(8, 8, 99.0);
        let flow = rand_flow(8, 8, 4, 2.5);
        let out = warp_forward(&img, &flow).unwrap();
        assert!(out.data().iter().all(|&v| (v - 99.0).abs() < 1e-12));
    }

    #[test]
    fn warp_integer_translation_shifts_ramp() {
        // Horizontal ramp, flow (1,0): out(x) = img(x+1) with the last
        // column reflected back onto itself.
        let img = Image::from_raw(4, 2, vec![0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0]);
        let flow = FlowField::constant(4, 2, 1.0, 0.0);
        let out = warp_forward(&img, &flow).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 3.0, 1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn warp_adjoint_scatters_one_hot() {
        // Integer flow (1,0) at every pixel: the adjoint sends a unit at
        // output x back to x+1.
        let mut img = Image::zeros(5, 1);
        img.data_mut()[1] = 1.0;
        let flow = FlowField::constant(5, 1, 1.0, 0.0);
        let out = warp_adjoint(&img, &flow).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn warp_adjoint_identity_random() {
        for seed in 0..5u64 {
            let u = rand_image(12, 10, seed);
            let v = rand_image(12, 10, seed + 30);
            let flow = rand_flow(12, 10, seed + 60, 3.0);
            let lhs = dot(&warp_forward(&u, &flow).unwrap(), &v);
            let rhs = dot(&u, &warp_adjoint(&v, &flow).unwrap());
            assert!((lhs - rhs).abs() / lhs.abs().max(1.0) < 1e-12);
        }
    }

    fn identity_setup(w: usize, h: usize) -> (BlurSpec, ScaleSpec, FlowField) {
        (
            BlurSpec::identity(),
            ScaleSpec::identity(w, h),
            FlowField::zeros(w, h),
        )
    }

    #[test]
    fn all_models_identity_parameters() {
        let u = rand_image(6, 6, 77);
        let (b, s, f) = identity_setup(6, 6);
        for model in ObservationalModel::ALL {
            let out = apply_model(model, &u, &f, &b, &s).unwrap();
            assert_eq!(out, u, "{model}");
            let back = apply_model_adjoint(model, &u, &f, &b, &s).unwrap();
            assert_eq!(back, u, "{model} adjoint");
        }
    }

    #[test]
    fn m1_is_definitional_composition() {
        let u = rand_image(10, 10, 5);
        let flow = rand_flow(10, 10, 6, 2.0);
        let b = BlurSpec::new(0.8).unwrap();
        let s = ScaleSpec::from_factor(10, 10, 2.0).unwrap();
        let direct = apply_model(ObservationalModel::M1, &u, &flow, &b, &s).unwrap();
        let composed = downsample(&blur(&warp_forward(&u, &flow).unwrap(), &b), &s).unwrap();
        assert_eq!(direct, composed);

        let r = rand_image(5, 5, 7);
        let adj = apply_model_adjoint(ObservationalModel::M1, &r, &flow, &b, &s).unwrap();
        let composed_adj = warp_adjoint(&blur(&upsample(&r, &s).unwrap(), &b), &flow).unwrap();
        assert_eq!(adj, composed_adj);
    }

    #[test]
    fn m1_and_m2_differ_on_step_edge() {
        // Operator order matters: warp-then-blur vs blur-then-warp on a
        // sharp edge with non-constant flow.
        let mut u = Image::zeros(12, 12);
        for y in 0..12 {
            for x in 6..12 {
                u.set(x, y, 200.0);
            }
        }
        let flow = rand_flow(12, 12, 11, 1.5);
        let b = BlurSpec::new(1.0).unwrap();
        let s = ScaleSpec::from_factor(12, 12, 2.0).unwrap();
        let m1 = apply_model(ObservationalModel::M1, &u, &flow, &b, &s).unwrap();
        let m2 = apply_model(ObservationalModel::M2, &u, &flow, &b, &s).unwrap();
        assert!(crate::image::mse(&m1, &m2).unwrap() > 0.0);
    }

    #[test]
    fn model_adjoint_identity_all_models() {
        let s = ScaleSpec::from_factor(12, 12, 2.0).unwrap();
        let b = BlurSpec::new(0.9).unwrap();
        for (i, model) in ObservationalModel::ALL.iter().enumerate() {
            let flow = if model.warps_at_lr() {
                rand_flow(s.lr_width, s.lr_height, 800 + i as u64, 1.5)
            } else {
                rand_flow(s.hr_width, s.hr_height, 800 + i as u64, 3.0)
            };
            let (ow, oh) = model.observation_dims(&s);
            let u = rand_image(12, 12, 900 + i as u64);
            let v = rand_image(ow, oh, 950 + i as u64);
            let lhs = dot(&apply_model(*model, &u, &flow, &b, &s).unwrap(), &v);
            let rhs = dot(&u, &apply_model_adjoint(*model, &v, &flow, &b, &s).unwrap());
            assert!(
                (lhs - rhs).abs() / lhs.abs().max(1.0) < 1e-12,
                "{model}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn models_are_linear() {
        let s = ScaleSpec::from_factor(10, 10, 2.0).unwrap();
        let b = BlurSpec::new(0.7).unwrap();
        let flow = rand_flow(10, 10, 13, 2.0);
        let x = rand_image(10, 10, 14);
        let y = rand_image(10, 10, 15);
        let (a, c) = (1.7, -0.6);
        let combo = Image::from_raw(
            10,
            10,
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + c * q).collect(),
        );
        let lhs = apply_model(ObservationalModel::M1, &combo, &flow, &b, &s).unwrap();
        let ox = apply_model(ObservationalModel::M1, &x, &flow, &b, &s).unwrap();
        let oy = apply_model(ObservationalModel::M1, &y, &flow, &b, &s).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(ox.data()).zip(oy.data()) {
            assert!((l - (a * p + c * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn m21_rhs_identity_case() {
        let frames: Vec<Image> = (0..3).map(|i| rand_image(6, 6, 40 + i)).collect();
        let flows: Vec<FlowField> = (0..3).map(|_| FlowField::zeros(6, 6)).collect();
        let scale = ScaleSpec::identity(6, 6);
        let rhs = precompute_m21_rhs(&frames, &flows, &scale).unwrap();
        assert_eq!(rhs.len(), 3);
        for (r, f) in rhs.iter().zip(&frames) {
            assert_eq!(r, f);
        }
    }

    #[test]
    fn m21_rhs_dims_and_determinism() {
        let scale = ScaleSpec::from_factor(10, 8, 2.0).unwrap();
        let frames: Vec<Image> = (0..2)
            .map(|i| rand_image(scale.lr_width, scale.lr_height, 60 + i))
            .collect();
        let flows: Vec<FlowField> = (0..2).map(|i| rand_flow(10, 8, 70 + i, 2.0)).collect();
        let a = precompute_m21_rhs(&frames, &flows, &scale).unwrap();
        let b = precompute_m21_rhs(&frames, &flows, &scale).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
            assert_eq!(x.width(), 10);
            assert_eq!(x.height(), 8);
        }
        assert!(precompute_m21_rhs(&frames, &flows[..1], &scale).is_err());
    }

    #[test]
    fn flow_rescaling_round_trip() {
        let scale = ScaleSpec::from_factor(16, 12, 2.0).unwrap();
        let hr = rand_flow(16, 12, 90, 3.0);
        let lr = flow_to_lr(&hr, &scale).unwrap();
        assert_eq!(lr.width(), 8);
        assert_eq!(lr.height(), 6);
        let back = flow_to_hr(&lr, &scale).unwrap();
        assert_eq!(back.width(), 16);
        // Constant flows survive the round trip exactly.
        let c = FlowField::constant(16, 12, 2.0, -1.0);
        let c_lr = flow_to_lr(&c, &scale).unwrap();
        for (u, v) in c_lr.u().iter().zip(c_lr.v()) {
            assert!((u - 1.0).abs() < 1e-12 && (v + 0.5).abs() < 1e-12);
        }
    }
}
