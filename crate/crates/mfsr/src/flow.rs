//! Variational optical flow for frame registration.
//!
//! Energy: robust brightness constancy plus robust first-order smoothness,
//! both penalised by `Psi(s^2) = sqrt(s^2 + eps^2)`, minimised
//! coarse-to-fine on a pyramid with gentle downsampling factor `eta`.
//! Per level, `eta2` outer fixed-point iterations re-warp the target and
//! refresh the linearisation; `eta1` inner fixed-point iterations lag the
//! robust factors and relax the coupled linear system with SOR
//! (relaxation `omega`). There is no gradient-constancy term.
//!
//! The returned field lives on the reference grid and maps reference
//! coordinates to target coordinates, exactly the convention the warping
//! operators expect.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{check_dims, reflect, FlowField, Image};
use crate::operators::{blur, resample_bilinear, warp_forward, BlurSpec};

/// Levels stop before any dimension would drop below this.
pub const MIN_PYRAMID_DIM: usize = 8;

/// SOR relaxation sweeps per inner fixed-point iteration.
const SOR_SWEEPS_PER_INNER: usize = 3;

/// Inter-level pre-smoothing is `0.6 * sqrt(1/eta^2 - 1)`, matched to the
/// shrink factor.
const PYRAMID_SMOOTH_FACTOR: f64 = 0.6;

/// Parameters of the flow estimator. `sigma_of`/`alpha_of` are the two
/// model parameters (pre-smoothing and smoothness weight); the rest are
/// numerical parameters with fixed defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Gaussian pre-smoothing of both input images (pixels).
    pub sigma_of: f64,
    /// Smoothness weight.
    pub alpha_of: f64,
    /// Pyramid downsampling factor, 0 < eta < 1.
    pub eta: f64,
    /// Inner fixed-point iterations.
    pub eta1: usize,
    /// Outer fixed-point (warping) iterations.
    pub eta2: usize,
    /// SOR relaxation, 0 < omega < 2.
    pub omega: f64,
    /// Robust penaliser regularisation constant.
    pub epsilon: f64,
}

impl FlowParams {
    pub fn new(sigma_of: f64, alpha_of: f64) -> Self {
        FlowParams {
            sigma_of,
            alpha_of,
            eta: 0.95,
            eta1: 10,
            eta2: 10,
            omega: 1.95,
            epsilon: 1e-3,
        }
    }

    /// Tuned (sigma_of, alpha_of) pairs for the shipped benchmark
    /// datasets.
    pub fn preset(name: &str) -> Option<Self> {
        let (sigma, alpha) = match name.to_ascii_lowercase().as_str() {
            "text1" => (2.6, 13.3),
            "text2" => (1.0, 15.6),
            "text3" => (2.3, 6.3),
            "house1" => (3.8, 13.5),
            "house2" => (1.2, 17.0),
            "house3" => (2.7, 16.5),
            _ => return None,
        };
        Some(FlowParams::new(sigma, alpha))
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be in (0,1), got {}",
                self.eta
            )));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "omega must be in (0,2), got {}",
                self.omega
            )));
        }
        if !(self.alpha_of > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha_of must be positive, got {}",
                self.alpha_of
            )));
        }
        if !(self.sigma_of >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_of must be >= 0, got {}",
                self.sigma_of
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams::new(1.0, 15.0)
    }
}

/// Level dimensions `ceil(dims * eta^k)`, descending, while the real-valued
/// product stays at or above [`MIN_PYRAMID_DIM`] on both axes. Level 0 is
/// always present.
pub fn pyramid_dims(width: usize, height: usize, eta: f64) -> Vec<(usize, usize)> {
    let mut dims = vec![(width, height)];
    let mut k = 1i32;
    loop {
        let f = eta.powi(k);
        let rw = width as f64 * f;
        let rh = height as f64 * f;
        if rw < MIN_PYRAMID_DIM as f64 || rh < MIN_PYRAMID_DIM as f64 {
            break;
        }
        dims.push((rw.ceil() as usize, rh.ceil() as usize));
        k += 1;
    }
    dims
}

/// Builds the coarse-to-fine pyramid: each level is the previous one
/// smoothed by a small Gaussian matched to the shrink factor and
/// bilinearly resampled.
pub fn build_pyramid(img: &Image, eta: f64) -> Result<Vec<Image>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must be in (0,1), got {eta}"
        )));
    }
    let dims = pyramid_dims(img.width(), img.height(), eta);
    let sigma = PYRAMID_SMOOTH_FACTOR * (1.0 / (eta * eta) - 1.0).sqrt();
    let smooth = BlurSpec::new(sigma)?;
    let mut levels = Vec::with_capacity(dims.len());
    levels.push(img.clone());
    for &(w, h) in &dims[1..] {
        let prev = levels.last().unwrap();
        levels.push(resample_bilinear(&blur(prev, &smooth), w, h));
    }
    Ok(levels)
}

fn resample_flow(flow: &FlowField, w: usize, h: usize) -> FlowField {
    if flow.width() == w && flow.height() == h {
        return flow.clone();
    }
    let sx = w as f64 / flow.width() as f64;
    let sy = h as f64 / flow.height() as f64;
    let ui = Image::from_raw(flow.width(), flow.height(), flow.u().to_vec());
    let vi = Image::from_raw(flow.width(), flow.height(), flow.v().to_vec());
    let mut u = resample_bilinear(&ui, w, h).data().to_vec();
    let mut v = resample_bilinear(&vi, w, h).data().to_vec();
    u.iter_mut().for_each(|x| *x *= sx);
    v.iter_mut().for_each(|x| *x *= sy);
    FlowField::from_raw(w, h, u, v)
}

/// Fourth-order central difference derivatives of `img` in x and y.
fn derivatives_4th(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    let at = |x: isize, y: isize| d[reflect(y, h) * w + reflect(x, w)];
    dx.par_chunks_mut(w)
        .zip(dy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (dxr, dyr))| {
            let yi = y as isize;
            for x in 0..w {
                let xi = x as isize;
                dxr[x] = (-at(xi + 2, yi) + 8.0 * at(xi + 1, yi) - 8.0 * at(xi - 1, yi)
                    + at(xi - 2, yi))
                    / 12.0;
                dyr[x] = (-at(xi, yi + 2) + 8.0 * at(xi, yi + 1) - 8.0 * at(xi, yi - 1)
                    + at(xi, yi - 2))
                    / 12.0;
            }
        });
    (dx, dy)
}

/// Estimates the flow from `reference` to `target`.
pub fn estimate_flow(reference: &Image, target: &Image, params: &FlowParams) -> Result<FlowField> {
    check_dims("flow input pair", reference, target)?;
    params.validate()?;

    let pre = BlurSpec::new(params.sigma_of)?;
    let ref_s = blur(reference, &pre);
    let tgt_s = blur(target, &pre);
    let pyr_ref = build_pyramid(&ref_s, params.eta)?;
    let pyr_tgt = build_pyramid(&tgt_s, params.eta)?;

    let coarsest = pyr_ref.len() - 1;
    let mut flow = FlowField::zeros(pyr_ref[coarsest].width(), pyr_ref[coarsest].height());
    for level in (0..=coarsest).rev() {
        let i1 = &pyr_ref[level];
        flow = resample_flow(&flow, i1.width(), i1.height());
        solve_level(i1, &pyr_tgt[level], &mut flow, params)?;
    }
    Ok(flow)
}

fn solve_level(i1: &Image, i2: &Image, flow: &mut FlowField, params: &FlowParams) -> Result<()> {
    let (w, h) = (i1.width(), i1.height());
    let n = w * h;
    let alpha = params.alpha_of;
    let omega = params.omega;
    let eps_sq = params.epsilon * params.epsilon;

    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut psi_d = vec![0.0; n];
    let mut psi_s = vec![0.0; n];

    for _outer in 0..params.eta2 {
        let warped = warp_forward(i2, flow)?;
        let avg = Image::from_raw(
            w,
            h,
            i1.data()
                .iter()
                .zip(warped.data())
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        );
        let (ix, iy) = derivatives_4th(&avg);
        let it: Vec<f64> = warped
            .data()
            .iter()
            .zip(i1.data())
            .map(|(b, a)| b - a)
            .collect();

        du.iter_mut().for_each(|x| *x = 0.0);
        dv.iter_mut().for_each(|x| *x = 0.0);

        for _inner in 0..params.eta1 {
            // Lagged robust factors.
            psi_d.par_iter_mut().enumerate().for_each(|(i, p)| {
                let r = it[i] + ix[i] * du[i] + iy[i] * dv[i];
                *p = 1.0 / (r * r + eps_sq).sqrt();
            });
            {
                let u = flow.u();
                let v = flow.v();
                psi_s.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                    let yi = y as isize;
                    let tot = |f: &[f64], g: &[f64], x: isize, y: isize| {
                        let i = reflect(y, h) * w + reflect(x, w);
                        f[i] + g[i]
                    };
                    for (x, p) in row.iter_mut().enumerate() {
                        let xi = x as isize;
                        let ux = (tot(u, &du, xi + 1, yi) - tot(u, &du, xi - 1, yi)) / 2.0;
                        let uy = (tot(u, &du, xi, yi + 1) - tot(u, &du, xi, yi - 1)) / 2.0;
                        let vx = (tot(v, &dv, xi + 1, yi) - tot(v, &dv, xi - 1, yi)) / 2.0;
                        let vy = (tot(v, &dv, xi, yi + 1) - tot(v, &dv, xi, yi - 1)) / 2.0;
                        *p = 1.0 / (ux * ux + uy * uy + vx * vx + vy * vy + eps_sq).sqrt();
                    }
                });
            }

            for _sweep in 0..SOR_SWEEPS_PER_INNER {
                sor_sweep(
                    w,
                    h,
                    alpha,
                    omega,
                    flow.u(),
                    flow.v(),
                    &ix,
                    &iy,
                    &it,
                    &psi_d,
                    &psi_s,
                    &mut du,
                    &mut dv,
                );
            }
        }

        flow.u_mut().iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        flow.v_mut().iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
    }
    Ok(())
}

/// One lexicographic SOR sweep over the coupled increment system. Within
/// a pixel the vertical update already sees the fresh horizontal
/// increment.
#[allow(clippy::too_many_arguments)]
fn sor_sweep(
    w: usize,
    h: usize,
    alpha: f64,
    omega: f64,
    u: &[f64],
    v: &[f64],
    ix: &[f64],
    iy: &[f64],
    it: &[f64],
    psi_d: &[f64],
    psi_s: &[f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut wsum = 0.0;
            let mut su = 0.0;
            let mut sv = 0.0;
            let mut add = |j: usize| {
                let wgt = 0.5 * (psi_s[i] + psi_s[j]);
                wsum += wgt;
                su += wgt * (u[j] + du[j]);
                sv += wgt * (v[j] + dv[j]);
            };
            if x > 0 {
                add(i - 1);
            }
            if x + 1 < w {
                add(i + 1);
            }
            if y > 0 {
                add(i - w);
            }
            if y + 1 < h {
                add(i + w);
            }
            drop(add);

            let pd = psi_d[i];
            let den_u = pd * ix[i] * ix[i] + alpha * wsum;
            let num_u = -pd * ix[i] * (it[i] + iy[i] * dv[i]) + alpha * (su - wsum * u[i]);
            du[i] = (1.0 - omega) * du[i] + omega * num_u / den_u;

            let den_v = pd * iy[i] * iy[i] + alpha * wsum;
            let num_v = -pd * iy[i] * (it[i] + ix[i] * du[i]) + alpha * (sv - wsum * v[i]);
            dv[i] = (1.0 - omega) * dv[i] + omega * num_v / den_v;
        }
    }
}

/// Registers every frame against the reference: one flow per frame, each
/// mapping reference coordinates to that frame, estimated independently
/// (and in parallel) at frame resolution.
pub fn estimate_dataset_flows(
    reference: &Image,
    frames: &[Image],
    params: &FlowParams,
) -> Result<Vec<FlowField>> {
    frames
        .par_iter()
        .map(|f| estimate_flow(reference, f, params))
        .collect()
}
