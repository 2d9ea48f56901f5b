//! Explicit gradient-descent super-resolution.
//!
//! One step of the scheme is
//!
//! `u^{k+1} = u^k + tau * ( alpha * A_reg(u^k) - sum_i O_i^T (O_i u^k - f_i) )`
//!
//! where `O_i` is the configured observational model for frame `i` and
//! `A_reg` one of the diffusion regularisers (homogeneous, EED or sector
//! diffusion). The unknown `u` always lives on the high-resolution grid.
//! Model M2.1 replaces the residual by `B u - r_i` with per-frame
//! right-hand sides `r_i = W_i^T D^T f_i` precomputed once before
//! iteration.
//!
//! The module also carries the experiment machinery: MSE-driven grid
//! search, per-model evaluation tables (CSV), denoising parameter search
//! and the two baselines reconstructions are compared against.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::diffusion::{
    add_clipped_awgn, eed_denoise, eed_operator, hd_operator, DiffusivityParams, EED_DENOISE_TAU,
};
use crate::error::{Error, Result};
use crate::image::{mse, FlowField, Image};
use crate::operators::{
    apply_model, apply_model_adjoint, blur, flow_to_lr, precompute_m21_rhs, resample_bilinear,
    warp_forward, BlurSpec, ObservationalModel, ScaleSpec,
};
use crate::sector::{sd_denoise, sd_operator, SectorGeometry, DEFAULT_RADIUS, DEFAULT_SECTORS};

/// Smoothness-term choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regulariser {
    /// Homogeneous diffusion (Laplacian).
    Hd,
    /// Edge-enhancing anisotropic diffusion.
    Eed,
    /// Sector diffusion.
    Sd,
}

impl Regulariser {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hd" => Some(Regulariser::Hd),
            "eed" => Some(Regulariser::Eed),
            "sd" => Some(Regulariser::Sd),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regulariser::Hd => "hd",
            Regulariser::Eed => "eed",
            Regulariser::Sd => "sd",
        }
    }

    /// Default explicit step size for super-resolution.
    pub fn default_sr_tau(&self) -> f64 {
        match self {
            Regulariser::Hd => 0.05,
            Regulariser::Eed => 0.05,
            Regulariser::Sd => 0.012,
        }
    }
}

impl std::fmt::Display for Regulariser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full parameterisation of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub model: ObservationalModel,
    pub regulariser: Regulariser,
    /// Smoothness weight.
    pub alpha: f64,
    /// Explicit time step.
    pub tau: f64,
    /// Number of gradient-descent steps.
    pub k_max: usize,
    /// Point-spread-function blur of the observation operator.
    pub blur: BlurSpec,
    pub scale: ScaleSpec,
    /// Contrast parameter and pre-smoothing of the regulariser.
    pub diffusivity: DiffusivityParams,
    /// Sector count (sector diffusion only).
    pub sectors: usize,
    /// Disc radius (sector diffusion only).
    pub radius: f64,
}

impl SolverConfig {
    pub fn new(model: ObservationalModel, regulariser: Regulariser, scale: ScaleSpec) -> Self {
        SolverConfig {
            model,
            regulariser,
            alpha: 1.0,
            tau: regulariser.default_sr_tau(),
            k_max: 20,
            blur: BlurSpec::identity(),
            scale,
            diffusivity: DiffusivityParams { lambda: 4.0, sigma: 0.6 },
            sectors: DEFAULT_SECTORS,
            radius: DEFAULT_RADIUS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn geometry(&self) -> Result<Option<SectorGeometry>> {
        if self.regulariser == Regulariser::Sd && self.alpha > 0.0 {
            Ok(Some(SectorGeometry::build(
                self.sectors,
                self.radius,
                self.diffusivity.sigma,
            )?))
        } else {
            Ok(None)
        }
    }
}

/// Frames, their registration flows and the solver configuration. Flows
/// live on the grid the model's warp acts on: high-resolution for
/// M1-M3/M2.1, low-resolution for M4-M6.
#[derive(Debug, Clone)]
pub struct SRProblem {
    pub frames: Vec<Image>,
    pub flows: Vec<FlowField>,
    pub config: SolverConfig,
}

impl SRProblem {
    pub fn new(frames: Vec<Image>, flows: Vec<FlowField>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if frames.is_empty() {
            return Err(Error::InvalidParameter("no frames".into()));
        }
        if frames.len() != flows.len() {
            return Err(Error::LengthMismatch {
                context: "frames vs flows",
                left: frames.len(),
                right: flows.len(),
            });
        }
        let scale = &config.scale;
        for f in &frames {
            if f.width() != scale.lr_width || f.height() != scale.lr_height {
                return Err(Error::DimensionMismatch {
                    context: "frame",
                    expected_w: scale.lr_width,
                    expected_h: scale.lr_height,
                    actual_w: f.width(),
                    actual_h: f.height(),
                });
            }
        }
        let (fw, fh) = if config.model.warps_at_lr() {
            (scale.lr_width, scale.lr_height)
        } else {
            (scale.hr_width, scale.hr_height)
        };
        for fl in &flows {
            if fl.width() != fw || fl.height() != fh {
                return Err(Error::DimensionMismatch {
                    context: "flow",
                    expected_w: fw,
                    expected_h: fh,
                    actual_w: fl.width(),
                    actual_h: fl.height(),
                });
            }
        }
        Ok(SRProblem {
            frames,
            flows,
            config,
        })
    }

    /// Index of the reference frame (the last one).
    pub fn reference(&self) -> usize {
        self.frames.len() - 1
    }
}

/// Starting iterate: the reference frame bilinearly upsampled to the
/// high-resolution grid.
pub fn initialise(problem: &SRProblem) -> Image {
    let scale = &problem.config.scale;
    resample_bilinear(
        &problem.frames[problem.reference()],
        scale.hr_width,
        scale.hr_height,
    )
}

/// Precomputed per-reconstruction state: the sector geometry and the
/// M2.1 right-hand sides.
struct SolveContext {
    geometry: Option<SectorGeometry>,
    m21_rhs: Option<Vec<Image>>,
}

impl SolveContext {
    fn new(problem: &SRProblem) -> Result<Self> {
        let config = &problem.config;
        let m21_rhs = if config.model == ObservationalModel::M2_1 {
            Some(precompute_m21_rhs(
                &problem.frames,
                &problem.flows,
                &config.scale,
            )?)
        } else {
            None
        };
        Ok(SolveContext {
            geometry: config.geometry()?,
            m21_rhs,
        })
    }

    fn data_gradient(&self, u: &Image, problem: &SRProblem) -> Result<Image> {
        let config = &problem.config;
        let contributions: Vec<Image> = match &self.m21_rhs {
            Some(rhs) => rhs
                .par_iter()
                .map(|r| {
                    let pred = blur(u, &config.blur);
                    let residual = diff(&pred, r);
                    Ok(blur(&residual, &config.blur))
                })
                .collect::<Result<_>>()?,
            None => problem
                .frames
                .par_iter()
                .zip(&problem.flows)
                .map(|(f, flow)| {
                    let pred = apply_model(config.model, u, flow, &config.blur, &config.scale)?;
                    let residual = diff(&pred, f);
                    apply_model_adjoint(config.model, &residual, flow, &config.blur, &config.scale)
                })
                .collect::<Result<_>>()?,
        };
        // Fixed-order reduction keeps results deterministic.
        let mut acc = Image::zeros(u.width(), u.height());
        for c in &contributions {
            acc = acc.add_scaled(c, 1.0)?;
        }
        Ok(acc)
    }

    fn smoothness(&self, u: &Image, problem: &SRProblem) -> Result<Image> {
        let config = &problem.config;
        if config.alpha == 0.0 {
            return Ok(Image::zeros(u.width(), u.height()));
        }
        Ok(match config.regulariser {
            Regulariser::Hd => hd_operator(u),
            Regulariser::Eed => eed_operator(u, &config.diffusivity),
            Regulariser::Sd => sd_operator(
                u,
                &config.diffusivity,
                self.geometry.as_ref().expect("geometry built for SD"),
            )?,
        })
    }

    fn step(&self, u: &Image, problem: &SRProblem) -> Result<Image> {
        let config = &problem.config;
        let reg = self.smoothness(u, problem)?;
        let data = self.data_gradient(u, problem)?;
        let increment: Vec<f64> = reg
            .data()
            .iter()
            .zip(data.data())
            .map(|(r, d)| config.alpha * r - d)
            .collect();
        u.add_scaled(&Image::from_raw(u.width(), u.height(), increment), config.tau)
    }
}

fn diff(a: &Image, b: &Image) -> Image {
    Image::from_raw(
        a.width(),
        a.height(),
        a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
    )
}

/// One explicit super-resolution step on `u_k`.
pub fn sr_step(u_k: &Image, problem: &SRProblem) -> Result<Image> {
    let ctx = SolveContext::new(problem)?;
    ctx.step(u_k, problem)
}

/// Full reconstruction: `k_max` steps from the bilinear initialisation.
pub fn reconstruct(problem: &SRProblem) -> Result<Image> {
    let ctx = SolveContext::new(problem)?;
    let mut u = initialise(problem);
    for _ in 0..problem.config.k_max {
        u = ctx.step(&u, problem)?;
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("reconstruction (tau too large?)"));
    }
    Ok(u)
}

/// Least-squares energy of the configured problem with the homogeneous
/// (quadratic gradient) smoothness term:
/// `1/2 sum_i |O_i u - f_i|^2 + alpha/2 |grad u|^2`.
pub fn energy(problem: &SRProblem, u: &Image) -> Result<f64> {
    let ctx = SolveContext::new(problem)?;
    let config = &problem.config;
    let mut data_term = 0.0;
    match &ctx.m21_rhs {
        Some(rhs) => {
            for r in rhs {
                let pred = blur(u, &config.blur);
                data_term += sq_norm(&diff(&pred, r));
            }
        }
        None => {
            for (f, flow) in problem.frames.iter().zip(&problem.flows) {
                let pred = apply_model(config.model, u, flow, &config.blur, &config.scale)?;
                data_term += sq_norm(&diff(&pred, f));
            }
        }
    }
    // Forward-difference gradient magnitude, zero across the boundary;
    // its negative divergence is exactly the hd_operator stencil.
    let (w, h) = (u.width(), u.height());
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let d = u.get(x + 1, y) - u.get(x, y);
                smooth += d * d;
            }
            if y + 1 < h {
                let d = u.get(x, y + 1) - u.get(x, y);
                smooth += d * d;
            }
        }
    }
    Ok(0.5 * data_term + 0.5 * config.alpha * smooth)
}

fn sq_norm(img: &Image) -> f64 {
    img.data().iter().map(|v| v * v).sum()
}

/// Baseline (a): the bilinearly upsampled reference frame.
pub fn upsampled_reference(problem: &SRProblem) -> Image {
    initialise(problem)
}

/// Baseline (b): bilinearly upsample every frame, register it to the
/// reference with its flow, and average pixelwise. Flows are taken on the
/// grid the problem carries them on and lifted to the high-resolution
/// grid for M4-M6.
pub fn registered_mean(problem: &SRProblem) -> Result<Image> {
    let scale = &problem.config.scale;
    let mut acc = Image::zeros(scale.hr_width, scale.hr_height);
    for (f, flow) in problem.frames.iter().zip(&problem.flows) {
        let up = resample_bilinear(f, scale.hr_width, scale.hr_height);
        let flow_hr = if problem.config.model.warps_at_lr() {
            crate::operators::flow_to_hr(flow, scale)?
        } else {
            flow.clone()
        };
        let registered = warp_forward(&up, &flow_hr)?;
        acc = acc.add_scaled(&registered, 1.0)?;
    }
    let n = problem.frames.len() as f64;
    Ok(Image::from_raw(
        acc.width(),
        acc.height(),
        acc.data().iter().map(|v| v / n).collect(),
    ))
}

/// Per-model reconstruction parameters for the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub sigma: f64,
    pub sigma_b: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub k_max: usize,
}

/// One row of the model-evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: ObservationalModel,
    pub params: ModelParams,
    pub mse: f64,
}

fn config_with(base: &SolverConfig, model: ObservationalModel, p: &ModelParams) -> SolverConfig {
    SolverConfig {
        model,
        blur: BlurSpec { sigma_b: p.sigma_b },
        diffusivity: DiffusivityParams {
            lambda: p.lambda,
            sigma: p.sigma,
        },
        alpha: p.alpha,
        k_max: p.k_max,
        ..*base
    }
}

/// Prepares the flows a model wants from high-resolution flows.
fn flows_for_model(
    model: ObservationalModel,
    flows_hr: &[FlowField],
    scale: &ScaleSpec,
) -> Result<Vec<FlowField>> {
    if model.warps_at_lr() {
        flows_hr.iter().map(|f| flow_to_lr(f, scale)).collect()
    } else {
        Ok(flows_hr.to_vec())
    }
}

/// Reconstructs once per (model, parameters) entry over a shared dataset
/// and reports the MSE against the ground truth. Flows are supplied on
/// the high-resolution grid and converted per model.
pub fn evaluate_models(
    frames: &[Image],
    flows_hr: &[FlowField],
    ground_truth: &Image,
    base: &SolverConfig,
    entries: &[(ObservationalModel, ModelParams)],
) -> Result<Vec<EvalRow>> {
    entries
        .iter()
        .map(|(model, params)| {
            let config = config_with(base, *model, params);
            let flows = flows_for_model(*model, flows_hr, &config.scale)?;
            let problem = SRProblem::new(frames.to_vec(), flows, config)?;
            let u = reconstruct(&problem)?;
            Ok(EvalRow {
                model: *model,
                params: *params,
                mse: mse(&u, ground_truth)?,
            })
        })
        .collect()
}

/// Writes the evaluation table as CSV with the columns
/// `model,sigma,sigma_b,lambda,alpha,k_max,mse`.
pub fn write_eval_csv(rows: &[EvalRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "model,sigma,sigma_b,lambda,alpha,k_max,mse")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model, r.params.sigma, r.params.sigma_b, r.params.lambda, r.params.alpha,
            r.params.k_max, r.mse
        )?;
    }
    Ok(())
}

/// Reads per-model parameters from a CSV with the same columns as
/// [`write_eval_csv`] (the `mse` column is optional and ignored).
pub fn read_params_csv(path: impl AsRef<Path>) -> Result<Vec<(ObservationalModel, ModelParams)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Manifest {
        path: path.into(),
        detail,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("model")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(bad(format!("line {}: expected at least 6 columns", i + 1)));
        }
        let model = ObservationalModel::parse(fields[0])
            .ok_or_else(|| bad(format!("line {}: unknown model '{}'", i + 1, fields[0])))?;
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| bad(format!("line {}: invalid number '{s}'", i + 1)))
        };
        rows.push((
            model,
            ModelParams {
                sigma: num(fields[1])?,
                sigma_b: num(fields[2])?,
                lambda: num(fields[3])?,
                alpha: num(fields[4])?,
                k_max: num(fields[5])? as usize,
            },
        ));
    }
    if rows.is_empty() {
        return Err(bad("no parameter rows".into()));
    }
    Ok(rows)
}

/// Parameter grid for [`grid_search`]. Axes iterate in declaration order
/// (sigma, sigma_b, lambda, alpha) with `k_maxes` evaluated along a single
/// trajectory per combination; the first strict minimum wins ties.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub sigmas: Vec<f64>,
    pub sigma_bs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub k_maxes: Vec<usize>,
}

/// Winning configuration of a grid search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub config: SolverConfig,
    pub mse: f64,
}

/// Exhaustive MSE-minimising search over the grid. The trajectory for one
/// `(sigma, sigma_b, lambda, alpha)` combination is evolved once up to
/// `max(k_maxes)` and sampled at every listed `k`, which is equivalent to
/// evaluating each `k` independently (the iterates coincide).
pub fn grid_search(
    frames: &[Image],
    flows: &[FlowField],
    ground_truth: &Image,
    base: &SolverConfig,
    grid: &ParamGrid,
) -> Result<SearchResult> {
    if grid.sigmas.is_empty()
        || grid.sigma_bs.is_empty()
        || grid.lambdas.is_empty()
        || grid.alphas.is_empty()
        || grid.k_maxes.is_empty()
    {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    let k_top = *grid.k_maxes.iter().max().unwrap();
    let mut best: Option<SearchResult> = None;
    for &sigma in &grid.sigmas {
        for &sigma_b in &grid.sigma_bs {
            for &lambda in &grid.lambdas {
                for &alpha in &grid.alphas {
                    let params = ModelParams {
                        sigma,
                        sigma_b,
                        lambda,
                        alpha,
                        k_max: k_top,
                    };
                    let config = config_with(base, base.model, &params);
                    let problem = SRProblem::new(frames.to_vec(), flows.to_vec(), config)?;
                    let ctx = SolveContext::new(&problem)?;
                    let mut u = initialise(&problem);
                    for k in 0..=k_top {
                        if k > 0 {
                            u = ctx.step(&u, &problem)?;
                        }
                        if !grid.k_maxes.contains(&k) {
                            continue;
                        }
                        if !u.is_finite() {
                            continue;
                        }
                        let m = mse(&u, ground_truth)?;
                        if best.as_ref().is_none_or(|b| m < b.mse) {
                            best = Some(SearchResult {
                                config: SolverConfig {
                                    k_max: k,
                                    ..problem.config
                                },
                                mse: m,
                            });
                        }
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no finite grid point".into()))
}

/// Denoising parameter grid: pre-smoothing, contrast and step counts.
#[derive(Debug, Clone)]
pub struct DenoiseGrid {
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k_maxes: Vec<usize>,
}

/// Winning denoising parameters.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseResult {
    pub sigma: f64,
    pub lambda: f64,
    pub k_max: usize,
    pub mse: f64,
}

/// MSE-minimising denoising search for EED or SD. `tau` defaults to the
/// method's stable step (0.2 for EED, the max-min bound for SD).
pub fn denoise_grid_search(
    noisy: &Image,
    ground_truth: &Image,
    method: Regulariser,
    grid: &DenoiseGrid,
    tau: Option<f64>,
) -> Result<DenoiseResult> {
    if grid.sigmas.is_empty() || grid.lambdas.is_empty() || grid.k_maxes.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    let k_top = *grid.k_maxes.iter().max().unwrap();
    let mut best: Option<DenoiseResult> = None;
    for &sigma in &grid.sigmas {
        let geometry = match method {
            Regulariser::Sd => Some(SectorGeometry::build(DEFAULT_SECTORS, DEFAULT_RADIUS, sigma)?),
            _ => None,
        };
        for &lambda in &grid.lambdas {
            let params = DiffusivityParams { lambda, sigma };
            let mut u = noisy.clone();
            for k in 0..=k_top {
                if k > 0 {
                    u = match method {
                        Regulariser::Eed => {
                            crate::diffusion::eed_step(&u, &params, tau.unwrap_or(EED_DENOISE_TAU))?
                        }
                        Regulariser::Sd => {
                            let g = geometry.as_ref().unwrap();
                            crate::sector::sd_step(&u, &params, g, tau.unwrap_or(g.tau_max()))?
                        }
                        Regulariser::Hd => crate::diffusion::hd_step(&u, tau.unwrap_or(0.25))?,
                    };
                }
                if !grid.k_maxes.contains(&k) {
                    continue;
                }
                let m = mse(&u, ground_truth)?;
                if best.as_ref().is_none_or(|b| m < b.mse) {
                    best = Some(DenoiseResult {
                        sigma,
                        lambda,
                        k_max: k,
                        mse: m,
                    });
                }
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Denoises with the given method and fixed parameters (convenience for
/// the command-line front end).
pub fn denoise(
    noisy: &Image,
    method: Regulariser,
    params: &DiffusivityParams,
    tau: Option<f64>,
    k_max: usize,
    sectors: usize,
    radius: f64,
) -> Result<Image> {
    match method {
        Regulariser::Eed => eed_denoise(noisy, params, tau.unwrap_or(EED_DENOISE_TAU), k_max),
        Regulariser::Sd => {
            let geom = SectorGeometry::build(sectors, radius, params.sigma)?;
            let t = tau.unwrap_or(geom.tau_max());
            sd_denoise(noisy, params, &geom, t, k_max)
        }
        Regulariser::Hd => {
            let mut u = noisy.clone();
            for _ in 0..k_max {
                u = crate::diffusion::hd_step(&u, tau.unwrap_or(0.25))?;
            }
            Ok(u)
        }
    }
}

/// Everything criterion-style experiments need from one dataset run; used
/// by the examples and the acceptance suite.
pub fn noisy_input(clean: &Image, sigma_noise: f64, seed: u64) -> Result<Image> {
    add_clipped_awgn(clean, sigma_noise, seed)
}
