//! Command-line front end for batch use: dataset generation, denoising,
//! optical flow, super-resolution, model evaluation and parameter search.
//!
//! Exit codes: 0 success, 1 usage error, 2 i/o or file-format error,
//! 3 numerical-contract violation (e.g. a time step above its stability
//! bound or a diverged reconstruction).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use mfsr::degrade::{load_dataset, write_dataset, DatasetSpec, LoadedDataset};
use mfsr::diffusion::DiffusivityParams;
use mfsr::flow::{estimate_dataset_flows, estimate_flow, FlowParams};
use mfsr::image::{mse, FlowField, Image};
use mfsr::io::{read_image, write_flow, write_image, ImageFormat};
use mfsr::operators::{flow_to_hr, resample_bilinear, BlurSpec, ObservationalModel, ScaleSpec};
use mfsr::solver::{
    denoise, evaluate_models, grid_search, read_params_csv, reconstruct, write_eval_csv, EvalRow,
    ModelParams, ParamGrid, Regulariser, SRProblem, SolverConfig,
};
use mfsr::Error;

#[derive(Parser)]
#[command(
    name = "mfsr",
    version,
    about = "Multi-frame super-resolution from noisy data with diffusion regularisers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Hd,
    Eed,
    Sd,
}

impl From<MethodArg> for Regulariser {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hd => Regulariser::Hd,
            MethodArg::Eed => Regulariser::Eed,
            MethodArg::Sd => Regulariser::Sd,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Pgm,
    Pfm,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pgm => ImageFormat::Pgm8,
            FormatArg::Pfm => ImageFormat::Pfm,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowSourceArg {
    /// Ground-truth flows from the dataset manifest.
    Gt,
    /// Flows estimated from the noisy frames.
    Estimated,
}

/// Flow-estimation flags shared by the reconstruction subcommands.
#[derive(Args, Clone, Copy)]
struct FlowOpts {
    /// Flow source for registration
    #[arg(long = "flow", value_enum, default_value = "gt")]
    source: FlowSourceArg,
    /// Pre-smoothing of the flow estimator in pixels (sigma_OF)
    #[arg(long = "sigma-of", default_value_t = 1.0)]
    sigma_of: f64,
    /// Smoothness weight of the flow estimator (alpha_OF)
    #[arg(long = "alpha-of", default_value_t = 15.0)]
    alpha_of: f64,
    /// Estimate flow on bilinearly upsampled frames instead of estimating
    /// at low resolution and rescaling
    #[arg(long = "flow-upsampled", default_value_t = false)]
    flow_upsampled: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a ground-truth image into a dataset of warped, blurred,
    /// downsampled, noisy frames plus ground-truth flows
    Degrade {
        /// Ground-truth image (PGM or PFM)
        #[arg(long = "ground-truth")]
        ground_truth: PathBuf,
        /// Output directory for frames, flows and manifest.txt
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Number of frames; the last one is the reference
        #[arg(long, default_value_t = 30)]
        frames: usize,
        /// Downsampling factor (>= 1)
        #[arg(long, default_value_t = 2.0)]
        factor: f64,
        /// Acquisition blur standard deviation in pixels (sigma)
        #[arg(long = "blur-sigma", default_value_t = 1.0)]
        blur_sigma: f64,
        /// Clipped-noise standard deviation (sigma_noise)
        #[arg(long = "noise-sigma", default_value_t = 40.0)]
        noise_sigma: f64,
        /// Maximum deformation displacement in pixels
        #[arg(long, default_value_t = 3.0)]
        amplitude: f64,
        /// Gaussian smoothing of the deformation field in pixels
        #[arg(long, default_value_t = 20.0)]
        smoothness: f64,
        /// Random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Denoise an image with homogeneous, edge-enhancing or sector
    /// diffusion
    Denoise {
        /// Noisy input image
        #[arg(long = "in")]
        input: PathBuf,
        /// Output image
        #[arg(long = "out")]
        output: PathBuf,
        /// Diffusion method
        #[arg(long, value_enum, default_value = "sd")]
        method: MethodArg,
        /// Pre-smoothing standard deviation in pixels (sigma)
        #[arg(long, default_value_t = 0.6)]
        sigma: f64,
        /// Diffusivity contrast parameter (lambda)
        #[arg(long, default_value_t = 2.1)]
        lambda: f64,
        /// Number of explicit steps (k_max)
        #[arg(long = "kmax", default_value_t = 10)]
        k_max: usize,
        /// Time step size (tau); defaults to 0.2 for EED, 0.25 for HD and
        /// the max-min stability bound for SD
        #[arg(long)]
        tau: Option<f64>,
        /// Number of angular sectors (M)
        #[arg(long, default_value_t = 36)]
        sectors: usize,
        /// Disc neighbourhood radius in pixels (rho)
        #[arg(long, default_value_t = 7.0)]
        radius: f64,
        /// Output format
        #[arg(long = "out-format", value_enum, default_value = "pgm")]
        out_format: FormatArg,
    },

    /// Estimate variational optical flow between two images
    Flow {
        /// Reference image
        #[arg(long)]
        reference: PathBuf,
        /// Target image
        #[arg(long)]
        target: PathBuf,
        /// Output flow file (.flo)
        #[arg(long = "out")]
        output: PathBuf,
        /// Parameter preset (text1-3, house1-3); overrides sigma-of/alpha-of
        #[arg(long)]
        preset: Option<String>,
        /// Pre-smoothing standard deviation in pixels (sigma_OF)
        #[arg(long = "sigma-of", default_value_t = 1.0)]
        sigma_of: f64,
        /// Smoothness weight (alpha_OF)
        #[arg(long = "alpha-of", default_value_t = 15.0)]
        alpha_of: f64,
        /// Pyramid downsampling factor (eta)
        #[arg(long, default_value_t = 0.95)]
        eta: f64,
        /// Inner fixed-point iterations (eta_1)
        #[arg(long, default_value_t = 10)]
        eta1: usize,
        /// Outer fixed-point iterations (eta_2)
        #[arg(long, default_value_t = 10)]
        eta2: usize,
        /// Successive over-relaxation parameter (omega)
        #[arg(long, default_value_t = 1.95)]
        omega: f64,
        /// Robust penaliser constant (epsilon)
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },

    /// Reconstruct the high-resolution image from a dataset
    Superres {
        /// Dataset manifest (from `degrade`)
        #[arg(long)]
        manifest: PathBuf,
        /// Output image
        #[arg(long = "out")]
        output: PathBuf,
        /// Observational model (m1-m6, m2.1)
        #[arg(long, default_value = "m1")]
        model: String,
        /// Smoothness term
        #[arg(long, value_enum, default_value = "sd")]
        regulariser: MethodArg,
        /// Smoothness weight (alpha)
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Time step size (tau); defaults to 0.05 for HD/EED and 0.012
        /// for SD
        #[arg(long)]
        tau: Option<f64>,
        /// Number of gradient-descent steps (k_max)
        #[arg(long = "kmax", default_value_t = 20)]
        k_max: usize,
        /// Regulariser pre-smoothing in pixels (sigma)
        #[arg(long, default_value_t = 0.6)]
        sigma: f64,
        /// Diffusivity contrast parameter (lambda)
        #[arg(long, default_value_t = 2.1)]
        lambda: f64,
        /// Operator blur standard deviation in pixels (sigma_B)
        #[arg(long = "sigma-b", default_value_t = 1.0)]
        sigma_b: f64,
        /// Number of angular sectors (M)
        #[arg(long, default_value_t = 36)]
        sectors: usize,
        /// Disc neighbourhood radius in pixels (rho)
        #[arg(long, default_value_t = 7.0)]
        radius: f64,
        #[command(flatten)]
        flow: FlowOpts,
        /// Output format
        #[arg(long = "out-format", value_enum, default_value = "pgm")]
        out_format: FormatArg,
        /// Also print the MSE against the dataset's ground truth
        #[arg(long = "print-mse", default_value_t = false)]
        print_mse: bool,
    },

    /// Reconstruct with several observational models and tabulate MSEs
    /// against the ground truth as CSV
    #[command(name = "evaluate-models")]
    EvaluateModels {
        /// Dataset manifest (must reference a ground truth)
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated model list, e.g. m1,m2,m2.1
        #[arg(long, default_value = "m1,m2,m2.1")]
        models: String,
        /// Optional CSV with per-model parameters
        /// (model,sigma,sigma_b,lambda,alpha,k_max); falls back to the
        /// shared flag values below
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output CSV path; standard output when omitted
        #[arg(long = "out")]
        output: Option<PathBuf>,
        /// Smoothness term
        #[arg(long, value_enum, default_value = "sd")]
        regulariser: MethodArg,
        /// Regulariser pre-smoothing in pixels (sigma)
        #[arg(long, default_value_t = 0.6)]
        sigma: f64,
        /// Operator blur standard deviation in pixels (sigma_B)
        #[arg(long = "sigma-b", default_value_t = 1.0)]
        sigma_b: f64,
        /// Diffusivity contrast parameter (lambda)
        #[arg(long, default_value_t = 2.1)]
        lambda: f64,
        /// Smoothness weight (alpha)
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Time step size (tau); regulariser default when omitted
        #[arg(long)]
        tau: Option<f64>,
        /// Number of gradient-descent steps (k_max)
        #[arg(long = "kmax", default_value_t = 20)]
        k_max: usize,
        /// Number of angular sectors (M)
        #[arg(long, default_value_t = 36)]
        sectors: usize,
        /// Disc neighbourhood radius in pixels (rho)
        #[arg(long, default_value_t = 7.0)]
        radius: f64,
        #[command(flatten)]
        flow: FlowOpts,
    },

    /// Mean squared error between two images
    Mse {
        /// First image
        #[arg(long)]
        a: PathBuf,
        /// Second image
        #[arg(long)]
        b: PathBuf,
    },

    /// Exhaustive MSE-minimising parameter search on a dataset
    #[command(name = "grid-search")]
    GridSearch {
        /// Dataset manifest (must reference a ground truth)
        #[arg(long)]
        manifest: PathBuf,
        /// Observational model (m1-m6, m2.1)
        #[arg(long, default_value = "m1")]
        model: String,
        /// Smoothness term
        #[arg(long, value_enum, default_value = "sd")]
        regulariser: MethodArg,
        /// Comma-separated grid of regulariser pre-smoothing values (sigma)
        #[arg(long, default_value = "0.6")]
        sigmas: String,
        /// Comma-separated grid of operator blur values (sigma_B)
        #[arg(long = "sigma-bs", default_value = "1.0")]
        sigma_bs: String,
        /// Comma-separated grid of contrast parameters (lambda)
        #[arg(long, default_value = "2.1")]
        lambdas: String,
        /// Comma-separated grid of smoothness weights (alpha)
        #[arg(long, default_value = "1.0")]
        alphas: String,
        /// Comma-separated grid of step counts (k_max)
        #[arg(long = "kmaxes", default_value = "10,20,40")]
        k_maxes: String,
        /// Time step size (tau); regulariser default when omitted
        #[arg(long)]
        tau: Option<f64>,
        /// Number of angular sectors (M)
        #[arg(long, default_value_t = 36)]
        sectors: usize,
        /// Disc neighbourhood radius in pixels (rho)
        #[arg(long, default_value_t = 7.0)]
        radius: f64,
        #[command(flatten)]
        flow: FlowOpts,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                _ => {}
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::MalformedHeader { .. }
        | Error::Truncated { .. }
        | Error::Unsupported { .. }
        | Error::Manifest { .. } => 2,
        Error::DimensionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::InvalidParameter(_) => 1,
        Error::TimeStep { .. } | Error::NonFinite(_) => 3,
    }
}

fn parse_model(s: &str) -> Result<ObservationalModel, Error> {
    ObservationalModel::parse(s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown model '{s}'")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidParameter(format!("invalid {what} value '{t}'")))
        })
        .collect()
}

/// Resolves the registration flows of a dataset on the high-resolution
/// grid, either from the manifest's ground truth or by estimation.
fn resolve_flows_hr(data: &LoadedDataset, opts: &FlowOpts) -> Result<Vec<FlowField>, Error> {
    let scale = data.manifest.scale()?;
    match opts.source {
        FlowSourceArg::Gt => Ok(data.flows.clone()),
        FlowSourceArg::Estimated => {
            let params = FlowParams::new(opts.sigma_of, opts.alpha_of);
            let reference = &data.frames[data.manifest.reference];
            if opts.flow_upsampled {
                let up: Vec<Image> = data
                    .frames
                    .iter()
                    .map(|f| resample_bilinear(f, scale.hr_width, scale.hr_height))
                    .collect();
                let ref_up = resample_bilinear(reference, scale.hr_width, scale.hr_height);
                estimate_dataset_flows(&ref_up, &up, &params)
            } else {
                let lr = estimate_dataset_flows(reference, &data.frames, &params)?;
                lr.iter().map(|f| flow_to_hr(f, &scale)).collect()
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solver_config(
    model: ObservationalModel,
    regulariser: Regulariser,
    scale: ScaleSpec,
    sigma: f64,
    sigma_b: f64,
    lambda: f64,
    alpha: f64,
    tau: Option<f64>,
    k_max: usize,
    sectors: usize,
    radius: f64,
) -> Result<SolverConfig, Error> {
    Ok(SolverConfig {
        model,
        regulariser,
        alpha,
        tau: tau.unwrap_or_else(|| regulariser.default_sr_tau()),
        k_max,
        blur: BlurSpec::new(sigma_b)?,
        scale,
        diffusivity: DiffusivityParams::new(lambda, sigma)?,
        sectors,
        radius,
    })
}

fn require_ground_truth(data: &LoadedDataset) -> Result<&Image, Error> {
    data.ground_truth.as_ref().ok_or_else(|| {
        Error::InvalidParameter("manifest does not reference a ground-truth image".into())
    })
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Mse { a, b } => {
            let x = read_image(&a)?;
            let y = read_image(&b)?;
            println!("{}", mse(&x, &y)?);
            Ok(())
        }

        Command::Degrade {
            ground_truth,
            out_dir,
            frames,
            factor,
            blur_sigma,
            noise_sigma,
            amplitude,
            smoothness,
            seed,
        } => {
            let hr = read_image(&ground_truth)?;
            let spec = DatasetSpec {
                num_frames: frames,
                blur_sigma,
                scale_factor: factor,
                noise_sigma,
                seed,
                deformation_amplitude: amplitude,
                deformation_smoothness: smoothness,
            };
            let manifest = write_dataset(&hr, &spec, &out_dir)?;
            eprintln!(
                "wrote {} frames ({}x{}) to {}",
                manifest.frames.len(),
                manifest.lr_width,
                manifest.lr_height,
                out_dir.display()
            );
            Ok(())
        }

        Command::Denoise {
            input,
            output,
            method,
            sigma,
            lambda,
            k_max,
            tau,
            sectors,
            radius,
            out_format,
        } => {
            let noisy = read_image(&input)?;
            let params = DiffusivityParams::new(lambda, sigma)?;
            let out = denoise(&noisy, method.into(), &params, tau, k_max, sectors, radius)?;
            write_image(&out, &output, out_format.into())
        }

        Command::Flow {
            reference,
            target,
            output,
            preset,
            sigma_of,
            alpha_of,
            eta,
            eta1,
            eta2,
            omega,
            epsilon,
        } => {
            let mut params = match &preset {
                Some(name) => FlowParams::preset(name)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown preset '{name}'")))?,
                None => FlowParams::new(sigma_of, alpha_of),
            };
            params.eta = eta;
            params.eta1 = eta1;
            params.eta2 = eta2;
            params.omega = omega;
            params.epsilon = epsilon;
            let r = read_image(&reference)?;
            let t = read_image(&target)?;
            let flow = estimate_flow(&r, &t, &params)?;
            write_flow(&flow, &output)
        }

        Command::Superres {
            manifest,
            output,
            model,
            regulariser,
            alpha,
            tau,
            k_max,
            sigma,
            lambda,
            sigma_b,
            sectors,
            radius,
            flow,
            out_format,
            print_mse,
        } => {
            let data = load_dataset(&manifest)?;
            let scale = data.manifest.scale()?;
            let model = parse_model(&model)?;
            let config = solver_config(
                model,
                regulariser.into(),
                scale,
                sigma,
                sigma_b,
                lambda,
                alpha,
                tau,
                k_max,
                sectors,
                radius,
            )?;
            let flows_hr = resolve_flows_hr(&data, &flow)?;
            let flows = if model.warps_at_lr() {
                flows_hr
                    .iter()
                    .map(|f| mfsr::operators::flow_to_lr(f, &scale))
                    .collect::<Result<_, _>>()?
            } else {
                flows_hr
            };
            let problem = SRProblem::new(data.frames.clone(), flows, config)?;
            let u = reconstruct(&problem)?;
            if print_mse {
                let gt = require_ground_truth(&data)?;
                println!("{}", mse(&u, gt)?);
            }
            write_image(&u, &output, out_format.into())
        }

        Command::EvaluateModels {
            manifest,
            models,
            params,
            output,
            regulariser,
            sigma,
            sigma_b,
            lambda,
            alpha,
            tau,
            k_max,
            sectors,
            radius,
            flow,
        } => {
            let data = load_dataset(&manifest)?;
            let scale = data.manifest.scale()?;
            let gt = require_ground_truth(&data)?;
            let entries: Vec<(ObservationalModel, ModelParams)> = match params {
                Some(path) => read_params_csv(&path)?,
                None => {
                    let shared = ModelParams {
                        sigma,
                        sigma_b,
                        lambda,
                        alpha,
                        k_max,
                    };
                    models
                        .split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(|t| Ok((parse_model(t)?, shared)))
                        .collect::<Result<_, Error>>()?
                }
            };
            let base = solver_config(
                entries[0].0,
                regulariser.into(),
                scale,
                sigma,
                sigma_b,
                lambda,
                alpha,
                tau,
                k_max,
                sectors,
                radius,
            )?;
            let flows_hr = resolve_flows_hr(&data, &flow)?;
            let rows: Vec<EvalRow> = evaluate_models(&data.frames, &flows_hr, gt, &base, &entries)?;
            match output {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    write_eval_csv(&rows, file).map_err(|e| Error::io(&path, e))
                }
                None => write_eval_csv(&rows, std::io::stdout().lock())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }

        Command::GridSearch {
            manifest,
            model,
            regulariser,
            sigmas,
            sigma_bs,
            lambdas,
            alphas,
            k_maxes,
            tau,
            sectors,
            radius,
            flow,
        } => {
            let data = load_dataset(&manifest)?;
            let scale = data.manifest.scale()?;
            let gt = require_ground_truth(&data)?;
            let model = parse_model(&model)?;
            let base = solver_config(
                model,
                regulariser.into(),
                scale,
                0.6,
                1.0,
                2.1,
                1.0,
                tau,
                0,
                sectors,
                radius,
            )?;
            let grid = ParamGrid {
                sigmas: parse_list(&sigmas, "sigma")?,
                sigma_bs: parse_list(&sigma_bs, "sigma_b")?,
                lambdas: parse_list(&lambdas, "lambda")?,
                alphas: parse_list(&alphas, "alpha")?,
                k_maxes: parse_list(&k_maxes, "k_max")?,
            };
            let flows_hr = resolve_flows_hr(&data, &flow)?;
            let flows = if model.warps_at_lr() {
                flows_hr
                    .iter()
                    .map(|f| mfsr::operators::flow_to_lr(f, &scale))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                flows_hr
            };
            let result = grid_search(&data.frames, &flows, gt, &base, &grid)?;
            let row = EvalRow {
                model,
                params: ModelParams {
                    sigma: result.config.diffusivity.sigma,
                    sigma_b: result.config.blur.sigma_b,
                    lambda: result.config.diffusivity.lambda,
                    alpha: result.config.alpha,
                    k_max: result.config.k_max,
                },
                mse: result.mse,
            };
            write_eval_csv(&[row], std::io::stdout().lock()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}
