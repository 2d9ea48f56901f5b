//! Synthetic dataset generation: ground-truth scene -> random smooth
//! deformation -> Gaussian blur -> bilinear downsampling -> clipped
//! Gaussian noise, emitting frames plus the ground-truth flows that
//! produced them.
//!
//! The warp uses the same forward-warping convention as the solver's
//! observation operators, so the emitted flows are exactly the flows the
//! reconstruction expects. The last frame is the reference and carries
//! the identity flow.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diffusion::add_clipped_awgn;
use crate::error::{Error, Result};
use crate::image::{FlowField, Image};
use crate::io::{read_flow, read_image, write_flow, write_image, ImageFormat};
use crate::operators::{
    blur, convolve_separable, downsample, gaussian_kernel, warp_forward, BlurSpec, ScaleSpec,
};
use crate::rng::SplitMix64;

/// Recipe for one synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    /// Number of frames; the last one is the reference.
    pub num_frames: usize,
    /// Standard deviation of the acquisition blur.
    pub blur_sigma: f64,
    /// Downsampling factor (>= 1).
    pub scale_factor: f64,
    /// Clipped-noise standard deviation.
    pub noise_sigma: f64,
    /// Master seed; per-frame streams are derived from it.
    pub seed: u64,
    /// Maximum displacement of the random deformation (pixels).
    pub deformation_amplitude: f64,
    /// Gaussian smoothing of the random displacement field (pixels).
    pub deformation_smoothness: f64,
}

impl DatasetSpec {
    pub fn new(scale_factor: f64, seed: u64) -> Self {
        DatasetSpec {
            num_frames: 30,
            blur_sigma: 1.0,
            scale_factor,
            noise_sigma: 40.0,
            seed,
            deformation_amplitude: 3.0,
            deformation_smoothness: 20.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::InvalidParameter("need at least one frame".into()));
        }
        if !(self.deformation_amplitude >= 0.0) {
            return Err(Error::InvalidParameter(
                "deformation amplitude must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Index of the reference frame (the last one).
    pub fn reference(&self) -> usize {
        self.num_frames - 1
    }
}

/// Smooth random displacement field: i.i.d. uniform components in
/// [-amplitude, amplitude], Gaussian-smoothed by `smoothness`, rescaled so
/// the maximum displacement norm equals `amplitude` exactly. Deterministic
/// per seed.
pub fn random_deformation(
    width: usize,
    height: usize,
    amplitude: f64,
    smoothness: f64,
    seed: u64,
) -> FlowField {
    if amplitude == 0.0 {
        return FlowField::zeros(width, height);
    }
    let mut rng = SplitMix64::new(seed);
    let n = width * height;
    let u_raw: Vec<f64> = (0..n).map(|_| rng.uniform_in(-amplitude, amplitude)).collect();
    let v_raw: Vec<f64> = (0..n).map(|_| rng.uniform_in(-amplitude, amplitude)).collect();

    let taps = gaussian_kernel(smoothness);
    let smooth = |data: Vec<f64>| -> Vec<f64> {
        if taps.is_empty() {
            return data;
        }
        convolve_separable(&Image::from_raw(width, height, data), &taps)
            .data()
            .to_vec()
    };
    let mut u = smooth(u_raw);
    let mut v = smooth(v_raw);

    let max_norm = u
        .iter()
        .zip(&v)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0, f64::max);
    if max_norm > 0.0 {
        let s = amplitude / max_norm;
        u.iter_mut().for_each(|x| *x *= s);
        v.iter_mut().for_each(|x| *x *= s);
    }
    FlowField::from_raw(width, height, u, v)
}

/// Generates the frames and their ground-truth flows:
/// `frame_i = clip-noise(downsample(blur(warp(hr, flow_i))))`, with the
/// reference (last) frame undeformed. Flows are returned at the
/// high-resolution grid.
pub fn generate_dataset(hr: &Image, spec: &DatasetSpec) -> Result<(Vec<Image>, Vec<FlowField>)> {
    spec.validate()?;
    if hr.min() < 0.0 || hr.max() > 255.0 {
        return Err(Error::InvalidParameter(
            "ground truth must lie in [0,255]".into(),
        ));
    }
    let scale = ScaleSpec::from_factor(hr.width(), hr.height(), spec.scale_factor)?;
    let blur_spec = BlurSpec::new(spec.blur_sigma)?;

    let flows: Vec<FlowField> = (0..spec.num_frames)
        .map(|i| {
            if i == spec.reference() {
                FlowField::zeros(hr.width(), hr.height())
            } else {
                random_deformation(
                    hr.width(),
                    hr.height(),
                    spec.deformation_amplitude,
                    spec.deformation_smoothness,
                    SplitMix64::substream(spec.seed, i as u64).next_u64(),
                )
            }
        })
        .collect();

    let noise_seeds: Vec<u64> = (0..spec.num_frames)
        .map(|i| SplitMix64::substream(spec.seed, 1_000_000 + i as u64).next_u64())
        .collect();

    let frames: Vec<Image> = flows
        .par_iter()
        .zip(&noise_seeds)
        .map(|(flow, &noise_seed)| {
            let warped = warp_forward(hr, flow)?;
            let lr = downsample(&blur(&warped, &blur_spec), &scale)?;
            // Bilinear weights keep values inside the input hull; the
            // clamp only absorbs last-ulp rounding excursions.
            let clean = Image::from_raw(
                lr.width(),
                lr.height(),
                lr.data().iter().map(|v| v.clamp(0.0, 255.0)).collect(),
            );
            add_clipped_awgn(&clean, spec.noise_sigma, noise_seed)
        })
        .collect::<Result<_>>()?;

    Ok((frames, flows))
}

/// Plain-text description of an emitted dataset: grid geometry, pipeline
/// parameters and the per-frame file names (relative to the manifest).
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub hr_width: usize,
    pub hr_height: usize,
    pub lr_width: usize,
    pub lr_height: usize,
    pub reference: usize,
    pub scale_factor: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub deformation_amplitude: f64,
    pub deformation_smoothness: f64,
    pub seed: u64,
    pub ground_truth: Option<String>,
    /// (frame file, flow file) pairs in frame order.
    pub frames: Vec<(String, String)>,
}

impl Manifest {
    pub fn scale(&self) -> Result<ScaleSpec> {
        ScaleSpec::new(self.hr_width, self.hr_height, self.lr_width, self.lr_height)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        let _ = writeln!(out, "mfsr-dataset 1");
        let _ = writeln!(out, "hr {} {}", self.hr_width, self.hr_height);
        let _ = writeln!(out, "lr {} {}", self.lr_width, self.lr_height);
        let _ = writeln!(out, "reference {}", self.reference);
        let _ = writeln!(out, "factor {}", self.scale_factor);
        let _ = writeln!(out, "blur_sigma {}", self.blur_sigma);
        let _ = writeln!(out, "noise_sigma {}", self.noise_sigma);
        let _ = writeln!(out, "amplitude {}", self.deformation_amplitude);
        let _ = writeln!(out, "smoothness {}", self.deformation_smoothness);
        let _ = writeln!(out, "seed {}", self.seed);
        if let Some(gt) = &self.ground_truth {
            let _ = writeln!(out, "ground_truth {gt}");
        }
        for (frame, flow) in &self.frames {
            let _ = writeln!(out, "frame {frame} {flow}");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |detail: String| Error::Manifest {
            path: path.into(),
            detail,
        };

        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("mfsr-dataset 1") {
            return Err(bad("missing 'mfsr-dataset 1' header".into()));
        }

        let mut m = Manifest {
            hr_width: 0,
            hr_height: 0,
            lr_width: 0,
            lr_height: 0,
            reference: 0,
            scale_factor: 1.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            deformation_amplitude: 0.0,
            deformation_smoothness: 0.0,
            seed: 0,
            ground_truth: None,
            frames: Vec::new(),
        };
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let mut next = || {
                parts
                    .next()
                    .ok_or_else(|| bad(format!("missing value for '{key}'")))
            };
            match key {
                "hr" => {
                    m.hr_width = parse(next()?, key, path)?;
                    m.hr_height = parse(next()?, key, path)?;
                }
                "lr" => {
                    m.lr_width = parse(next()?, key, path)?;
                    m.lr_height = parse(next()?, key, path)?;
                }
                "reference" => m.reference = parse(next()?, key, path)?,
                "factor" => m.scale_factor = parse(next()?, key, path)?,
                "blur_sigma" => m.blur_sigma = parse(next()?, key, path)?,
                "noise_sigma" => m.noise_sigma = parse(next()?, key, path)?,
                "amplitude" => m.deformation_amplitude = parse(next()?, key, path)?,
                "smoothness" => m.deformation_smoothness = parse(next()?, key, path)?,
                "seed" => m.seed = parse(next()?, key, path)?,
                "ground_truth" => m.ground_truth = Some(next()?.to_string()),
                "frame" => {
                    let f = next()?.to_string();
                    let fl = next()?.to_string();
                    m.frames.push((f, fl));
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        if m.frames.is_empty() {
            return Err(bad("no frames listed".into()));
        }
        if m.reference >= m.frames.len() {
            return Err(bad(format!(
                "reference index {} out of range (frames: {})",
                m.reference,
                m.frames.len()
            )));
        }
        if m.hr_width == 0 || m.lr_width == 0 {
            return Err(bad("missing hr/lr dimensions".into()));
        }
        Ok(m)
    }
}

fn parse<T: std::str::FromStr>(tok: &str, key: &str, path: &Path) -> Result<T> {
    tok.parse().map_err(|_| Error::Manifest {
        path: path.into(),
        detail: format!("invalid value '{tok}' for '{key}'"),
    })
}

/// Generates a dataset and writes it to `dir`: quantised PGM frames,
/// `.flo` ground-truth flows, the ground-truth scene and `manifest.txt`.
pub fn write_dataset(hr: &Image, spec: &DatasetSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (frames, flows) = generate_dataset(hr, spec)?;

    write_image(hr, dir.join("ground_truth.pgm"), ImageFormat::Pgm8)?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, (frame, flow)) in frames.iter().zip(&flows).enumerate() {
        let frame_name = format!("frame_{i:03}.pgm");
        let flow_name = format!("flow_{i:03}.flo");
        write_image(frame, dir.join(&frame_name), ImageFormat::Pgm8)?;
        write_flow(flow, dir.join(&flow_name))?;
        entries.push((frame_name, flow_name));
    }

    let manifest = Manifest {
        hr_width: hr.width(),
        hr_height: hr.height(),
        lr_width: frames[0].width(),
        lr_height: frames[0].height(),
        reference: spec.reference(),
        scale_factor: spec.scale_factor,
        blur_sigma: spec.blur_sigma,
        noise_sigma: spec.noise_sigma,
        deformation_amplitude: spec.deformation_amplitude,
        deformation_smoothness: spec.deformation_smoothness,
        seed: spec.seed,
        ground_truth: Some("ground_truth.pgm".to_string()),
        frames: entries,
    };
    manifest.write(dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// A dataset loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub frames: Vec<Image>,
    pub flows: Vec<FlowField>,
    pub ground_truth: Option<Image>,
}

/// Reads a manifest and every file it references (paths are resolved
/// relative to the manifest's directory).
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |name: &str| -> PathBuf { base.join(name) };

    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut flows = Vec::with_capacity(manifest.frames.len());
    for (frame_name, flow_name) in &manifest.frames {
        frames.push(read_image(resolve(frame_name))?);
        flows.push(read_flow(resolve(flow_name))?);
    }
    let ground_truth = manifest
        .ground_truth
        .as_ref()
        .map(|name| read_image(resolve(name)))
        .transpose()?;
    Ok(LoadedDataset {
        manifest,
        frames,
        flows,
        ground_truth,
    })
}
