// Calibration probe: denoising grids per method on synthetic scenes.
use mfsr::diffusion::add_clipped_awgn;
use mfsr::image::mse;
use mfsr::solver::{denoise_grid_search, DenoiseGrid, Regulariser};
use mfsr::synth;

fn main() {
    let size = 128;
    let ks: Vec<usize> = (0..=60).collect();
    for name in ["blocks", "glyphs", "ramp", "waves"] {
        let clean = synth::by_name(name, size, size).unwrap();
        for sn in [40.0] {
            let noisy = add_clipped_awgn(&clean, sn, 7).unwrap();
            let noisy_mse = mse(&noisy, &clean).unwrap();
            let eed = denoise_grid_search(
                &noisy, &clean, Regulariser::Eed,
                &DenoiseGrid { sigmas: vec![0.7, 1.0, 1.4, 1.9], lambdas: vec![50., 100., 200., 400., 800., 1600.], k_maxes: ks.clone() },
                None).unwrap();
            let sd = denoise_grid_search(
                &noisy, &clean, Regulariser::Sd,
                &DenoiseGrid { sigmas: vec![0.5, 0.8, 1.2], lambdas: vec![4., 8., 16., 32., 64.], k_maxes: ks.clone() },
                None).unwrap();
            println!("{name} s{sn}: noisy {noisy_mse:.0} | EED s{} l{} k{} -> {:.1} | SD s{} l{} k{} -> {:.1}",
                eed.sigma, eed.lambda, eed.k_max, eed.mse, sd.sigma, sd.lambda, sd.k_max, sd.mse);
        }
    }
}
