//! Sector diffusion: non-local anisotropic diffusion built from one-sided
//! differences.
//!
//! A disc-shaped neighbourhood of radius `rho` around each pixel is
//! partitioned into `M` angular sectors. Within every sector the image is
//! smoothed by a small sector-restricted Gaussian, and the resulting
//! one-sided difference quotients drive a diffusivity that gates
//! inverse-square-weighted pixel exchanges:
//!
//! `du_i/dt = sum_l sum_{j in S_l} g((us_jl - us_il)/|x_j-x_i|) * (u_j - u_i)/|x_j-x_i|^2`
//!
//! Because each sector sees only its own smoothed values, orientations
//! theta and theta+pi carry distinct diffusivities, which preserves
//! corners and thin structures that centred differences smooth over.

use rayon::prelude::*;

use crate::diffusion::{diffusivity, DiffusivityParams};
use crate::error::{Error, Result};
use crate::image::Image;

/// Sector count used by the denoising experiments.
pub const DEFAULT_SECTORS: usize = 36;
/// Disc radius (pixels) used by the denoising experiments.
pub const DEFAULT_RADIUS: f64 = 7.0;

#[derive(Debug, Clone)]
struct Sector {
    /// Integer pixel offsets (dx, dy) from the centre, encounter order.
    offsets: Vec<(i32, i32)>,
    /// 1 / |x_j - x_i| per member.
    inv_dist: Vec<f64>,
    /// 1 / |x_j - x_i|^2 per member.
    inv_dist_sq: Vec<f64>,
    /// Row-major [target member][source member] smoothing weights,
    /// normalised to sum 1 per target. Empty when sigma = 0.
    member_weights: Vec<f64>,
    /// Smoothing weights for the sector's estimate of the centre pixel:
    /// the centre's own value enters with h(i,i) = 1, the members with
    /// h(k,i). `centre_self_weight + sum(centre_weights) = 1`. Empty when
    /// sigma = 0.
    centre_weights: Vec<f64>,
    centre_self_weight: f64,
}

/// Precomputed partition of the disc neighbourhood into angular sectors,
/// with all smoothing and transport weights. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct SectorGeometry {
    num_sectors: usize,
    radius: f64,
    sigma: f64,
    sectors: Vec<Sector>,
    inv_sq_sum: f64,
    tau_max: f64,
    max_members: usize,
}

/// Builds the sector partition and weight tables. Deterministic for fixed
/// inputs. `sigma` is the standard deviation of the sector-restricted
/// smoothing kernel; `sigma = 0` means no smoothing (exact passthrough).
pub fn build_sector_geometry(num_sectors: usize, radius: f64, sigma: f64) -> Result<SectorGeometry> {
    SectorGeometry::build(num_sectors, radius, sigma)
}

impl SectorGeometry {
    pub fn build(num_sectors: usize, radius: f64, sigma: f64) -> Result<Self> {
        if num_sectors == 0 {
            return Err(Error::InvalidParameter("need at least one sector".into()));
        }
        if !(radius >= 1.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "disc radius must be >= 1, got {radius}"
            )));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing sigma must be >= 0, got {sigma}"
            )));
        }

        let mut sectors = vec![
            Sector {
                offsets: Vec::new(),
                inv_dist: Vec::new(),
                inv_dist_sq: Vec::new(),
                member_weights: Vec::new(),
                centre_weights: Vec::new(),
                centre_self_weight: 1.0,
            };
            num_sectors
        ];

        // Half-open angular bins [l*2pi/M, (l+1)*2pi/M).
        let r = radius.floor() as i32;
        let r_sq = radius * radius;
        let two_pi = 2.0 * std::f64::consts::PI;
        for dy in -r..=r {
            for dx in -r..=r {
                let d_sq = (dx * dx + dy * dy) as f64;
                if d_sq == 0.0 || d_sq > r_sq {
                    continue;
                }
                let mut theta = (dy as f64).atan2(dx as f64);
                if theta < 0.0 {
                    theta += two_pi;
                }
                let l = ((num_sectors as f64 * theta / two_pi).floor() as usize) % num_sectors;
                let s = &mut sectors[l];
                s.offsets.push((dx, dy));
                s.inv_dist.push(1.0 / d_sq.sqrt());
                s.inv_dist_sq.push(1.0 / d_sq);
            }
        }

        if sigma > 0.0 {
            for s in &mut sectors {
                let m = s.offsets.len();
                s.member_weights = vec![0.0; m * m];
                for j in 0..m {
                    let (jx, jy) = s.offsets[j];
                    let row = &mut s.member_weights[j * m..(j + 1) * m];
                    let mut sum = 0.0;
                    for (k, &(kx, ky)) in s.offsets.iter().enumerate() {
                        let d2 = ((kx - jx).pow(2) + (ky - jy).pow(2)) as f64;
                        let w = (-d2 / (2.0 * sigma * sigma)).exp();
                        row[k] = w;
                        sum += w;
                    }
                    row.iter_mut().for_each(|w| *w /= sum);
                }
                // The centre lies in no sector; its per-sector estimate
                // mixes the centre's own value (h(i,i) = 1) with the
                // h-weighted members of that sector, keeping the estimate
                // one-sided.
                let mut sum = 1.0;
                s.centre_weights = s
                    .offsets
                    .iter()
                    .map(|&(kx, ky)| {
                        let d2 = (kx * kx + ky * ky) as f64;
                        let w = (-d2 / (2.0 * sigma * sigma)).exp();
                        sum += w;
                        w
                    })
                    .collect();
                s.centre_weights.iter_mut().for_each(|w| *w /= sum);
                s.centre_self_weight = 1.0 / sum;
            }
        }

        let inv_sq_sum: f64 = sectors.iter().flat_map(|s| s.inv_dist_sq.iter()).sum();
        // Safety factor keeps the explicit step a convex combination under
        // floating-point rounding, so the max-min principle holds exactly.
        let tau_max = (1.0 - 1e-9) / inv_sq_sum;
        let max_members = sectors.iter().map(|s| s.offsets.len()).max().unwrap_or(0);

        Ok(SectorGeometry {
            num_sectors,
            radius,
            sigma,
            sectors,
            inv_sq_sum,
            tau_max,
            max_members,
        })
    }

    pub fn num_sectors(&self) -> usize {
        self.num_sectors
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Largest admissible explicit time step: `1 / sum_j 1/|x_j - x_i|^2`
    /// (the worst case `g = 1`), with a 1e-9 relative safety factor.
    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// Sum of the inverse-square transport weights over the whole disc.
    pub fn inv_sq_sum(&self) -> f64 {
        self.inv_sq_sum
    }

    pub fn total_offsets(&self) -> usize {
        self.sectors.iter().map(|s| s.offsets.len()).sum()
    }

    pub fn sector_offsets(&self, l: usize) -> &[(i32, i32)] {
        &self.sectors[l].offsets
    }

    fn check_sigma(&self, params: &DiffusivityParams) -> Result<()> {
        if (self.sigma - params.sigma).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "geometry was built with sigma {}, parameters carry sigma {}",
                self.sigma, params.sigma
            )));
        }
        Ok(())
    }
}

/// Sector-restricted smoothed values around one centre pixel.
#[derive(Debug, Clone)]
pub struct SectorSmoothed {
    /// Smoothed value per sector member, in `sector_offsets` order.
    pub members: Vec<f64>,
    /// The sector's estimate of the centre pixel.
    pub centre: f64,
}

/// Evaluates the sector-restricted smoothing at `(cx, cy)` for every
/// sector. Members outside the image use the reflecting boundary.
pub fn sector_smooth(
    u: &Image,
    cx: usize,
    cy: usize,
    geom: &SectorGeometry,
) -> Vec<SectorSmoothed> {
    assert!(cx < u.width() && cy < u.height(), "centre out of bounds");
    let mut vals = Vec::with_capacity(geom.max_members);
    geom.sectors
        .iter()
        .map(|s| {
            vals.clear();
            vals.extend(s.offsets.iter().map(|&(dx, dy)| {
                u.get_reflect(cx as isize + dx as isize, cy as isize + dy as isize)
            }));
            smooth_sector(s, &vals, u.get(cx, cy), geom.sigma)
        })
        .collect()
}

fn smooth_sector(s: &Sector, vals: &[f64], centre_value: f64, sigma: f64) -> SectorSmoothed {
    let m = vals.len();
    if sigma == 0.0 || m == 0 {
        return SectorSmoothed {
            members: vals.to_vec(),
            centre: centre_value,
        };
    }
    let members = (0..m)
        .map(|j| {
            let row = &s.member_weights[j * m..(j + 1) * m];
            row.iter().zip(vals).map(|(w, v)| w * v).sum()
        })
        .collect();
    let centre = s.centre_self_weight * centre_value
        + s.centre_weights
            .iter()
            .zip(vals)
            .map(|(w, v)| w * v)
            .sum::<f64>();
    SectorSmoothed { members, centre }
}

/// Evaluates the full-image sector diffusion increment, optionally fused
/// with the explicit step. The fused form accumulates upward and downward
/// fluxes separately and combines them as
/// `(u_i + tau * up) + tau * down`, which keeps every intermediate value
/// inside `[min u, max u]` in exact floating point when
/// `tau <= tau_max`.
fn sd_apply(u: &Image, lambda: f64, geom: &SectorGeometry, step_tau: Option<f64>) -> Image {
    let (w, h) = (u.width(), u.height());
    let d = u.data();
    let r = geom.radius.floor() as usize;
    let sigma = geom.sigma;

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut vals: Vec<f64> = Vec::with_capacity(geom.max_members);
        let interior_row = y >= r && y + r < h;
        for (x, o) in row.iter_mut().enumerate() {
            let ui = d[y * w + x];
            let interior = interior_row && x >= r && x + r < w;
            let mut up = 0.0;
            let mut down = 0.0;
            for s in &geom.sectors {
                let m = s.offsets.len();
                if m == 0 {
                    continue;
                }
                vals.clear();
                if interior {
                    vals.extend(
                        s.offsets
                            .iter()
                            .map(|&(dx, dy)| d[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize]),
                    );
                } else {
                    vals.extend(s.offsets.iter().map(|&(dx, dy)| {
                        u.get_reflect(x as isize + dx as isize, y as isize + dy as isize)
                    }));
                }

                if sigma == 0.0 {
                    for j in 0..m {
                        let g = diffusivity((vals[j] - ui) * s.inv_dist[j], lambda);
                        let flux = g * (vals[j] - ui) * s.inv_dist_sq[j];
                        if flux >= 0.0 {
                            up += flux;
                        } else {
                            down += flux;
                        }
                    }
                } else {
                    let centre: f64 = s.centre_self_weight * ui
                        + s.centre_weights
                            .iter()
                            .zip(&vals)
                            .map(|(w, v)| w * v)
                            .sum::<f64>();
                    for j in 0..m {
                        let row_w = &s.member_weights[j * m..(j + 1) * m];
                        let smoothed: f64 = row_w.iter().zip(&vals).map(|(w, v)| w * v).sum();
                        let g = diffusivity((smoothed - centre) * s.inv_dist[j], lambda);
                        let flux = g * (vals[j] - ui) * s.inv_dist_sq[j];
                        if flux >= 0.0 {
                            up += flux;
                        } else {
                            down += flux;
                        }
                    }
                }
            }
            *o = match step_tau {
                None => up + down,
                Some(tau) => (ui + tau * up) + tau * down,
            };
        }
    });
    Image::from_raw(w, h, out)
}

/// The sector diffusion increment `A_SD(u)`. Vanishes on constant images
/// and is invariant under grey-level shifts.
pub fn sd_operator(u: &Image, params: &DiffusivityParams, geom: &SectorGeometry) -> Result<Image> {
    geom.check_sigma(params)?;
    Ok(sd_apply(u, params.lambda, geom, None))
}

/// One explicit sector-diffusion step. Fails when `tau` exceeds
/// [`SectorGeometry::tau_max`]; below the bound the output provably stays
/// inside `[min u, max u]` elementwise.
pub fn sd_step(
    u: &Image,
    params: &DiffusivityParams,
    geom: &SectorGeometry,
    tau: f64,
) -> Result<Image> {
    geom.check_sigma(params)?;
    if !(tau > 0.0) || tau > geom.tau_max {
        return Err(Error::TimeStep {
            tau,
            bound: geom.tau_max,
        });
    }
    Ok(sd_apply(u, params.lambda, geom, Some(tau)))
}

/// Sector diffusion denoising: `k_max` explicit steps from the noisy
/// image.
pub fn sd_denoise(
    f: &Image,
    params: &DiffusivityParams,
    geom: &SectorGeometry,
    tau: f64,
    k_max: usize,
) -> Result<Image> {
    let mut u = f.clone();
    for _ in 0..k_max {
        u = sd_step(&u, params, geom, tau)?;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Image::from_raw(w, h, (0..w * h).map(|_| rng.uniform_in(0.0, 255.0)).collect())
    }

    #[test]
    fn disc_partition_m36_r7() {
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        // Brute-force lattice count of 0 < dx^2+dy^2 <= 49.
        let mut expected = Vec::new();
        for dy in -7i32..=7 {
            for dx in -7i32..=7 {
                let d = dx * dx + dy * dy;
                if d > 0 && d <= 49 {
                    expected.push((dx, dy));
                }
            }
        }
        assert_eq!(expected.len(), 148);
        assert_eq!(geom.total_offsets(), 148);

        // Every offset appears in exactly one sector.
        let mut seen: Vec<(i32, i32)> = (0..36)
            .flat_map(|l| geom.sector_offsets(l).iter().copied())
            .collect();
        seen.sort_unstable();
        expected.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn four_sector_binning() {
        let geom = SectorGeometry::build(4, 1.0, 0.5).unwrap();
        assert_eq!(geom.sector_offsets(0), &[(1, 0)]);
        assert_eq!(geom.sector_offsets(1), &[(0, 1)]);
        assert_eq!(geom.sector_offsets(2), &[(-1, 0)]);
        assert_eq!(geom.sector_offsets(3), &[(0, -1)]);
    }

    #[test]
    fn smoothing_weights_sum_to_one() {
        let geom = SectorGeometry::build(36, 7.0, 0.8).unwrap();
        for s in &geom.sectors {
            let m = s.offsets.len();
            for j in 0..m {
                let sum: f64 = s.member_weights[j * m..(j + 1) * m].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            if m > 0 {
                let sum: f64 = s.centre_self_weight + s.centre_weights.iter().sum::<f64>();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_constant_image() {
        let geom = SectorGeometry::build(8, 3.0, 1.0).unwrap();
        let img = Image::filled(9, 9, 42.0);
        for s in sector_smooth(&img, 4, 4, &geom) {
            assert!((s.centre - 42.0).abs() < 1e-12);
            for v in s.members {
                assert!((v - 42.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_sigma_zero_is_passthrough() {
        let geom = SectorGeometry::build(6, 2.0, 0.0).unwrap();
        let img = rand_image(7, 7, 3);
        let smoothed = sector_smooth(&img, 3, 3, &geom);
        for (l, s) in smoothed.iter().enumerate() {
            assert_eq!(s.centre, img.get(3, 3));
            for (j, &(dx, dy)) in geom.sector_offsets(l).iter().enumerate() {
                assert_eq!(
                    s.members[j],
                    img.get((3 + dx) as usize, (3 + dy) as usize)
                );
            }
        }
    }

    #[test]
    fn smooth_matches_hand_computed_weighted_means() {
        // M=4, rho=2: sector 0 holds offsets (1,0), (2,0), (1,1).
        let geom = SectorGeometry::build(4, 2.0, 1.0).unwrap();
        assert_eq!(geom.sector_offsets(0), &[(1, 0), (2, 0), (1, 1)]);

        let mut img = Image::filled(5, 5, 0.0);
        img.set(3, 2, 10.0); // offset (1,0) from centre (2,2)
        img.set(4, 2, 20.0); // offset (2,0)
        img.set(3, 3, 30.0); // offset (1,1)
        let smoothed = &sector_smooth(&img, 2, 2, &geom)[0];

        // Direct evaluation of the smoothing formula with sigma=1:
        // h = exp(-dist^2 / 2) between member offsets.
        let h = |d2: f64| (-d2 / 2.0).exp();
        let vals = [10.0f64, 20.0, 30.0]; // order (1,0), (2,0), (1,1)
        let offs = [(1.0f64, 0.0f64), (2.0, 0.0), (1.0, 1.0)];
        for j in 0..3 {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..3 {
                let d2 = (offs[k].0 - offs[j].0).powi(2) + (offs[k].1 - offs[j].1).powi(2);
                num += h(d2) * vals[k];
                den += h(d2);
            }
            assert!(
                (smoothed.members[j] - num / den).abs() < 1e-12,
                "member {j}: {} vs {}",
                smoothed.members[j],
                num / den
            );
        }
        // Centre estimate: the centre's own value (h = 1, u = 0 here)
        // plus the h-weighted members.
        let mut num = 1.0 * 0.0;
        let mut den = 1.0;
        for k in 0..3 {
            let d2 = offs[k].0.powi(2) + offs[k].1.powi(2);
            num += h(d2) * vals[k];
            den += h(d2);
        }
        assert!((smoothed.centre - num / den).abs() < 1e-12);
    }

    #[test]
    fn sd_constant_is_zero_field() {
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        let params = DiffusivityParams::new(3.0, 0.6).unwrap();
        let img = Image::filled(20, 20, 100.0);
        let out = sd_operator(&img, &params, &geom).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sd_saturated_diffusivity_is_nonlocal_laplacian() {
        // lambda -> infinity: g = 1 and the operator reduces to the plain
        // inverse-square-weighted nonlocal Laplacian.
        let geom = SectorGeometry::build(12, 3.0, 0.7).unwrap();
        let params = DiffusivityParams::new(1e18, 0.7).unwrap();
        let img = rand_image(14, 14, 9);
        let got = sd_operator(&img, &params, &geom).unwrap();
        for y in 0..14usize {
            for x in 0..14usize {
                let ui = img.get(x, y);
                let mut want = 0.0;
                for l in 0..geom.num_sectors() {
                    for &(dx, dy) in geom.sector_offsets(l) {
                        let uj = img.get_reflect(x as isize + dx as isize, y as isize + dy as isize);
                        want += (uj - ui) / (dx * dx + dy * dy) as f64;
                    }
                }
                assert!(
                    (got.get(x, y) - want).abs() < 1e-9,
                    "({x},{y}): {} vs {want}",
                    got.get(x, y)
                );
            }
        }
    }

    #[test]
    fn sd_shuts_down_across_step_edge() {
        // Vertical step edge; lambda far below the step height. The
        // response at edge pixels must be under 1% of the saturated
        // (g = 1) response there.
        let mut img = Image::zeros(24, 24);
        for y in 0..24 {
            for x in 12..24 {
                img.set(x, y, 200.0);
            }
        }
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        let low = DiffusivityParams::new(1.0, 0.6).unwrap();
        let saturated = DiffusivityParams::new(1e18, 0.6).unwrap();
        let gated = sd_operator(&img, &low, &geom).unwrap();
        let open = sd_operator(&img, &saturated, &geom).unwrap();
        for y in 8..16 {
            for x in 11..13 {
                let g = gated.get(x, y).abs();
                let o = open.get(x, y).abs();
                assert!(o > 1.0, "saturated response should be large, got {o}");
                assert!(g < 0.01 * o, "({x},{y}): gated {g} vs open {o}");
            }
        }
    }

    #[test]
    fn sd_max_min_principle_at_tau_max() {
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        let params = DiffusivityParams::new(5.0, 0.6).unwrap();
        for seed in 0..10u64 {
            let img = rand_image(16, 16, seed);
            let (lo, hi) = (img.min(), img.max());
            let mut u = img;
            for _ in 0..10 {
                u = sd_step(&u, &params, &geom, geom.tau_max()).unwrap();
                assert!(u.min() >= lo && u.max() <= hi, "seed {seed}");
            }
        }
    }

    #[test]
    fn sd_step_rejects_tau_above_bound() {
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        let params = DiffusivityParams::new(5.0, 0.6).unwrap();
        let img = rand_image(8, 8, 1);
        assert!(sd_step(&img, &params, &geom, geom.tau_max() * 1.01).is_err());
        assert!(sd_denoise(&img, &params, &geom, geom.tau_max() * 2.0, 3).is_err());
    }

    #[test]
    fn sd_denoise_zero_steps_identity() {
        let geom = SectorGeometry::build(36, 7.0, 0.6).unwrap();
        let params = DiffusivityParams::new(5.0, 0.6).unwrap();
        let img = rand_image(10, 10, 2);
        assert_eq!(
            sd_denoise(&img, &params, &geom, geom.tau_max(), 0).unwrap(),
            img
        );
    }

    #[test]
    fn sd_shift_equivariant() {
        let geom = SectorGeometry::build(12, 3.0, 0.8).unwrap();
        let params = DiffusivityParams::new(10.0, 0.8).unwrap();
        let img = rand_image(12, 12, 4);
        let shifted = Image::from_raw(12, 12, img.data().iter().map(|v| v + 40.0).collect());
        let a = sd_operator(&img, &params, &geom).unwrap();
        let b = sd_operator(&shifted, &params, &geom).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sd_rejects_sigma_mismatch() {
        let geom = SectorGeometry::build(8, 2.0, 0.6).unwrap();
        let params = DiffusivityParams::new(5.0, 0.9).unwrap();
        assert!(sd_operator(&rand_image(6, 6, 1), &params, &geom).is_err());
    }
}
