//! Seeded synthetic scenes: flat-roofed rectangular buildings with
//! log-normal heights over low ground, rendered to a three-band image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::raster::{RasterKind, RasterPatch};
use crate::error::{Error, Result};

/// Foreground/background cut used throughout, in meters.
pub const FG_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Patch side in pixels.
    pub size: usize,
    pub gsd: f64,
    /// Inclusive range of buildings per patch.
    pub building_count: [usize; 2],
    /// Inclusive range of rectangle sides in pixels.
    pub footprint_size: [usize; 2],
    /// Target share of pixels below 1 m, averaged over patches.
    pub background_fraction: f64,
    /// Per-patch uniform jitter of the background share.
    pub background_jitter: f64,
    pub height_log_mean: f64,
    pub height_log_sigma: f64,
    pub h_max: f64,
    /// Ground heights are drawn in [0, ground_max).
    pub ground_max: f64,
    pub canopy_count: [usize; 2],
    pub canopy_height: [f64; 2],
    pub sun_azimuth_deg: f64,
    pub sun_elevation_deg: f64,
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            size: 32,
            gsd: 3.0,
            building_count: [0, 64],
            footprint_size: [2, 8],
            background_fraction: 0.57,
            background_jitter: 0.12,
            height_log_mean: 2.2,
            height_log_sigma: 0.7,
            h_max: 100.0,
            ground_max: 0.6,
            canopy_count: [0, 0],
            canopy_height: [3.0, 12.0],
            sun_azimuth_deg: 135.0,
            sun_elevation_deg: 35.0,
            noise_sigma: 0.02,
        }
    }
}

/// Image, height and footprint rasters of one generated patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RasterPatch,
    pub height: RasterPatch,
    pub footprint: RasterPatch,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.size == 0 {
            errs.push("size must be positive".to_string());
        }
        if !(self.gsd > 0.0) {
            errs.push(format!("gsd {} must be positive", self.gsd));
        }
        let [bmin, bmax] = self.building_count;
        if bmin > bmax {
            errs.push(format!("building_count [{bmin}, {bmax}] is empty"));
        }
        let [fmin, fmax] = self.footprint_size;
        if fmin == 0 || fmin > fmax {
            errs.push(format!("footprint_size [{fmin}, {fmax}] is empty"));
        }
        if bmax > 0 && fmin > self.size {
            errs.push(format!(
                "buildings of side {fmin} px do not fit a {} px patch",
                self.size
            ));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            errs.push("background_fraction must lie in [0, 1]".into());
        }
        if !(self.background_jitter >= 0.0) {
            errs.push("background_jitter must be nonnegative".into());
        }
        if !(self.height_log_sigma > 0.0) {
            errs.push("height_log_sigma must be positive".into());
        }
        if !(self.h_max > FG_THRESHOLD) {
            errs.push(format!("h_max {} must exceed 1 m", self.h_max));
        }
        if !(self.ground_max >= 0.0 && self.ground_max < FG_THRESHOLD) {
            errs.push("ground_max must lie in [0, 1)".into());
        }
        if self.canopy_count[0] > self.canopy_count[1] {
            errs.push("canopy_count range is empty".into());
        }
        let [c0, c1] = self.canopy_height;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= self.h_max) {
            errs.push("canopy_height must be an increasing range inside (0, h_max]".into());
        }
        if !(self.sun_elevation_deg > 0.0 && self.sun_elevation_deg < 90.0) {
            errs.push("sun_elevation_deg must lie in (0, 90)".into());
        }
        if !(self.noise_sigma >= 0.0) {
            errs.push("noise_sigma must be nonnegative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Copy of `self` with the seed replaced by one derived from `index`.
    pub fn for_index(&self, index: u64) -> SceneSpec {
        SceneSpec {
            seed: derive_seed(self.seed, index),
            ..self.clone()
        }
    }
}

/// SplitMix64 step over `base ^ index`; used for per-patch and per-epoch seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

fn place_buildings(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Rect>> {
    let s = spec.size;
    let [bmin, bmax] = spec.building_count;
    let [fmin, fmax] = spec.footprint_size;
    let fmax = fmax.min(s);
    let jitter = if spec.background_jitter > 0.0 {
        rng.gen_range(-spec.background_jitter..=spec.background_jitter)
    } else {
        0.0
    };
    let target = ((1.0 - spec.background_fraction + jitter).clamp(0.0, 1.0) * (s * s) as f64) as usize;

    // occupied pixels; new rectangles keep a one-pixel gap so each building
    // is its own connected component
    let mut occ = vec![false; s * s];
    let mut rects: Vec<Rect> = Vec::new();
    let mut covered = 0usize;
    let attempts = 400 + 40 * s;
    for attempt in 0..attempts {
        if rects.len() >= bmax {
            break;
        }
        let need_more = rects.len() < bmin;
        if !need_more && covered >= target {
            break;
        }
        let w = rng.gen_range(fmin..=fmax);
        let h = rng.gen_range(fmin..=fmax);
        let x = rng.gen_range(0..=s - w);
        let y = rng.gen_range(0..=s - h);
        let area = w * h;
        // avoid overshooting the coverage target by more than half a building
        if !need_more && covered + area > target + area / 2 && attempt < attempts / 2 {
            continue;
        }
        let (x0, y0) = (x.saturating_sub(1), y.saturating_sub(1));
        let (x1, y1) = ((x + w + 1).min(s), (y + h + 1).min(s));
        let free = (y0..y1).all(|yy| (x0..x1).all(|xx| !occ[yy * s + xx]));
        if !free {
            continue;
        }
        for yy in y..y + h {
            for xx in x..x + w {
                occ[yy * s + xx] = true;
            }
        }
        covered += area;
        rects.push(Rect { x, y, w, h });
    }
    if rects.len() < bmin {
        return Err(Error::config(format!(
            "could not place {bmin} separated buildings in a {s} px patch"
        )));
    }
    Ok(rects)
}

/// Generates one patch. Deterministic in `spec` (including its seed).
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.size;
    let n = s * s;

    // ground: two soft sinusoids plus pixel noise, all below ground_max
    let mut height = vec![0.0f64; n];
    let (fx, fy, px, py): (f64, f64, f64, f64) = (
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.0..6.3),
        rng.gen_range(0.0..6.3),
    );
    for y in 0..s {
        for x in 0..s {
            let smooth = 0.5 + 0.25 * (fx * x as f64 + px).sin() + 0.25 * (fy * y as f64 + py).cos();
            let v = spec.ground_max * (0.85 * smooth + 0.15 * rng.gen::<f64>());
            height[y * s + x] = v.clamp(0.0, spec.ground_max * 0.999);
        }
    }

    let rects = place_buildings(spec, &mut rng)?;
    let lognormal = LogNormal::new(spec.height_log_mean, spec.height_log_sigma)
        .map_err(|e| Error::config(format!("height distribution: {e}")))?;
    let mut footprint = vec![false; n];
    for r in &rects {
        let base = lognormal.sample(&mut rng).clamp(1.5, spec.h_max);
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                let roof = base + rng.gen_range(-0.2..0.2);
                height[y * s + x] = roof.clamp(1.2, spec.h_max);
                footprint[y * s + x] = true;
            }
        }
    }

    let mut canopy = vec![false; n];
    let [cmin, cmax] = spec.canopy_count;
    let blobs = rng.gen_range(cmin..=cmax);
    for _ in 0..blobs {
        let radius = rng.gen_range(1.0..3.5f64);
        let (cx, cy) = (rng.gen_range(0.0..s as f64), rng.gen_range(0.0..s as f64));
        let top = rng.gen_range(spec.canopy_height[0]..=spec.canopy_height[1]);
        for y in 0..s {
            for x in 0..s {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let i = y * s + x;
                if d < radius && !footprint[i] {
                    let v = top * (1.0 - (d / radius).powi(2)).sqrt();
                    if v > height[i] {
                        height[i] = v;
                        canopy[i] = true;
                    }
                }
            }
        }
    }

    let image = render(spec, &height, &footprint, &canopy, &mut rng)?;
    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let fp: Vec<f32> = footprint.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(Scene {
        image: RasterPatch::new(s, s, 3, spec.gsd, RasterKind::Image, to_f32(&image))?,
        height: RasterPatch::new(s, s, 1, spec.gsd, RasterKind::Height, to_f32(&height))?,
        footprint: RasterPatch::new(s, s, 1, spec.gsd, RasterKind::Footprint, fp)?,
    })
}

fn render(
    spec: &SceneSpec,
    height: &[f64],
    footprint: &[bool],
    canopy: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let s = spec.size;
    let n = s * s;
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, s as isize - 1) as usize;
        let yc = y.clamp(0, s as isize - 1) as usize;
        height[yc * s + xc]
    };
    let az = spec.sun_azimuth_deg.to_radians();
    let el = spec.sun_elevation_deg.to_radians();
    // image x grows east, y grows south
    let (sx, sy) = (az.sin(), -az.cos());
    let light = [el.cos() * sx, el.cos() * sy, el.sin()];
    let rise = el.tan() * spec.gsd;

    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-300))
        .map_err(|e| Error::config(format!("noise: {e}")))?;
    let mut img = vec![0.0; 3 * n];
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let (xi, yi) = (x as isize, y as isize);
            let dzdx = (at(xi + 1, yi) - at(xi - 1, yi)) / (2.0 * spec.gsd);
            let dzdy = (at(xi, yi + 1) - at(xi, yi - 1)) / (2.0 * spec.gsd);
            let norm = (1.0 + dzdx * dzdx + dzdy * dzdy).sqrt();
            let shade = ((-dzdx * light[0] - dzdy * light[1] + light[2]) / norm).max(0.0);

            // march toward the sun looking for an occluder
            let h0 = height[i];
            let mut shadow = 0.0;
            for t in 1..2 * s {
                let px = x as f64 + 0.5 + sx * t as f64;
                let py = y as f64 + 0.5 + sy * t as f64;
                if px < 0.0 || py < 0.0 || px >= s as f64 || py >= s as f64 {
                    break;
                }
                if height[py as usize * s + px as usize] > h0 + rise * t as f64 {
                    shadow = 1.0;
                    break;
                }
            }

            let tex: f64 = rng.gen();
            let (a0, a1, a2) = if footprint[i] {
                let tone = 1.0 - (-h0 / 25.0).exp();
                (0.45 + 0.4 * tone, 0.4 + 0.3 * tone, 0.5 + 0.45 * tone)
            } else if canopy[i] {
                (0.15, 0.45, 0.12)
            } else {
                (0.3 + 0.1 * tex, 0.28 + 0.08 * tex, 0.25 + 0.1 * tex)
            };
            let lit = (0.35 + 0.65 * shade) * (1.0 - 0.55 * shadow);
            img[i] = a0 * lit;
            img[n + i] = a1 * lit;
            img[2 * n + i] = a2 * (1.0 - 0.55 * shadow);
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_buildings_means_empty_footprint_and_low_ground() {
        let spec = SceneSpec {
            building_count: [0, 0],
            ..Default::default()
        };
        let sc = generate_scene(&spec).unwrap();
        assert!(sc.footprint.values.iter().all(|&v| v == 0.0));
        assert!(sc.height.values.iter().all(|&v| (v as f64) < FG_THRESHOLD));
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec {
            seed: 1,
            ..Default::default()
        };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    }

    #[test]
    fn footprint_pixels_are_at_least_one_meter() {
        for seed in 0..20 {
            let sc = generate_scene(&SceneSpec::default().for_index(seed)).unwrap();
            for (h, f) in sc.height.values.iter().zip(&sc.footprint.values) {
                if *f == 1.0 {
                    assert!(*h >= 1.0);
                }
            }
        }
    }

    #[test]
    fn oversized_buildings_are_a_config_error() {
        let spec = SceneSpec {
            size: 8,
            footprint_size: [10, 12],
            ..Default::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
