//! Training-time domain randomization.
//!
//! Image transforms are registered by name and built from a
//! [`RandomizationConfig`]; [`Randomizer`] applies the sample-level steps
//! (observation dropout, position jitter, label noise) followed by the
//! enabled image transforms in registry order.

pub mod transforms;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSample;
use crate::error::{HelioError, Result};
use crate::geometry::{HeliostatSpec, SunState, Vec3};
use crate::nurbs::HeliostatSurface;
use crate::optics::Grid;
use crate::rng::SimRng;

pub use transforms::{clamp_at, contrast_at, crop_at, deform_at, smooth_at, CropEdges, Displacement};

pub const DROPOUT: &str = "dropout";
pub const POSITION_JITTER: &str = "position_jitter";
pub const SURFACE_NOISE: &str = "surface_noise";
pub const SAMPLE_STEPS: [&str; 3] = [DROPOUT, POSITION_JITTER, SURFACE_NOISE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    /// Names of enabled steps; sample steps and image transforms alike.
    pub enabled: Vec<String>,
    pub apply_prob: f64,
    pub clamp_range: [f64; 2],
    pub heliostat_jitter_sigma_m: f64,
    pub sun_jitter_sigma_deg: f64,
    pub surface_noise_sigma_mm: f64,
    pub background_noise_max: f64,
    pub contrast_gamma_range: [f64; 2],
    pub deform_amp_px: f64,
    pub smooth_kernel_px: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            enabled: all_step_names().into_iter().map(String::from).collect(),
            apply_prob: 0.5,
            clamp_range: [0.9, 1.0],
            heliostat_jitter_sigma_m: 0.05,
            sun_jitter_sigma_deg: 0.1,
            surface_noise_sigma_mm: 0.02,
            background_noise_max: 0.02,
            contrast_gamma_range: [0.8, 1.25],
            deform_amp_px: 0.5,
            smooth_kernel_px: 2,
        }
    }
}

impl RandomizationConfig {
    /// Nothing enabled.
    pub fn disabled() -> Self {
        RandomizationConfig {
            enabled: Vec::new(),
            ..Default::default()
        }
    }

    /// Every transform at its neutral magnitude.
    pub fn neutral() -> Self {
        RandomizationConfig {
            clamp_range: [1.0, 1.0],
            heliostat_jitter_sigma_m: 0.0,
            sun_jitter_sigma_deg: 0.0,
            surface_noise_sigma_mm: 0.0,
            background_noise_max: 0.0,
            contrast_gamma_range: [1.0, 1.0],
            deform_amp_px: 0.0,
            smooth_kernel_px: 1,
            ..Default::default()
        }
    }

    pub fn is_enabled(&self, name: &str) -> bool {
        self.enabled.iter().any(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(HelioError::invalid("apply_prob must lie in [0, 1]"));
        }
        let known = all_step_names();
        if let Some(bad) = self.enabled.iter().find(|n| !known.contains(&n.as_str())) {
            return Err(HelioError::invalid(format!("unknown randomization step {bad:?}")));
        }
        let mags = [
            self.heliostat_jitter_sigma_m,
            self.sun_jitter_sigma_deg,
            self.surface_noise_sigma_mm,
            self.background_noise_max,
            self.deform_amp_px,
        ];
        if mags.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(HelioError::invalid("randomization magnitudes must be finite and >= 0"));
        }
        let [c0, c1] = self.clamp_range;
        if !(0.0 < c0 && c0 <= c1 && c1 <= 1.0) {
            return Err(HelioError::invalid("clamp_range must satisfy 0 < lo <= hi <= 1"));
        }
        let [g0, g1] = self.contrast_gamma_range;
        if !(0.0 < g0 && g0 <= g1 && g1.is_finite()) {
            return Err(HelioError::invalid("contrast_gamma_range must satisfy 0 < lo <= hi"));
        }
        if self.smooth_kernel_px == 0 {
            return Err(HelioError::invalid("smooth_kernel_px must be >= 1"));
        }
        Ok(())
    }
}

/// A randomized operation on one normalized flux grid.
pub trait FluxTransform: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid;
}

fn uniform(rng: &mut SimRng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Clamp([f64; 2]);

impl FluxTransform for Clamp {
    fn name(&self) -> &'static str {
        "clamp"
    }
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid {
        clamp_at(grid, uniform(rng, self.0))
    }
}

struct BackgroundNoise(f64);

impl FluxTransform for BackgroundNoise {
    fn name(&self) -> &'static str {
        "background_noise"
    }
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid {
        let level = uniform(rng, [0.0, self.0]);
        let noise: Vec<f64> = (0..grid.data().len()).map(|_| uniform(rng, [0.0, level])).collect();
        transforms::add_background(grid, &noise)
    }
}

struct Contrast([f64; 2]);

impl FluxTransform for Contrast {
    fn name(&self) -> &'static str {
        "contrast"
    }
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid {
        contrast_at(grid, uniform(rng, self.0))
    }
}

struct Crop;

impl FluxTransform for Crop {
    fn name(&self) -> &'static str {
        "crop"
    }
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid {
        crop_at(grid, CropEdges::from_mask(rng.random_range(1..16u8)))
    }
}

struct Deform(f64);

impl FluxTransform for Deform {
    fn name(&self) -> &'static str {
        "deform"
    }
    fn apply(&self, grid: &Grid, rng: &mut SimRng) -> Grid {
        let mut coef = || [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let field = Displacement {
            amp: self.0,
            dx: coef(),
            dy: coef(),
        };
        deform_at(grid, &field)
    }
}

struct Smooth(usize);

impl FluxTransform for Smooth {
    fn name(&self) -> &'static str {
        "smooth"
    }
    fn apply(&self, grid: &Grid, _rng: &mut SimRng) -> Grid {
        smooth_at(grid, self.0)
    }
}

type Constructor = fn(&RandomizationConfig) -> Box<dyn FluxTransform>;

/// Image transforms in application order.
pub const IMAGE_TRANSFORMS: [(&str, Constructor); 6] = [
    ("clamp", |c| Box::new(Clamp(c.clamp_range))),
    ("background_noise", |c| Box::new(BackgroundNoise(c.background_noise_max))),
    ("contrast", |c| Box::new(Contrast(c.contrast_gamma_range))),
    ("crop", |_| Box::new(Crop)),
    ("deform", |c| Box::new(Deform(c.deform_amp_px))),
    ("smooth", |c| Box::new(Smooth(c.smooth_kernel_px))),
];

pub fn all_step_names() -> Vec<&'static str> {
    SAMPLE_STEPS.iter().copied().chain(IMAGE_TRANSFORMS.iter().map(|(n, _)| *n)).collect()
}

pub fn build_transform(name: &str, config: &RandomizationConfig) -> Result<Box<dyn FluxTransform>> {
    IMAGE_TRANSFORMS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, make)| make(config))
        .ok_or_else(|| HelioError::invalid(format!("no image transform named {name:?}")))
}

/// Small rotation of a unit vector by a Gaussian angle about a random axis
/// perpendicular to it.
fn jitter_direction(dir: Vec3, sigma_rad: f64, rng: &mut SimRng) -> Vec3 {
    let t1 = dir.any_perpendicular();
    let t2 = dir.cross(t1);
    let a: f64 = sigma_rad * rng.sample::<f64, _>(StandardNormal);
    let b: f64 = sigma_rad * rng.sample::<f64, _>(StandardNormal);
    (dir + t1 * a + t2 * b).normalized()
}

pub struct Randomizer {
    config: RandomizationConfig,
    image: Vec<Box<dyn FluxTransform>>,
}

impl Randomizer {
    pub fn new(config: RandomizationConfig) -> Result<Self> {
        config.validate()?;
        let image = IMAGE_TRANSFORMS
            .iter()
            .filter(|(n, _)| config.is_enabled(n))
            .map(|(_, make)| make(&config))
            .collect();
        Ok(Randomizer { config, image })
    }

    pub fn config(&self) -> &RandomizationConfig {
        &self.config
    }

    pub fn image_transforms(&self) -> impl Iterator<Item = &dyn FluxTransform> {
        self.image.iter().map(|b| b.as_ref())
    }

    fn hit(&self, rng: &mut SimRng) -> bool {
        rng.random::<f64>() < self.config.apply_prob
    }

    /// Randomized copy of `sample`. Raw flux counts and target geometry are
    /// never touched; only the model-facing normalized grids change.
    pub fn randomize(&self, sample: &DatasetSample, rng: &mut SimRng) -> Result<DatasetSample> {
        let cfg = &self.config;
        let mut out = sample.clone();

        if cfg.is_enabled(DROPOUT) && out.observations.len() > 1 {
            let drop: Vec<bool> = out.observations.iter().map(|_| self.hit(rng)).collect();
            let mut keep: Vec<bool> = drop.iter().map(|d| !d).collect();
            if !keep.iter().any(|k| *k) {
                let k = rng.random_range(0..keep.len());
                keep[k] = true;
            }
            let mut it = keep.iter();
            out.observations.retain(|_| *it.next().unwrap());
        }

        if cfg.is_enabled(POSITION_JITTER) {
            if self.hit(rng) && cfg.heliostat_jitter_sigma_m > 0.0 {
                let mut d = [0.0; 3];
                d.iter_mut()
                    .for_each(|v| *v = cfg.heliostat_jitter_sigma_m * rng.sample::<f64, _>(StandardNormal));
                let h = &out.heliostat;
                out.heliostat = HeliostatSpec::new(h.id.clone(), h.position + Vec3::from(d), h.focal_distance)?;
            }
            for obs in out.observations.iter_mut() {
                if self.hit(rng) && cfg.sun_jitter_sigma_deg > 0.0 {
                    let dir = jitter_direction(obs.sun.direction, cfg.sun_jitter_sigma_deg.to_radians(), rng);
                    // a jitter below the horizon is dropped rather than clipped
                    if let Ok(sun) = SunState::new(dir, obs.sun.csr) {
                        obs.sun = sun;
                    }
                }
            }
        }

        if cfg.is_enabled(SURFACE_NOISE) && self.hit(rng) && cfg.surface_noise_sigma_mm > 0.0 {
            let noisy: Vec<f64> = out
                .truth
                .flatten()
                .iter()
                .map(|v| v + cfg.surface_noise_sigma_mm * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut truth = HeliostatSurface::from_flat(&noisy)?;
            truth.facets.iter_mut().for_each(|f| f.clip());
            out.truth = truth;
        }

        for obs in out.observations.iter_mut() {
            let mut grid = obs.flux.normalized().clone();
            for t in &self.image {
                if self.hit(rng) {
                    grid = t.apply(&grid, rng);
                }
            }
            grid.normalize_max();
            obs.flux.set_normalized(grid)?;
        }
        Ok(out)
    }
}

pub fn randomize_sample(sample: &DatasetSample, config: &RandomizationConfig, rng: &mut SimRng) -> Result<DatasetSample> {
    Randomizer::new(config.clone())?.randomize(sample, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Observation;
    use crate::geometry::solar_vector;
    use crate::optics::{FluxImage, TargetGeometry, TargetPlane};
    use crate::rng::{self, domain};

    fn sample(n_obs: usize) -> DatasetSample {
        let geo = TargetGeometry::Plane(TargetPlane::lambertian(36.0));
        let observations = (0..n_obs)
            .map(|k| {
                let raw: Vec<f32> = (0..64 * 64)
                    .map(|i| {
                        let (c, r) = ((i % 64) as f32, (i / 64) as f32);
                        (-((c - 30.0 - k as f32).powi(2) + (r - 33.0).powi(2)) / 40.0).exp() * 100.0
                    })
                    .collect();
                Observation {
                    sun: SunState::new(solar_vector(150.0 + 10.0 * k as f64, 40.0), 0.05).unwrap(),
                    aim_point: Vec3::new(0.1, 0.0, 36.2),
                    flux: FluxImage::from_raw(64, 64, 20_000, raw, geo).unwrap(),
                }
            })
            .collect();
        DatasetSample {
            heliostat: HeliostatSpec::new("H001", Vec3::new(10.0, 100.0, 2.0), 110.0).unwrap(),
            truth: HeliostatSurface::from_flat(&(0..256).map(|i| (i % 7) as f64 * 0.05).collect::<Vec<_>>()).unwrap(),
            observations,
        }
    }

    fn rng(i: u64) -> SimRng {
        rng::stream(3, domain::DEGRADE, i)
    }

    #[test]
    fn zero_probability_is_identity() {
        let s = sample(4);
        let cfg = RandomizationConfig {
            apply_prob: 0.0,
            ..Default::default()
        };
        assert_eq!(randomize_sample(&s, &cfg, &mut rng(0)).unwrap(), s);
    }

    #[test]
    fn dropout_keeps_at_least_one() {
        let s = sample(8);
        let cfg = RandomizationConfig {
            apply_prob: 1.0,
            enabled: vec![DROPOUT.into()],
            ..Default::default()
        };
        for i in 0..50 {
            let n = randomize_sample(&s, &cfg, &mut rng(i)).unwrap().observations.len();
            assert!((1..=7).contains(&n));
        }
    }

    #[test]
    fn deterministic_per_seed_and_geometry_preserved() {
        let s = sample(4);
        let cfg = RandomizationConfig {
            apply_prob: 1.0,
            ..Default::default()
        };
        let a = randomize_sample(&s, &cfg, &mut rng(5)).unwrap();
        let b = randomize_sample(&s, &cfg, &mut rng(5)).unwrap();
        assert_eq!(a, b);
        for o in &a.observations {
            assert_eq!(o.flux.geometry(), s.observations[0].flux.geometry());
            assert!(o.flux.normalized().is_valid_normalized());
        }
        assert_ne!(a.truth, s.truth);
    }

    #[test]
    fn neutral_magnitudes_are_identity() {
        let s = sample(3);
        let cfg = RandomizationConfig {
            apply_prob: 1.0,
            enabled: all_step_names().into_iter().filter(|n| *n != DROPOUT && *n != "crop").map(String::from).collect(),
            ..RandomizationConfig::neutral()
        };
        let out = randomize_sample(&s, &cfg, &mut rng(1)).unwrap();
        for (a, b) in out.observations.iter().zip(&s.observations) {
            let d = a.flux.normalized().data().iter().zip(b.flux.normalized().data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d < 1e-12);
        }
        assert_eq!(out.truth, s.truth);
        assert_eq!(out.heliostat, s.heliostat);
    }

    #[test]
    fn registry_lookup() {
        let cfg = RandomizationConfig::default();
        for (name, _) in IMAGE_TRANSFORMS {
            assert_eq!(build_transform(name, &cfg).unwrap().name(), name);
        }
        assert!(build_transform("blur", &cfg).is_err());
        let bad = RandomizationConfig {
            enabled: vec!["sharpen".into()],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(all_step_names().len(), 9);
    }

    #[test]
    fn background_noise_mean() {
        let g = Grid::zeros(64, 64);
        let level = 0.02;
        let mut r = rng(8);
        let noise: Vec<f64> = (0..64 * 64).map(|_| uniform(&mut r, [0.0, level])).collect();
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        assert!((mean / (level / 2.0) - 1.0).abs() < 0.05);
        let out = transforms::add_background(&g, &noise);
        assert!(out.is_valid_normalized());
        assert!(out.data().iter().all(|v| *v >= 0.0));
    }
}
