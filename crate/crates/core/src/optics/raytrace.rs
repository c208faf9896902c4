//! Monte-Carlo specular raytracer.
//!
//! Ray `i` of a trace with seed `s` always consumes ChaCha8 words
//! `[16 i, 16 i + 16)` of stream `(s, RAYS)`, so the accumulated grid is
//! independent of how the ray range is split across workers.

use std::ops::Range;

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;

use crate::error::{HelioError, Result};
use crate::geometry::{mirror_frame, track_orientation, HeliostatSpec, Mat3, SunState, Vec3, FACET_COUNT};
use crate::nurbs::HeliostatSurface;
use crate::optics::flux::FluxImage;
use crate::optics::sunshape::{SunshapeConfig, SunshapeSampler};
use crate::optics::target::FluxTarget;
use crate::rng::{self, unit_f64};

const WORDS_PER_RAY: u128 = 16;
const CHUNK: u64 = 1 << 14;

#[derive(Debug, Clone, Copy)]
struct FacetFrame {
    origin: Vec3,
    rot: Mat3,
    width: f64,
    height: f64,
}

/// Precomputed per-trace state shared by all rays.
pub struct Tracer<'a> {
    facets: [FacetFrame; FACET_COUNT],
    cum_area: [f64; FACET_COUNT],
    surface: &'a HeliostatSurface,
    target: &'a dyn FluxTarget,
    sun: Vec3,
    sun_t1: Vec3,
    sun_t2: Vec3,
    sampler: SunshapeSampler,
    seed: u64,
}

impl<'a> Tracer<'a> {
    pub fn new(
        heliostat: &HeliostatSpec,
        surface: &'a HeliostatSurface,
        sun: SunState,
        target: &'a dyn FluxTarget,
        aim_point: Vec3,
        seed: u64,
    ) -> Result<Self> {
        sun.validate()?;
        let normal = track_orientation(sun.direction, heliostat.position, aim_point)?;
        let frame = mirror_frame(normal);
        let mut facets = [FacetFrame {
            origin: Vec3::ZERO,
            rot: Mat3::IDENTITY,
            width: 0.0,
            height: 0.0,
        }; FACET_COUNT];
        let mut cum_area = [0.0; FACET_COUNT];
        let mut acc = 0.0;
        for (k, f) in heliostat.facets.iter().enumerate() {
            facets[k] = FacetFrame {
                origin: heliostat.position + frame.apply(f.center_offset),
                rot: frame.compose(&f.canting_rotation),
                width: f.width,
                height: f.height,
            };
            acc += f.width * f.height;
            cum_area[k] = acc;
        }
        let sun_t1 = sun.direction.any_perpendicular();
        let sun_t2 = sun.direction.cross(sun_t1);
        Ok(Tracer {
            facets,
            cum_area,
            surface,
            target,
            sun: sun.direction,
            sun_t1,
            sun_t2,
            sampler: SunshapeSampler::new(SunshapeConfig::new(sun.csr))?,
            seed,
        })
    }

    /// Mirror point and outgoing direction of one ray, `None` if the sampled
    /// sun ray arrives from behind the mirror.
    #[inline]
    fn ray(&self, draws: &[u64; 8]) -> Option<(Vec3, Vec3)> {
        let total = self.cum_area[FACET_COUNT - 1];
        let pick = unit_f64(draws[0]) * total;
        let k = self.cum_area.iter().position(|&c| pick < c).unwrap_or(FACET_COUNT - 1);
        let fr = &self.facets[k];
        let (u, v) = (unit_f64(draws[1]), unit_f64(draws[2]));
        let sp = self.surface.facets[k].eval(u, v);
        let local = Vec3::new((u - 0.5) * fr.width, (v - 0.5) * fr.height, sp.z_mm * 1e-3);
        let point = fr.origin + fr.rot.apply(local);
        let normal = fr.rot.apply(sp.normal(fr.width, fr.height));

        let theta = self.sampler.theta_for(unit_f64(draws[3])) * 1e-3;
        let phi = std::f64::consts::TAU * unit_f64(draws[4]);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let to_sun = self.sun * ct + (self.sun_t1 * cp + self.sun_t2 * sp) * st;
        let incoming = -to_sun;
        if incoming.dot(normal) >= 0.0 {
            return None;
        }
        Some((point, incoming.reflect(normal)))
    }

    /// Adds the hits of rays `range` into `counts` (row-major, target size).
    pub fn accumulate(&self, range: Range<u64>, counts: &mut [u32]) {
        if range.is_empty() {
            return;
        }
        let (w, _) = self.target.resolution();
        let mut stream = rng::stream(self.seed, rng::domain::RAYS, 0);
        stream.set_word_pos(range.start as u128 * WORDS_PER_RAY);
        let mut draws = [0u64; 8];
        for _ in range {
            for d in draws.iter_mut() {
                *d = stream.next_u64();
            }
            if let Some((p, dir)) = self.ray(&draws) {
                if let Some((col, row)) = self.target.pixel(p, dir) {
                    counts[row * w + col] += 1;
                }
            }
        }
    }

    /// Hit counts for a ray index range, traced in parallel chunks.
    pub fn counts(&self, range: Range<u64>) -> Vec<u32> {
        let (w, h) = self.target.resolution();
        let n_px = w * h;
        let start = range.start;
        let n_chunks = (range.end.saturating_sub(start)).div_ceil(CHUNK);
        (0..n_chunks)
            .into_par_iter()
            .fold(
                || vec![0u32; n_px],
                |mut acc, c| {
                    let a = start + c * CHUNK;
                    let b = (a + CHUNK).min(range.end);
                    self.accumulate(a..b, &mut acc);
                    acc
                },
            )
            .reduce(
                || vec![0u32; n_px],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    }

    pub fn image(&self, range: Range<u64>) -> Result<FluxImage> {
        let (w, h) = self.target.resolution();
        let n_rays = range.end.saturating_sub(range.start);
        let raw = self.counts(range).into_iter().map(|c| c as f32).collect();
        let img = FluxImage::from_raw(w, h, n_rays, raw, self.target.geometry())?;
        if img.status() == crate::optics::flux::FluxStatus::NoHits {
            log::warn!("trace of {n_rays} rays produced no target hits");
        }
        Ok(img)
    }
}

/// Traces `n_rays` rays of a heliostat aimed at `aim_point` onto `target`.
pub fn trace_flux(
    heliostat: &HeliostatSpec,
    surface: &HeliostatSurface,
    sun: SunState,
    target: &dyn FluxTarget,
    aim_point: Vec3,
    n_rays: u64,
    seed: u64,
) -> Result<FluxImage> {
    if n_rays == 0 {
        return Err(HelioError::invalid("n_rays must be at least 1"));
    }
    Tracer::new(heliostat, surface, sun, target, aim_point, seed)?.image(0..n_rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::solar_vector;
    use crate::optics::target::TargetPlane;

    fn setup() -> (HeliostatSpec, HeliostatSurface, SunState, TargetPlane) {
        let h = HeliostatSpec::new("t", Vec3::new(5.0, 90.0, 2.0), 100.0).unwrap();
        let sun = SunState::new(solar_vector(170.0, 40.0), 0.05).unwrap();
        (h, HeliostatSurface::flat(), sun, TargetPlane::lambertian(36.0))
    }

    #[test]
    fn split_ranges_sum_to_whole() {
        let (h, s, sun, t) = setup();
        let tracer = Tracer::new(&h, &s, sun, &t, t.center, 11).unwrap();
        let whole = tracer.counts(0..50_000);
        let a = tracer.counts(0..17_321);
        let b = tracer.counts(17_321..50_000);
        let summed: Vec<u32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(whole, summed);
    }

    #[test]
    fn same_seed_same_image() {
        let (h, s, sun, t) = setup();
        let a = trace_flux(&h, &s, sun, &t, t.center, 20_000, 5).unwrap();
        let b = trace_flux(&h, &s, sun, &t, t.center, 20_000, 5).unwrap();
        let c = trace_flux(&h, &s, sun, &t, t.center, 20_000, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn zero_rays_rejected() {
        let (h, s, sun, t) = setup();
        assert!(trace_flux(&h, &s, sun, &t, t.center, 0, 1).is_err());
    }

    #[test]
    fn target_facing_away_gets_no_hits() {
        let (h, s, sun, mut t) = setup();
        t.normal = Vec3::new(0.0, -1.0, 0.0);
        let img = trace_flux(&h, &s, sun, &t, t.center, 1000, 1).unwrap();
        assert_eq!(img.status(), crate::optics::flux::FluxStatus::NoHits);
        assert!(img.normalized().data().iter().all(|&v| v == 0.0));
    }
}
