use helioflux::datagen::{
    augment_blend, augment_rotate180, scatter_aim, synth_surface, SurfacePrior,
};
use helioflux::geometry::{Vec3, FACET_WIDTH, FACET_HEIGHT};
use helioflux::nurbs::{ControlGrid, FacetSurface, GRID, MAX_ABS_Z_MM};
use helioflux::rng::{self, domain};
use helioflux::HeliostatSurface;
use proptest::prelude::*;
use rand::Rng;

fn random_facet(seed: u64) -> FacetSurface {
    let mut r = rng::stream(seed, domain::SURFACE, 77);
    let scale = r.random_range(0.1..5.0);
    let mut c: ControlGrid = [[0.0; GRID]; GRID];
    for row in c.iter_mut() {
        for z in row.iter_mut() {
            *z = r.random_range(-scale..scale);
        }
    }
    FacetSurface::from_control(c)
}

/// Lifted point `(x, y, z)` in metres.
fn lifted(s: &FacetSurface, u: f64, v: f64) -> [f64; 3] {
    [(u - 0.5) * FACET_WIDTH, (v - 0.5) * FACET_HEIGHT, s.eval(u, v).z_mm * 1e-3]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[test]
fn analytic_normals_match_tangent_cross_products() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let s = random_facet(seed);
        let mut r = rng::stream(seed, domain::SAMPLE, 5);
        for _ in 0..25 {
            let (u, v) = (r.random_range(h..1.0 - h), r.random_range(h..1.0 - h));
            let (pu0, pu1) = (lifted(&s, u - h, v), lifted(&s, u + h, v));
            let (pv0, pv1) = (lifted(&s, u, v - h), lifted(&s, u, v + h));
            let tu: Vec<f64> = (0..3).map(|k| (pu1[k] - pu0[k]) / (2.0 * h)).collect();
            let tv: Vec<f64> = (0..3).map(|k| (pv1[k] - pv0[k]) / (2.0 * h)).collect();
            let n = cross([tu[0], tu[1], tu[2]], [tv[0], tv[1], tv[2]]);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let analytic = s.eval(u, v).normal(FACET_WIDTH, FACET_HEIGHT).to_array();
            for k in 0..3 {
                worst = worst.max((n[k] / len - analytic[k]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max normal component error {worst}");
}

#[test]
fn flat_facet_normal_is_exactly_vertical() {
    let s = FacetSurface::flat();
    for (u, v) in [(0.0, 0.0), (0.3, 0.7), (0.5, 0.5), (1.0, 1.0)] {
        assert_eq!(s.eval(u, v).normal(FACET_WIDTH, FACET_HEIGHT), Vec3::new(0.0, 0.0, 1.0));
    }
}

#[test]
fn zero_prior_gives_flat_surface() {
    let s = synth_surface(&SurfacePrior::zero(), &mut rng::stream(1, domain::SURFACE, 0));
    assert!(s.flatten().iter().all(|&z| z == 0.0));
}

#[test]
fn tilt_only_prior_is_affine_per_facet() {
    let prior = SurfacePrior {
        canting_tilt_sigma_mrad: 2.0,
        ..SurfacePrior::zero()
    };
    for seed in 0..20 {
        let s = synth_surface(&prior, &mut rng::stream(seed, domain::SURFACE, 0));
        for f in &s.facets {
            let c = f.control_z();
            // affine iff every second difference vanishes
            for i in 0..GRID {
                for j in 0..GRID {
                    if i + 2 < GRID {
                        assert!((c[i + 2][j] - 2.0 * c[i + 1][j] + c[i][j]).abs() < 1e-9);
                    }
                    if j + 2 < GRID {
                        assert!((c[i][j + 2] - 2.0 * c[i][j + 1] + c[i][j]).abs() < 1e-9);
                    }
                    if i + 1 < GRID && j + 1 < GRID {
                        assert!((c[i + 1][j + 1] - c[i + 1][j] - c[i][j + 1] + c[i][j]).abs() < 1e-9);
                    }
                }
            }
        }
    }
}

/// Expected control-point variance of the default prior, averaged over the
/// grid: tilt `s^2 (x^2 + y^2)`, bow `b^2 (x^4 + y^4)` in the unit square
/// coordinates, a sine with uniform phase contributes `a^2 / 2`, plus noise.
fn analytic_variance(p: &SurfacePrior) -> f64 {
    let mut total = 0.0;
    for i in 0..GRID {
        for j in 0..GRID {
            let (s, t) = (i as f64 / 7.0, j as f64 / 7.0);
            let (x, y) = ((s - 0.5) * FACET_WIDTH, (t - 0.5) * FACET_HEIGHT);
            let (xh, yh) = (2.0 * s - 1.0, 2.0 * t - 1.0);
            total += p.canting_tilt_sigma_mrad.powi(2) * (x * x + y * y)
                + p.bow_amp_sigma_mm.powi(2) * (xh.powi(4) + yh.powi(4))
                + 0.5 * p.wave_amp_sigma_mm.powi(2)
                + p.noise_sigma_mm.powi(2);
        }
    }
    total / (GRID * GRID) as f64
}

#[test]
fn prior_spread_matches_variance_addition() {
    let prior = SurfacePrior::default();
    let mut r = rng::stream(9, domain::SURFACE, 1);
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..10_000 {
        for z in synth_surface(&prior, &mut r).flatten() {
            sum += z;
            sq += z * z;
            n += 1.0;
        }
    }
    let var = sq / n - (sum / n).powi(2);
    let expected = analytic_variance(&prior);
    let rel = (var.sqrt() - expected.sqrt()).abs() / expected.sqrt();
    assert!(rel < 0.15, "std {} vs analytic {}", var.sqrt(), expected.sqrt());
}

#[test]
fn aim_scatter_radius_mean_is_two_thirds() {
    let c = Vec3::new(0.0, 0.0, 40.0);
    let mut r = rng::stream(4, domain::SAMPLE, 0);
    let n = 1_000_000;
    let mut total = 0.0;
    for _ in 0..n {
        let d = (scatter_aim(c, &mut r) - c).norm();
        assert!(d <= 1.0);
        total += d;
    }
    let mean = total / n as f64;
    assert!((mean - 2.0 / 3.0).abs() < 0.01 * 2.0 / 3.0, "mean radius {mean}");
}

fn surface_strategy() -> impl Strategy<Value = HeliostatSurface> {
    prop::collection::vec(-MAX_ABS_Z_MM..MAX_ABS_Z_MM, 4 * GRID * GRID)
        .prop_map(|v| HeliostatSurface::from_flat(&v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blend_is_convex(a in surface_strategy(), b in surface_strategy(), lambda in 0.0f64..=1.0) {
        let m = augment_blend(&a, &b, lambda).unwrap();
        prop_assert!(m.validate().is_ok());
        for ((x, y), z) in a.flatten().iter().zip(b.flatten()).zip(m.flatten()) {
            prop_assert!(x.min(y) - 1e-12 <= z && z <= x.max(y) + 1e-12);
        }
    }

    #[test]
    fn rotate180_is_an_involution(a in surface_strategy()) {
        let r = augment_rotate180(&a);
        prop_assert!(r.validate().is_ok());
        prop_assert_eq!(augment_rotate180(&r), a);
    }

    #[test]
    fn flat_round_trip(a in surface_strategy()) {
        prop_assert_eq!(HeliostatSurface::from_flat(&a.flatten()).unwrap(), a.clone());
        prop_assert_eq!(HeliostatSurface::from_map(&a.to_map()).unwrap(), a);
    }
}
