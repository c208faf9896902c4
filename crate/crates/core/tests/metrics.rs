use helioflux::metrics::{
    distance_trend, flux_accuracy, overlap_accuracy, ssim_band, summarize, surface_mae, surface_ssim, HeliostatScore,
    SsimBand, SsimConstants,
};
use helioflux::nurbs::{GRID, MAX_ABS_Z_MM};
use helioflux::optics::{FluxImage, TargetGeometry, TargetPlane};
use helioflux::rng::{self, domain};
use helioflux::HeliostatSurface;
use rand::Rng;

fn random_surface(r: &mut impl Rng) -> HeliostatSurface {
    let scale = r.random_range(0.01..MAX_ABS_Z_MM);
    let offset = r.random_range(-0.5..0.5) * scale;
    let v: Vec<f64> = (0..4 * GRID * GRID)
        .map(|_| (offset + r.random_range(-scale..scale)).clamp(-MAX_ABS_Z_MM, MAX_ABS_Z_MM))
        .collect();
    HeliostatSurface::from_flat(&v).unwrap()
}

/// Per-facet control points gathered straight from the facet grids.
fn points(s: &HeliostatSurface) -> Vec<f64> {
    let mut out = Vec::new();
    for f in &s.facets {
        for row in f.control_z() {
            out.extend_from_slice(row);
        }
    }
    out
}

fn brute_mae(a: &HeliostatSurface, b: &HeliostatSurface) -> f64 {
    let (pa, pb) = (points(a), points(b));
    let mut total = 0.0;
    for i in 0..pa.len() {
        total += (pa[i] - pb[i]).abs();
    }
    total / pa.len() as f64
}

/// Textbook SSIM with moments from raw sums.
fn brute_ssim(a: &HeliostatSurface, b: &HeliostatSurface, l: f64) -> f64 {
    let (pa, pb) = (points(a), points(b));
    let n = pa.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..pa.len() {
        sa += pa[i];
        sb += pb[i];
    }
    let (ma, mb) = (sa / n, sb / n);
    for i in 0..pa.len() {
        saa += (pa[i] - ma).powi(2);
        sbb += (pb[i] - mb).powi(2);
        sab += (pa[i] - ma) * (pb[i] - mb);
    }
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let (va, vb, cov) = (saa / n, sbb / n, sab / n);
    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

#[test]
fn surface_metrics_match_brute_force() {
    let mut r = rng::stream(21, domain::EVAL, 0);
    let c = SsimConstants::default();
    for _ in 0..1000 {
        let (a, b) = (random_surface(&mut r), random_surface(&mut r));
        assert!((surface_mae(&a, &b) - brute_mae(&a, &b)).abs() < 1e-12);
        let s = surface_ssim(&a, &b, c).unwrap();
        assert!((s - brute_ssim(&a, &b, c.dynamic_range)).abs() < 1e-12);
        assert!((surface_ssim(&a, &a, c).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn constant_offset_mae_is_the_offset() {
    let a = HeliostatSurface::flat();
    let b = HeliostatSurface::from_flat(&vec![0.37; 256]).unwrap();
    assert!((surface_mae(&a, &b) - 0.37).abs() < 1e-15);
}

#[test]
fn two_pixel_overlap_example() {
    assert!((overlap_accuracy(&[0.75, 0.25], &[0.25, 0.75]).unwrap() - 0.5).abs() < 1e-15);
    let geometry = TargetGeometry::Plane(TargetPlane::lambertian(40.0));
    let img = |v: [f32; 2]| {
        let mut raw = vec![0.0f32; 64 * 64];
        raw[..2].copy_from_slice(&v);
        FluxImage::from_raw(64, 64, 4, raw, geometry).unwrap()
    };
    let acc = flux_accuracy(&img([3.0, 1.0]), &img([1.0, 3.0])).unwrap();
    assert!((acc - 0.5).abs() < 1e-15);
}

#[test]
fn ssim_bands_and_misprediction() {
    assert_eq!(ssim_band(0.9), (SsimBand::VeryHigh, false));
    assert_eq!(ssim_band(0.6), (SsimBand::High, false));
    assert_eq!(ssim_band(0.3), (SsimBand::Medium, false));
    assert_eq!(ssim_band(0.1), (SsimBand::NoSimilarity, true));
    assert_eq!(ssim_band(-0.5), (SsimBand::Negative, true));
}

#[test]
fn distance_trend_bins_cover_all_scores() {
    let mut r = rng::stream(2, domain::EVAL, 1);
    let scores: Vec<HeliostatScore> = (0..200)
        .map(|_| HeliostatScore {
            distance_m: r.random_range(50.0..250.0),
            mae_mm: r.random_range(0.0..1.0),
            ssim: r.random_range(-1.0..1.0),
        })
        .collect();
    let bins = distance_trend(&scores, 50.0).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 200);
    let all = summarize(&scores.iter().map(|s| s.mae_mm).collect::<Vec<_>>()).unwrap();
    assert!(bins.iter().all(|b| b.mae.min >= all.min && b.mae.max <= all.max));
}
