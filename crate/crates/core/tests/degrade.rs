use helioflux::degrade::{
    build_transform, crop_at, CropEdges, RandomizationConfig, Randomizer, IMAGE_TRANSFORMS,
};
use helioflux::optics::Grid;
use helioflux::rng::{self, domain};
use proptest::prelude::*;
use rand::Rng;

fn random_grid(r: &mut impl Rng, w: usize, h: usize) -> Grid {
    let sparse = r.random_range(0.0..0.9);
    let mut g = Grid::from_fn(w, h, |_, _| 0.0);
    for v in g.data_mut() {
        if r.random::<f64>() > sparse {
            *v = r.random_range(0.0..1.0);
        }
    }
    g.normalize_max();
    g
}

fn max_diff(a: &Grid, b: &Grid) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn neutral_magnitudes_leave_images_unchanged() {
    let cfg = RandomizationConfig::neutral();
    let mut r = rng::stream(5, domain::DEGRADE, 0);
    for _ in 0..200 {
        let g = random_grid(&mut r, 32, 24);
        for (name, _) in IMAGE_TRANSFORMS {
            // crop always removes at least one edge; its neutral form is the empty edge set
            let out = if name == "crop" {
                crop_at(&g, CropEdges::default())
            } else {
                build_transform(name, &cfg).unwrap().apply(&g, &mut r)
            };
            assert!(max_diff(&out, &g) < 1e-12, "{name} is not the identity at neutral");
        }
    }
}

#[test]
fn every_transform_keeps_images_valid() {
    let cfg = RandomizationConfig {
        clamp_range: [0.3, 1.0],
        background_noise_max: 0.2,
        contrast_gamma_range: [0.5, 2.0],
        deform_amp_px: 3.0,
        smooth_kernel_px: 4,
        ..Default::default()
    };
    let transforms: Vec<_> = IMAGE_TRANSFORMS.iter().map(|(n, _)| build_transform(n, &cfg).unwrap()).collect();
    let mut r = rng::stream(6, domain::DEGRADE, 0);
    for i in 0..1000 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let g = if i % 50 == 0 { Grid::from_fn(w, h, |_, _| 0.0) } else { random_grid(&mut r, w, h) };
        for t in &transforms {
            let out = t.apply(&g, &mut r);
            assert_eq!((out.width(), out.height()), (w, h), "{}", t.name());
            assert!(out.is_valid_normalized(), "{} broke a {w}x{h} image", t.name());
        }
    }
}

#[test]
fn unknown_transform_is_rejected() {
    assert!(build_transform("sharpen", &RandomizationConfig::default()).is_err());
    let cfg = RandomizationConfig {
        enabled: vec!["clamp".into(), "nope".into()],
        ..Default::default()
    };
    assert!(Randomizer::new(cfg).is_err());
}

#[test]
fn crop_of_every_edge_subset_stays_in_range() {
    let mut r = rng::stream(8, domain::DEGRADE, 1);
    let g = random_grid(&mut r, 16, 16);
    for mask in 1..16u8 {
        let out = crop_at(&g, CropEdges::from_mask(mask));
        assert!(out.is_valid_normalized());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_preserves_zero_images(w in 1usize..20, h in 1usize..20, k in 1usize..6) {
        let cfg = RandomizationConfig { smooth_kernel_px: k, ..Default::default() };
        let g = Grid::from_fn(w, h, |_, _| 0.0);
        let out = build_transform("smooth", &cfg).unwrap().apply(&g, &mut rng::stream(0, domain::DEGRADE, 0));
        prop_assert!(out.data().iter().all(|v| *v == 0.0));
    }
}
