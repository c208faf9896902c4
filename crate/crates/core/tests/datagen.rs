use std::collections::HashSet;
use std::fs;
use std::path::Path;

use helioflux::datagen::{
    generate_dataset, generate_field, Dataset, DatasetSample, GenerateConfig, Split, MANIFEST_FILE,
};
use helioflux::optics::CurvedReceiver;

fn small_config() -> GenerateConfig {
    GenerateConfig {
        train_samples: 6,
        eval_samples_per_heliostat: 1,
        observations_per_sample: 2,
        rays_per_observation: 2_000,
        base_surfaces: 4,
        ..Default::default()
    }
}

fn build(dir: &Path, seed: u64) -> Dataset {
    let field = generate_field(6, seed, &CurvedReceiver::default()).unwrap();
    generate_dataset(&field, &small_config(), seed, dir).unwrap();
    Dataset::open(dir).unwrap()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let da = build(a.path(), 17);
    build(b.path(), 17);
    assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    for e in &da.manifest.samples {
        assert_eq!(fs::read(a.path().join(&e.file)).unwrap(), fs::read(b.path().join(&e.file)).unwrap());
    }
}

#[test]
fn different_seeds_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (build(a.path(), 1), build(b.path(), 2));
    assert_ne!(da.manifest.config_hash, db.manifest.config_hash);
}

#[test]
fn splits_are_disjoint_by_heliostat() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 3);
    let m = &ds.manifest;
    let sets: Vec<HashSet<&String>> = m.split_heliostats.iter().map(|v| v.iter().collect()).collect();
    for i in 0..3 {
        assert!(!sets[i].is_empty());
        for j in i + 1..3 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    for (k, split) in Split::ALL.iter().enumerate() {
        for e in m.entries(*split) {
            assert!(sets[k].contains(&e.heliostat_id), "{} sample from a foreign heliostat", split.name());
        }
    }
    assert_eq!(m.counts.train, 6);
    assert_eq!(m.counts.train + m.counts.val + m.counts.test, m.samples.len());
}

#[test]
fn samples_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 4);
    for e in &ds.manifest.samples {
        let s = ds.load(e).unwrap();
        s.validate().unwrap();
        assert_eq!(s.observations.len(), 2);
        assert_eq!(s.heliostat.id, e.heliostat_id);
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len() as u64, e.bytes);
        assert_eq!(DatasetSample::from_bytes(&bytes).unwrap(), s);
        for o in &s.observations {
            assert!(o.flux.normalized().is_valid_normalized());
            assert_eq!(o.flux.ray_count(), 2_000);
        }
    }
}

#[test]
fn truncated_sample_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build(dir.path(), 5);
    let bytes = fs::read(dir.path().join(&ds.manifest.samples[0].file)).unwrap();
    for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
        assert!(DatasetSample::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn field_respects_range_and_spacing() {
    let rx = CurvedReceiver::default();
    let field = generate_field(30, 9, &rx).unwrap();
    assert_eq!(field.len(), 30);
    for (i, a) in field.iter().enumerate() {
        let r = (a.position.x.powi(2) + a.position.y.powi(2)).sqrt();
        assert!((50.0..=250.0).contains(&r), "radius {r}");
        assert!(a.position.y > 0.0);
        for b in &field[i + 1..] {
            assert!((a.position - b.position).norm() >= 5.0);
        }
    }
}

#[test]
fn invalid_config_is_rejected() {
    let field = generate_field(6, 0, &CurvedReceiver::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenerateConfig { observations_per_sample: 0, ..small_config() };
    assert!(generate_dataset(&field, &cfg, 0, dir.path()).is_err());
    let cfg = GenerateConfig { split_fractions: [0.6, 0.4], ..small_config() };
    assert!(generate_dataset(&field, &cfg, 0, dir.path()).is_err());
    assert!(generate_dataset(&field[..2], &small_config(), 0, dir.path()).is_err());
}
