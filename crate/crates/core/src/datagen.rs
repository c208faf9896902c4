//! Procedural surfaces, surface augmentation, sun sampling and dataset files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HelioError, Result};
use crate::geometry::{solar_vector, FieldRecord, HeliostatSpec, SunState, Vec3, CSR_MAX, FACET_COUNT, FACET_HEIGHT, FACET_WIDTH, MIN_FOCAL_DISTANCE};
use crate::nurbs::{HeliostatSurface, GRID};
use crate::optics::{trace_flux, CurvedReceiver, FluxImage, TargetPlane};
use crate::rng::{self, domain, mix64, SimRng};

pub const MAX_OBSERVATIONS: usize = 8;
pub const SCHEMA_VERSION: u32 = 1;
/// Obliquity bound on the solar declination, degrees.
pub const MAX_DECLINATION_DEG: f64 = 23.44;
pub const AIM_SCATTER_RADIUS_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfacePrior {
    pub canting_tilt_sigma_mrad: f64,
    pub bow_amp_sigma_mm: f64,
    pub wave_amp_sigma_mm: f64,
    pub wave_freq_range: [f64; 2],
    pub noise_sigma_mm: f64,
}

impl Default for SurfacePrior {
    fn default() -> Self {
        SurfacePrior {
            canting_tilt_sigma_mrad: 0.5,
            bow_amp_sigma_mm: 0.3,
            wave_amp_sigma_mm: 0.15,
            wave_freq_range: [1.0, 3.0],
            noise_sigma_mm: 0.02,
        }
    }
}

impl SurfacePrior {
    pub fn zero() -> Self {
        SurfacePrior {
            canting_tilt_sigma_mrad: 0.0,
            bow_amp_sigma_mm: 0.0,
            wave_amp_sigma_mm: 0.0,
            wave_freq_range: [1.0, 1.0],
            noise_sigma_mm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.canting_tilt_sigma_mrad,
            self.bow_amp_sigma_mm,
            self.wave_amp_sigma_mm,
            self.noise_sigma_mm,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(HelioError::invalid("surface prior sigmas must be finite and >= 0"));
        }
        let [lo, hi] = self.wave_freq_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(HelioError::invalid("wave frequency range must satisfy 0 <= lo <= hi"));
        }
        Ok(())
    }
}

/// Control-point coordinate in `[0, 1]` for grid index `i`.
#[inline]
fn grid_coord(i: usize) -> f64 {
    i as f64 / (GRID - 1) as f64
}

fn gauss(rng: &mut SimRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * rng.sample::<f64, _>(StandardNormal)
}

/// One random surface: per facet a tilt plane, a quadratic bow, a single
/// sinusoidal wave and white noise, clipped to the control range.
pub fn synth_surface(prior: &SurfacePrior, rng: &mut SimRng) -> HeliostatSurface {
    let mut grids = [[[0.0; GRID]; GRID]; FACET_COUNT];
    for g in grids.iter_mut() {
        // mrad times metres is mm
        let sx = gauss(rng, prior.canting_tilt_sigma_mrad);
        let sy = gauss(rng, prior.canting_tilt_sigma_mrad);
        let bx = gauss(rng, prior.bow_amp_sigma_mm);
        let by = gauss(rng, prior.bow_amp_sigma_mm);
        let amp = gauss(rng, prior.wave_amp_sigma_mm);
        let [f_lo, f_hi] = prior.wave_freq_range;
        let freq = if f_hi > f_lo { rng.random_range(f_lo..f_hi) } else { f_lo };
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, row) in g.iter_mut().enumerate() {
            for (j, z) in row.iter_mut().enumerate() {
                let (s, t) = (grid_coord(i), grid_coord(j));
                let (x, y) = ((s - 0.5) * FACET_WIDTH, (t - 0.5) * FACET_HEIGHT);
                let (xh, yh) = (2.0 * s - 1.0, 2.0 * t - 1.0);
                let wave = amp * (std::f64::consts::TAU * freq * (dir.cos() * s + dir.sin() * t) + phase).sin();
                *z = sx * x + sy * y + bx * xh * xh + by * yh * yh + wave + gauss(rng, prior.noise_sigma_mm);
            }
        }
    }
    let mut surface = HeliostatSurface::from_controls(grids);
    for f in surface.facets.iter_mut() {
        f.clip();
    }
    surface
}

/// Half-turn of the whole heliostat: facet `k` moves to `3 - k` and each
/// control grid is reversed along both axes.
pub fn augment_rotate180(s: &HeliostatSurface) -> HeliostatSurface {
    let mut grids = [[[0.0; GRID]; GRID]; FACET_COUNT];
    for (k, g) in grids.iter_mut().enumerate() {
        let src = s.facets[FACET_COUNT - 1 - k].control_z();
        for i in 0..GRID {
            for j in 0..GRID {
                g[i][j] = src[GRID - 1 - i][GRID - 1 - j];
            }
        }
    }
    HeliostatSurface::from_controls(grids)
}

pub fn augment_blend(a: &HeliostatSurface, b: &HeliostatSurface, lambda: f64) -> Result<HeliostatSurface> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(HelioError::invalid(format!("blend weight {lambda} outside [0, 1]")));
    }
    let (fa, fb) = (a.flatten(), b.flatten());
    let mixed: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect();
    HeliostatSurface::from_flat(&mixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

impl Default for Location {
    fn default() -> Self {
        Location {
            latitude_deg: 50.91,
            longitude_deg: 6.39,
        }
    }
}

/// Solar declination (degrees) at which the sun stands at the given
/// azimuth and elevation for an observer at `latitude_deg`.
pub fn declination_for(latitude_deg: f64, azimuth_deg: f64, elevation_deg: f64) -> f64 {
    let (phi, a, e) = (latitude_deg.to_radians(), azimuth_deg.to_radians(), elevation_deg.to_radians());
    let s = phi.sin() * e.sin() + phi.cos() * e.cos() * a.cos();
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

/// A sun position reachable at some time of the year.
pub fn in_solar_envelope(location: &Location, azimuth_deg: f64, elevation_deg: f64) -> bool {
    elevation_deg > 0.0 && declination_for(location.latitude_deg, azimuth_deg, elevation_deg).abs() <= MAX_DECLINATION_DEG
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl GridNode {
    pub fn direction(&self) -> Vec3 {
        solar_vector(self.azimuth_deg, self.elevation_deg)
    }
}

/// Feasible nodes of the equidistant azimuth/elevation grid.
pub fn sun_grid_nodes(location: &Location, az_step_deg: f64, el_step_deg: f64) -> Result<Vec<GridNode>> {
    if !(az_step_deg > 0.0 && el_step_deg > 0.0) {
        return Err(HelioError::invalid("sun grid steps must be positive"));
    }
    let mut nodes = Vec::new();
    let n_az = (360.0 / az_step_deg).ceil() as usize;
    for ia in 0..n_az {
        let az = ia as f64 * az_step_deg;
        if az >= 360.0 {
            break;
        }
        let mut ie = 1;
        loop {
            let el = ie as f64 * el_step_deg;
            if el >= 90.0 {
                break;
            }
            if in_solar_envelope(location, az, el) {
                nodes.push(GridNode {
                    azimuth_deg: az,
                    elevation_deg: el,
                });
            }
            ie += 1;
        }
    }
    if nodes.is_empty() {
        return Err(HelioError::invalid("sun grid has no feasible node"));
    }
    Ok(nodes)
}

pub fn sun_grid(location: &Location, az_step_deg: f64, el_step_deg: f64) -> Result<Vec<Vec3>> {
    Ok(sun_grid_nodes(location, az_step_deg, el_step_deg)?
        .iter()
        .map(GridNode::direction)
        .collect())
}

/// Nodes strictly above the median node elevation.
pub fn summer_nodes(nodes: &[GridNode]) -> Vec<GridNode> {
    let mut els: Vec<f64> = nodes.iter().map(|n| n.elevation_deg).collect();
    els.sort_by(f64::total_cmp);
    let median = if els.is_empty() {
        0.0
    } else if els.len() % 2 == 1 {
        els[els.len() / 2]
    } else {
        0.5 * (els[els.len() / 2 - 1] + els[els.len() / 2])
    };
    nodes.iter().copied().filter(|n| n.elevation_deg > median).collect()
}

/// Uniform point on the disc of radius 1 m around `center` in the vertical
/// plane spanned by east and up.
pub fn scatter_aim(center: Vec3, rng: &mut SimRng) -> Vec3 {
    let r = AIM_SCATTER_RADIUS_M * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    center + Vec3::EAST * (r * phi.cos()) + Vec3::UP * (r * phi.sin())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sun: SunState,
    pub aim_point: Vec3,
    pub flux: FluxImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub heliostat: HeliostatSpec,
    pub truth: HeliostatSurface,
    pub observations: Vec<Observation>,
}

impl DatasetSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if !(1..=MAX_OBSERVATIONS).contains(&n) {
            return Err(HelioError::invalid(format!(
                "a sample needs 1..={MAX_OBSERVATIONS} observations, got {n}"
            )));
        }
        self.truth.validate()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records: Vec<Vec<u8>> = self.observations.iter().map(|o| o.flux.to_bytes()).collect();
        let header = SampleHeader {
            heliostat: FieldRecord::from(&self.heliostat),
            truth: self.truth.clone(),
            observations: self
                .observations
                .iter()
                .zip(&records)
                .map(|(o, r)| ObservationHeader {
                    sun: o.sun,
                    aim_point: o.aim_point,
                    record_bytes: r.len() as u64,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| HelioError::json("sample header", e))?;
        let mut out = Vec::with_capacity(4 + json.len() + records.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for r in &records {
            out.extend_from_slice(r);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len = bytes
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| HelioError::Format("sample file too short".into()))?;
        let json = bytes
            .get(4..4 + len)
            .ok_or_else(|| HelioError::Format("sample header truncated".into()))?;
        let header: SampleHeader = serde_json::from_slice(json).map_err(|e| HelioError::json("sample header", e))?;
        let mut pos = 4 + len;
        let mut observations = Vec::with_capacity(header.observations.len());
        for oh in &header.observations {
            let end = pos + oh.record_bytes as usize;
            let rec = bytes
                .get(pos..end)
                .ok_or_else(|| HelioError::Format("flux record truncated".into()))?;
            observations.push(Observation {
                sun: oh.sun,
                aim_point: oh.aim_point,
                flux: FluxImage::from_bytes(rec)?,
            });
            pos = end;
        }
        if pos != bytes.len() {
            return Err(HelioError::Format("trailing bytes after last flux record".into()));
        }
        let sample = DatasetSample {
            heliostat: header.heliostat.to_spec()?,
            truth: header.truth,
            observations,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HelioError::io(path, e))?;
        DatasetSample::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationHeader {
    sun: SunState,
    aim_point: Vec3,
    record_bytes: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleHeader {
    heliostat: FieldRecord,
    truth: HeliostatSurface,
    observations: Vec<ObservationHeader>,
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| HelioError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| HelioError::io(&tmp, e))?;
    file.sync_all().map_err(|e| HelioError::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| HelioError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub location: Location,
    pub prior: SurfacePrior,
    /// Samples drawn for the training heliostats.
    pub train_samples: usize,
    /// Samples per validation or test heliostat, each with its own surface.
    pub eval_samples_per_heliostat: usize,
    pub observations_per_sample: usize,
    pub rays_per_observation: u64,
    /// Heliostat fractions for train and val; test takes the rest.
    pub split_fractions: [f64; 2],
    /// Prior draws behind the augmented training surfaces.
    pub base_surfaces: usize,
    pub target_heights_m: [f64; 2],
    pub az_step_deg: f64,
    pub el_step_deg: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            location: Location::default(),
            prior: SurfacePrior::default(),
            train_samples: 2000,
            eval_samples_per_heliostat: 4,
            observations_per_sample: 4,
            rays_per_observation: 20_000,
            split_fractions: [0.6, 0.2],
            base_surfaces: 400,
            target_heights_m: [36.0, 43.0],
            az_step_deg: 10.0,
            el_step_deg: 5.0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if !(1..=MAX_OBSERVATIONS).contains(&self.observations_per_sample) {
            return Err(HelioError::invalid(format!(
                "observations_per_sample must be in 1..={MAX_OBSERVATIONS}"
            )));
        }
        if self.train_samples == 0 || self.eval_samples_per_heliostat == 0 {
            return Err(HelioError::invalid("sample counts must be positive"));
        }
        if self.rays_per_observation == 0 {
            return Err(HelioError::invalid("rays_per_observation must be positive"));
        }
        if self.base_surfaces == 0 {
            return Err(HelioError::invalid("base_surfaces must be positive"));
        }
        let [ft, fv] = self.split_fractions;
        if !(ft > 0.0 && fv >= 0.0 && ft + fv < 1.0) {
            return Err(HelioError::invalid("split fractions must leave room for a test split"));
        }
        if self.target_heights_m.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(HelioError::invalid("target heights must be positive"));
        }
        if !(-90.0..=90.0).contains(&self.location.latitude_deg) {
            return Err(HelioError::invalid("latitude outside [-90, 90]"));
        }
        sun_grid_nodes(&self.location, self.az_step_deg, self.el_step_deg)?;
        Ok(())
    }

    pub fn target_for(&self, heliostat_index: usize) -> TargetPlane {
        TargetPlane::lambertian(self.target_heights_m[heliostat_index % 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub split: Split,
    pub heliostat_id: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: GenerateConfig,
    pub location: Location,
    pub field: Vec<FieldRecord>,
    pub split_heliostats: [Vec<String>; 3],
    pub counts: SplitCounts,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HelioError::io(&path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| HelioError::json(format!("manifest {}", path.display()), e))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(HelioError::Format(format!(
                "manifest schema {} unsupported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

/// Hex SHA-256 of a canonical JSON rendering.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value).map_err(|e| HelioError::json("hashing", e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn config_hash(config: &GenerateConfig, field: &[HeliostatSpec], seed: u64) -> Result<String> {
    let records: Vec<FieldRecord> = field.iter().map(FieldRecord::from).collect();
    hash_json(&(config, &records, seed))
}

/// Heliostat indices per split, after a seeded shuffle of the field.
pub fn assign_splits(n: usize, fractions: [f64; 2], seed: u64) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, domain::FIELD, 1);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_train = ((fractions[0] * n as f64).round() as usize).clamp(1, n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    [train, val, test]
}

/// Training surface `k`: a base draw, its half-turn, or a blend of two.
pub fn training_surface(pool: &[HeliostatSurface], rng: &mut SimRng) -> HeliostatSurface {
    let a = &pool[rng.random_range(0..pool.len())];
    match rng.random_range(0..3u32) {
        0 => a.clone(),
        1 => augment_rotate180(a),
        _ => {
            let b = &pool[rng.random_range(0..pool.len())];
            let lambda = rng.random::<f64>();
            augment_blend(a, b, lambda).expect("lambda drawn from [0, 1)")
        }
    }
}

/// Observation set for one heliostat and surface. Flux seeds are derived from
/// `ray_seed` and the observation index.
pub fn observe(
    heliostat: &HeliostatSpec,
    surface: &HeliostatSurface,
    target: &TargetPlane,
    nodes: &[GridNode],
    count: usize,
    rays: u64,
    ray_seed: u64,
    rng: &mut SimRng,
) -> Result<Vec<Observation>> {
    if nodes.is_empty() {
        return Err(HelioError::invalid("no sun positions to observe from"));
    }
    (0..count)
        .map(|o| {
            let node = nodes[rng.random_range(0..nodes.len())];
            let csr = rng.random_range(0.0..=CSR_MAX);
            let sun = SunState::new(node.direction(), csr)?;
            let aim_point = scatter_aim(target.center, rng);
            let flux = trace_flux(heliostat, surface, sun, target, aim_point, rays, mix64(ray_seed ^ o as u64))?;
            Ok(Observation { sun, aim_point, flux })
        })
        .collect()
}

struct Plan {
    split: Split,
    heliostat: usize,
}

pub fn sample_file_name(index: usize) -> String {
    format!("samples/{index:06}.bin")
}

/// Generates a dataset directory: `manifest.json` plus one file per sample.
pub fn generate_dataset(
    field: &[HeliostatSpec],
    config: &GenerateConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    if field.len() < 3 {
        return Err(HelioError::invalid("field needs at least 3 heliostats for three splits"));
    }
    let splits = assign_splits(field.len(), config.split_fractions, seed);
    if splits.iter().any(Vec::is_empty) {
        return Err(HelioError::invalid("a split received no heliostats; adjust split_fractions"));
    }
    let nodes = sun_grid_nodes(&config.location, config.az_step_deg, config.el_step_deg)?;

    let mut surface_rng = rng::stream(seed, domain::SURFACE, 0);
    let pool: Vec<HeliostatSurface> = (0..config.base_surfaces)
        .map(|_| synth_surface(&config.prior, &mut surface_rng))
        .collect();

    let mut plan = Vec::new();
    for k in 0..config.train_samples {
        plan.push(Plan {
            split: Split::Train,
            heliostat: splits[0][k % splits[0].len()],
        });
    }
    for (split, members) in [(Split::Val, &splits[1]), (Split::Test, &splits[2])] {
        for &h in members {
            for _ in 0..config.eval_samples_per_heliostat {
                plan.push(Plan { split, heliostat: h });
            }
        }
    }

    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| HelioError::io(&samples_dir, e))?;
    log::info!(
        "generating {} samples ({} observations x {} rays each)",
        plan.len(),
        config.observations_per_sample,
        config.rays_per_observation
    );

    let entries: Vec<ManifestEntry> = plan
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let mut rng = rng::stream(seed, domain::SAMPLE, index as u64);
            let truth = match p.split {
                Split::Train => training_surface(&pool, &mut rng),
                // held-out surfaces never enter the training pool
                _ => synth_surface(&config.prior, &mut rng),
            };
            let heliostat = &field[p.heliostat];
            let observations = observe(
                heliostat,
                &truth,
                &config.target_for(p.heliostat),
                &nodes,
                config.observations_per_sample,
                config.rays_per_observation,
                mix64(seed ^ mix64(index as u64 + 1)),
                &mut rng,
            )?;
            let sample = DatasetSample {
                heliostat: heliostat.clone(),
                truth,
                observations,
            };
            let file = sample_file_name(index);
            let bytes = sample.to_bytes()?;
            write_atomic(&out_dir.join(&file), &bytes)?;
            Ok(ManifestEntry {
                index,
                file,
                split: p.split,
                heliostat_id: heliostat.id.clone(),
                bytes: bytes.len() as u64,
            })
        })
        .collect::<Result<_>>()?;

    let ids = |idx: &Vec<usize>| idx.iter().map(|&i| field[i].id.clone()).collect::<Vec<_>>();
    let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        seed,
        config_hash: config_hash(config, field, seed)?,
        config: config.clone(),
        location: config.location,
        field: field.iter().map(FieldRecord::from).collect(),
        split_heliostats: [ids(&splits[0]), ids(&splits[1]), ids(&splits[2])],
        counts: SplitCounts {
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
        },
        samples: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HelioError::json("manifest", e))?;
    write_atomic(&out_dir.join(MANIFEST_FILE), (text + "\n").as_bytes())?;
    Ok(manifest)
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest: DatasetManifest::read(dir)?,
        })
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<DatasetSample> {
        DatasetSample::read(&self.dir.join(&entry.file))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<DatasetSample>> {
        let entries: Vec<&ManifestEntry> = self.manifest.entries(split).collect();
        entries.par_iter().map(|e| self.load(e)).collect()
    }

    pub fn field(&self) -> Result<Vec<HeliostatSpec>> {
        self.manifest.field.iter().map(FieldRecord::to_spec).collect()
    }
}

/// Procedural field: `n` heliostats north of the tower in a fan between 50 m
/// and 250 m, at least 5 m apart. Focal distance is the slant range to the
/// receiver, clamped to the minimum.
pub fn generate_field(n: usize, seed: u64, receiver: &CurvedReceiver) -> Result<Vec<HeliostatSpec>> {
    if n == 0 {
        return Err(HelioError::invalid("field needs at least one heliostat"));
    }
    const R_MIN: f64 = 50.0;
    const R_MAX: f64 = 250.0;
    const HALF_FAN_DEG: f64 = 60.0;
    const MIN_SPACING: f64 = 5.0;
    const PIVOT_HEIGHT: f64 = 2.0;
    let mut rng = rng::stream(seed, domain::FIELD, 0);
    let mut positions: Vec<Vec3> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while positions.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(HelioError::invalid(format!("cannot place {n} heliostats in the field fan")));
        }
        let r = rng.random_range(R_MIN * R_MIN..R_MAX * R_MAX).sqrt();
        let a = rng.random_range(-HALF_FAN_DEG..HALF_FAN_DEG).to_radians();
        let p = Vec3::new(r * a.sin(), r * a.cos(), PIVOT_HEIGHT);
        if positions.iter().all(|q| (*q - p).norm() >= MIN_SPACING) {
            positions.push(p);
        }
    }
    let apex = receiver.apex();
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let focal = (apex - p).norm().max(MIN_FOCAL_DISTANCE);
            HeliostatSpec::new(format!("H{:03}", i + 1), p, focal)
        })
        .collect()
}

/// Element-wise mean of the given surfaces' control points.
pub fn mean_surface(surfaces: &[&HeliostatSurface]) -> Result<HeliostatSurface> {
    if surfaces.is_empty() {
        return Err(HelioError::invalid("mean of no surfaces"));
    }
    let mut acc = vec![0.0; FACET_COUNT * GRID * GRID];
    for s in surfaces {
        for (a, v) in acc.iter_mut().zip(s.flatten()) {
            *a += v;
        }
    }
    let n = surfaces.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    HeliostatSurface::from_flat(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(i: u64) -> SimRng {
        rng::stream(1, domain::SURFACE, i)
    }

    #[test]
    fn zero_prior_is_flat() {
        let s = synth_surface(&SurfacePrior::zero(), &mut rng(0));
        assert_eq!(s, HeliostatSurface::flat());
    }

    #[test]
    fn tilt_only_prior_is_affine() {
        let prior = SurfacePrior {
            canting_tilt_sigma_mrad: 2.0,
            ..SurfacePrior::zero()
        };
        let s = synth_surface(&prior, &mut rng(3));
        for f in &s.facets {
            let z = f.control_z();
            // affine in (i, j): all second differences vanish
            for i in 0..GRID - 1 {
                for j in 0..GRID - 1 {
                    let d = z[i + 1][j + 1] - z[i + 1][j] - z[i][j + 1] + z[i][j];
                    assert!(d.abs() < 1e-9);
                }
            }
            for i in 1..GRID - 1 {
                assert!((z[i + 1][0] - 2.0 * z[i][0] + z[i - 1][0]).abs() < 1e-9);
                assert!((z[0][i + 1] - 2.0 * z[0][i] + z[0][i - 1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotate180_index_map() {
        let mut vals = vec![0.0; 256];
        vals[0] = 1.0;
        let s = HeliostatSurface::from_flat(&vals).unwrap();
        let r = augment_rotate180(&s);
        assert_eq!(r.facets[3].control_z()[7][7], 1.0);
        assert_eq!(r.flatten().iter().filter(|v| **v != 0.0).count(), 1);
        let any = synth_surface(&SurfacePrior::default(), &mut rng(1));
        assert_eq!(augment_rotate180(&augment_rotate180(&any)), any);
        assert_eq!(augment_rotate180(&HeliostatSurface::flat()), HeliostatSurface::flat());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let a = HeliostatSurface::from_flat(&[1.0; 256]).unwrap();
        let b = HeliostatSurface::from_flat(&[-1.0; 256]).unwrap();
        assert_eq!(augment_blend(&a, &b, 0.0).unwrap(), a);
        assert_eq!(augment_blend(&a, &b, 1.0).unwrap(), b);
        assert!(augment_blend(&a, &b, 0.5).unwrap().flatten().iter().all(|v| *v == 0.0));
        assert!(augment_blend(&a, &b, 1.5).is_err());
    }

    #[test]
    fn envelope_nodes() {
        let loc = Location::default();
        assert!(!in_solar_envelope(&loc, 0.0, 40.0));
        assert!(in_solar_envelope(&loc, 180.0, 60.0));
        // noon peak at the summer solstice
        let peak = 90.0 - loc.latitude_deg + MAX_DECLINATION_DEG;
        assert!(in_solar_envelope(&loc, 180.0, peak - 0.01));
        assert!(!in_solar_envelope(&loc, 180.0, peak + 0.01));
        let dirs = sun_grid(&loc, 10.0, 5.0).unwrap();
        assert!(!dirs.is_empty());
        assert!(dirs.iter().all(|d| d.z > 0.0));
        assert!(sun_grid(&loc, 0.0, 5.0).is_err());
        // polar night in every season: nothing feasible
        let pole = Location {
            latitude_deg: 90.0,
            longitude_deg: 0.0,
        };
        assert!(sun_grid(&pole, 10.0, 30.0).is_err());
    }

    #[test]
    fn summer_nodes_are_high() {
        let nodes = sun_grid_nodes(&Location::default(), 10.0, 5.0).unwrap();
        let summer = summer_nodes(&nodes);
        assert!(!summer.is_empty() && summer.len() < nodes.len());
        let min_summer = summer.iter().map(|n| n.elevation_deg).fold(f64::INFINITY, f64::min);
        assert!(min_summer > 20.0);
    }

    #[test]
    fn aim_scatter_support_and_determinism() {
        let c = Vec3::new(0.0, 0.0, 36.0);
        let mut r = rng(9);
        for _ in 0..10_000 {
            let p = scatter_aim(c, &mut r);
            assert!((p - c).norm() <= 1.0);
            assert_eq!(p.y, 0.0);
        }
        assert_eq!(scatter_aim(c, &mut rng(2)), scatter_aim(c, &mut rng(2)));
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let [a, b, c] = assign_splits(30, [0.6, 0.2], 4);
        assert_eq!((a.len(), b.len(), c.len()), (18, 6, 6));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn field_generation() {
        let rec = CurvedReceiver::default();
        let f = generate_field(30, 3, &rec).unwrap();
        assert_eq!(f.len(), 30);
        assert!(f.iter().all(|h| h.focal_distance >= MIN_FOCAL_DISTANCE));
        assert!(f.iter().all(|h| h.position.y > 0.0));
        assert_eq!(f, generate_field(30, 3, &rec).unwrap());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = GenerateConfig::default();
        c.validate().unwrap();
        c.observations_per_sample = 9;
        assert!(c.validate().unwrap_err().is_validation());
        let text = r#"{"train_samples": 3, "bogus": 1}"#;
        assert!(serde_json::from_str::<GenerateConfig>(text).is_err());
    }
}
