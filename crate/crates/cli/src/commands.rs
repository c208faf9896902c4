//! Command bodies. Each one computes in parallel and then writes its outputs
//! from the calling thread.

use std::path::{Path, PathBuf};

use anyhow::Context;
use helioflux::datagen::{
    self, generate_dataset, observe, summer_nodes, sun_grid_nodes, synth_surface, Dataset, DatasetSample,
    ManifestEntry, Split,
};
use helioflux::degrade::randomize_sample;
use helioflux::geometry::{read_field, write_field, HeliostatSpec};
use helioflux::metrics::{
    self, distance_trend, distance_trend_csv, flux_accuracy, ssim_band, summarize, surface_mae, surface_ssim,
    HeliostatScore, SsimBand, SummaryStats,
};
use helioflux::model::{self, load_checkpoint, save_checkpoint, CheckpointMeta, History, Model};
use helioflux::optics::render::{write_pgm, write_png};
use helioflux::optics::{superpose, trace_flux, FluxImage, TargetGeometry};
use helioflux::rng::{self, domain};
use helioflux::{HeliostatSurface, SunState};
use rand::Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::report::{f6, stats_row, stats_table, Table};
use crate::UsageError;

pub const CHECKPOINT_FILE: &str = "model.hfck";
pub const HISTORY_FILE: &str = "history.csv";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ray_seed(seed: u64, dom: u64, index: u64) -> u64 {
    rng::stream(seed, dom, index).random()
}

pub fn gen_field(cfg: &RunConfig, seed: u64, out: &Path) -> anyhow::Result<Table> {
    let field = datagen::generate_field(cfg.field.heliostats, seed, &cfg.scenario.receiver)?;
    write_field(out, &field)?;
    let apex = cfg.scenario.receiver.apex();
    let mut t = Table::new(&["id", "x_m", "y_m", "z_m", "distance_m", "focal_m"]);
    for h in &field {
        let p = h.position;
        t.push(vec![
            h.id.clone(),
            format!("{:.2}", p.x),
            format!("{:.2}", p.y),
            format!("{:.2}", p.z),
            format!("{:.2}", h.distance_to(apex)),
            format!("{:.2}", h.focal_distance),
        ]);
    }
    Ok(t)
}

pub fn generate(cfg: &RunConfig, seed: u64, field_path: &Path, out: &Path) -> anyhow::Result<Table> {
    let field = read_field(field_path)?;
    let m = generate_dataset(&field, &cfg.generate, seed, out)?;
    let mut t = Table::new(&["split", "heliostats", "samples"]);
    for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
        t.push(vec![
            split.name().into(),
            m.split_heliostats[k].len().to_string(),
            m.entries(split).count().to_string(),
        ]);
    }
    Ok(t)
}

pub fn history_table(h: &History) -> Table {
    let mut t = Table::new(&["epoch", "train_mae", "val_mae", "lr"]);
    for e in &h.epochs {
        t.push(vec![
            e.epoch.to_string(),
            f6(e.train_mae),
            e.val_mae.map(f6).unwrap_or_default(),
            format!("{:.8}", e.lr),
        ]);
    }
    t
}

/// Trains on the dataset's train split, validating on its val split.
pub fn train_model(cfg: &RunConfig, seed: u64, dataset: &Dataset, randomize: bool) -> anyhow::Result<(Model, History)> {
    let train_set = dataset.load_split(Split::Train)?;
    let val_set = dataset.load_split(Split::Val)?;
    let tc = model::TrainConfig {
        randomize,
        ..cfg.train.clone()
    };
    Ok(model::train(&train_set, &val_set, cfg.model.clone(), &tc, seed, None)?)
}

pub fn checkpoint_meta(cfg: &RunConfig, seed: u64, dataset: &Dataset, randomize: bool) -> CheckpointMeta {
    CheckpointMeta {
        model: cfg.model.clone(),
        train: model::TrainConfig {
            randomize,
            ..cfg.train.clone()
        },
        dataset_hash: dataset.manifest.config_hash.clone(),
        seed,
    }
}

pub fn train(cfg: &RunConfig, seed: u64, dataset_dir: &Path, out: &Path) -> anyhow::Result<Table> {
    let dataset = Dataset::open(dataset_dir)?;
    let (model, history) = train_model(cfg, seed, &dataset, cfg.train.randomize)?;
    create_dir(out)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model, &checkpoint_meta(cfg, seed, &dataset, cfg.train.randomize))?;
    let t = history_table(&history);
    t.write_csv(&out.join(HISTORY_FILE))?;
    Ok(t)
}

/// Loads a checkpoint and checks it was trained on this dataset.
pub fn load_model_for(path: &Path, dataset: &Dataset) -> anyhow::Result<Model> {
    let (model, meta) = load_checkpoint(path)?;
    if meta.dataset_hash != dataset.manifest.config_hash {
        return Err(UsageError(format!(
            "checkpoint {} was trained on dataset {} but {} has hash {}",
            path.display(),
            meta.dataset_hash,
            dataset.dir.display(),
            dataset.manifest.config_hash
        ))
        .into());
    }
    Ok(model)
}

/// Mean of the training split's true surfaces, read one sample at a time.
pub fn mean_training_surface(dataset: &Dataset) -> anyhow::Result<HeliostatSurface> {
    let entries: Vec<&ManifestEntry> = dataset.manifest.entries(Split::Train).collect();
    let truths: Vec<HeliostatSurface> = entries
        .par_iter()
        .map(|e| Ok(dataset.load(e)?.truth))
        .collect::<helioflux::Result<_>>()?;
    let refs: Vec<&HeliostatSurface> = truths.iter().collect();
    Ok(datagen::mean_surface(&refs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub heliostat_id: String,
    pub distance_m: f64,
    pub mae_mm: f64,
    pub ssim: f64,
    pub band: SsimBand,
    pub flux_acc_target: f64,
    pub flux_acc_receiver: f64,
    /// Surface MAE of the training-mean surface.
    pub baseline_mae_mm: f64,
    /// Receiver accuracy of the ideal (flat) surface.
    pub ideal_acc_receiver: f64,
}

/// Scores one held-out sample: surface metrics plus flux accuracy at the
/// evaluation sun on the sample's target plane and on the receiver. Predicted,
/// true and ideal surfaces share one ray seed.
pub fn evaluate_sample(
    cfg: &RunConfig,
    seed: u64,
    model: &Model,
    mean: &HeliostatSurface,
    index: usize,
    sample: &DatasetSample,
) -> anyhow::Result<EvalRow> {
    let h = &sample.heliostat;
    let pred = model.predict_surface(&sample.observations, h.position)?;
    let truth = &sample.truth;
    let mae = surface_mae(&pred, truth);
    let ssim = surface_ssim(&pred, truth, cfg.evaluate.ssim)?;
    let sun = cfg.scenario.sun()?;
    let rays = cfg.evaluate.flux_rays;
    let rs = ray_seed(seed, domain::EVAL, index as u64);

    let plane = match sample.observations[0].flux.geometry() {
        TargetGeometry::Plane(p) => *p,
        TargetGeometry::Receiver(_) => anyhow::bail!("sample {index} was not observed on a target plane"),
    };
    let on_plane = |s: &HeliostatSurface| trace_flux(h, s, sun, &plane, plane.center, rays, rs);
    let acc_target = flux_accuracy(&on_plane(&pred)?, &on_plane(truth)?)?;

    let receiver = &cfg.scenario.receiver;
    let on_receiver = |s: &HeliostatSurface| trace_flux(h, s, sun, receiver, receiver.apex(), rays, rs);
    let truth_rcv = on_receiver(truth)?;
    let acc_receiver = flux_accuracy(&on_receiver(&pred)?, &truth_rcv)?;
    let ideal_receiver = flux_accuracy(&on_receiver(&HeliostatSurface::flat())?, &truth_rcv)?;

    Ok(EvalRow {
        index,
        heliostat_id: h.id.clone(),
        distance_m: h.distance_to(receiver.apex()),
        mae_mm: mae,
        ssim,
        band: ssim_band(ssim).0,
        flux_acc_target: acc_target,
        flux_acc_receiver: acc_receiver,
        baseline_mae_mm: surface_mae(mean, truth),
        ideal_acc_receiver: ideal_receiver,
    })
}

pub fn evaluate_split(
    cfg: &RunConfig,
    seed: u64,
    model: &Model,
    dataset: &Dataset,
    split: Split,
) -> anyhow::Result<Vec<EvalRow>> {
    let mean = mean_training_surface(dataset)?;
    let entries: Vec<&ManifestEntry> = dataset.manifest.entries(split).collect();
    if entries.is_empty() {
        return Err(UsageError(format!("split {} is empty", split.name())).into());
    }
    entries
        .par_iter()
        .map(|e| evaluate_sample(cfg, seed, model, &mean, e.index, &dataset.load(e)?))
        .collect()
}

fn column(rows: &[EvalRow], f: impl Fn(&EvalRow) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mae: SummaryStats,
    pub ssim: SummaryStats,
    pub flux_acc_target: SummaryStats,
    pub flux_acc_receiver: SummaryStats,
    pub baseline_mae: SummaryStats,
    pub ideal_acc_receiver: SummaryStats,
    pub mispredictions: usize,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> anyhow::Result<Self> {
        Ok(EvalReport {
            mae: summarize(&column(&rows, |r| r.mae_mm))?,
            ssim: summarize(&column(&rows, |r| r.ssim))?,
            flux_acc_target: summarize(&column(&rows, |r| r.flux_acc_target))?,
            flux_acc_receiver: summarize(&column(&rows, |r| r.flux_acc_receiver))?,
            baseline_mae: summarize(&column(&rows, |r| r.baseline_mae_mm))?,
            ideal_acc_receiver: summarize(&column(&rows, |r| r.ideal_acc_receiver))?,
            mispredictions: rows.iter().filter(|r| ssim_band(r.ssim).1).count(),
            rows,
        })
    }

    pub fn rows_table(&self) -> Table {
        let mut t = Table::new(&[
            "heliostat_id",
            "distance_m",
            "mae_mm",
            "ssim",
            "band",
            "flux_acc_target",
            "flux_acc_receiver",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.heliostat_id.clone(),
                format!("{:.3}", r.distance_m),
                f6(r.mae_mm),
                f6(r.ssim),
                r.band.label().into(),
                f6(r.flux_acc_target),
                f6(r.flux_acc_receiver),
            ]);
        }
        t
    }

    pub fn baselines_table(&self) -> Table {
        let mut t = Table::new(&["heliostat_id", "baseline_mae_mm", "ideal_flux_acc_receiver"]);
        for r in &self.rows {
            t.push(vec![r.heliostat_id.clone(), f6(r.baseline_mae_mm), f6(r.ideal_acc_receiver)]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = stats_table("metric");
        t.push(stats_row("mae_mm", &self.mae));
        t.push(stats_row("ssim", &self.ssim));
        t.push(stats_row("flux_acc_target", &self.flux_acc_target));
        t.push(stats_row("flux_acc_receiver", &self.flux_acc_receiver));
        t.push(stats_row("baseline_mean_surface_mae_mm", &self.baseline_mae));
        t.push(stats_row("baseline_ideal_flux_acc_receiver", &self.ideal_acc_receiver));
        t
    }

    pub fn scores(&self) -> Vec<HeliostatScore> {
        self.rows
            .iter()
            .map(|r| HeliostatScore {
                distance_m: r.distance_m,
                mae_mm: r.mae_mm,
                ssim: r.ssim,
            })
            .collect()
    }
}

pub fn evaluate(
    cfg: &RunConfig,
    seed: u64,
    dataset_dir: &Path,
    model_path: &Path,
    split: Split,
    out: &Path,
) -> anyhow::Result<EvalReport> {
    let dataset = Dataset::open(dataset_dir)?;
    let model = load_model_for(model_path, &dataset)?;
    let report = EvalReport::new(evaluate_split(cfg, seed, &model, &dataset, split)?)?;
    create_dir(out)?;
    report.rows_table().write_csv(&out.join("evaluation.csv"))?;
    report.baselines_table().write_csv(&out.join("baselines.csv"))?;
    report.summary_table().write_csv(&out.join("summary.csv"))?;
    let trend = distance_trend(&report.scores(), cfg.evaluate.distance_bin_m)?;
    datagen::write_atomic(&out.join("distance_trend.csv"), distance_trend_csv(&trend).as_bytes())?;
    Ok(report)
}

/// Test split passed through the ablation degradation, one stream per sample.
pub fn degraded_test_set(cfg: &RunConfig, seed: u64, dataset: &Dataset) -> anyhow::Result<Vec<(usize, DatasetSample)>> {
    let entries: Vec<&ManifestEntry> = dataset.manifest.entries(Split::Test).collect();
    entries
        .par_iter()
        .map(|e| {
            let clean = dataset.load(e)?;
            let mut r = rng::stream(seed, domain::EVAL, (1 << 32) | e.index as u64);
            Ok((e.index, randomize_sample(&clean, &cfg.ablation.degraded, &mut r)?))
        })
        .collect()
}

pub fn sample_maes(model: &Model, samples: &[(usize, DatasetSample)]) -> anyhow::Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|(_, s)| {
            let pred = model.predict_surface(&s.observations, s.heliostat.position)?;
            Ok(surface_mae(&pred, &s.truth))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub ids: Vec<String>,
    /// Per-sample MAE: (randomized, plain) x (clean, degraded).
    pub randomized_clean: Vec<f64>,
    pub randomized_degraded: Vec<f64>,
    pub plain_clean: Vec<f64>,
    pub plain_degraded: Vec<f64>,
}

impl AblationReport {
    pub fn compute(cfg: &RunConfig, seed: u64, dataset: &Dataset, randomized: &Model, plain: &Model) -> anyhow::Result<Self> {
        let clean: Vec<(usize, DatasetSample)> = dataset
            .manifest
            .entries(Split::Test)
            .map(|e| Ok((e.index, dataset.load(e)?)))
            .collect::<helioflux::Result<_>>()?;
        let degraded = degraded_test_set(cfg, seed, dataset)?;
        Ok(AblationReport {
            ids: clean.iter().map(|(_, s)| s.heliostat.id.clone()).collect(),
            randomized_clean: sample_maes(randomized, &clean)?,
            randomized_degraded: sample_maes(randomized, &degraded)?,
            plain_clean: sample_maes(plain, &clean)?,
            plain_degraded: sample_maes(plain, &degraded)?,
        })
    }

    pub fn summary_table(&self) -> anyhow::Result<Table> {
        let mut t = stats_table("model_testset");
        t.push(stats_row("randomized_clean", &summarize(&self.randomized_clean)?));
        t.push(stats_row("randomized_degraded", &summarize(&self.randomized_degraded)?));
        t.push(stats_row("plain_clean", &summarize(&self.plain_clean)?));
        t.push(stats_row("plain_degraded", &summarize(&self.plain_degraded)?));
        Ok(t)
    }

    pub fn samples_table(&self) -> Table {
        let mut t = Table::new(&[
            "heliostat_id",
            "randomized_clean",
            "randomized_degraded",
            "plain_clean",
            "plain_degraded",
        ]);
        for i in 0..self.ids.len() {
            t.push(vec![
                self.ids[i].clone(),
                f6(self.randomized_clean[i]),
                f6(self.randomized_degraded[i]),
                f6(self.plain_clean[i]),
                f6(self.plain_degraded[i]),
            ]);
        }
        t
    }
}

pub fn ablation(cfg: &RunConfig, seed: u64, dataset_dir: &Path, out: &Path) -> anyhow::Result<Table> {
    let dataset = Dataset::open(dataset_dir)?;
    create_dir(out)?;
    let mut models = Vec::new();
    for (name, randomize) in [("randomized", true), ("plain", false)] {
        log::info!("training the {name} model");
        let (model, history) = train_model(cfg, seed, &dataset, randomize)?;
        let dir = out.join(name);
        create_dir(&dir)?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &model, &checkpoint_meta(cfg, seed, &dataset, randomize))?;
        history_table(&history).write_csv(&dir.join(HISTORY_FILE))?;
        models.push(model);
    }
    let report = AblationReport::compute(cfg, seed, &dataset, &models[0], &models[1])?;
    report.samples_table().write_csv(&out.join("ablation_samples.csv"))?;
    let t = report.summary_table()?;
    t.write_csv(&out.join("ablation.csv"))?;
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct ScenarioHeliostat {
    pub id: String,
    pub distance_m: f64,
    pub aim_index: usize,
    pub acc_model: f64,
    pub acc_ideal: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub heliostats: Vec<ScenarioHeliostat>,
    pub superposed_model: f64,
    pub superposed_ideal: f64,
    pub truth: FluxImage,
    pub predicted: FluxImage,
    pub ideal: FluxImage,
}

impl ScenarioReport {
    pub fn median_model(&self) -> f64 {
        summarize(&self.heliostats.iter().map(|h| h.acc_model).collect::<Vec<_>>())
            .map(|s| s.median)
            .unwrap_or(f64::NAN)
    }

    pub fn median_ideal(&self) -> f64 {
        summarize(&self.heliostats.iter().map(|h| h.acc_ideal).collect::<Vec<_>>())
            .map(|s| s.median)
            .unwrap_or(f64::NAN)
    }

    pub fn heliostat_table(&self) -> Table {
        let mut t = Table::new(&["heliostat_id", "distance_m", "aim_index", "acc_model", "acc_ideal"]);
        for h in &self.heliostats {
            t.push(vec![
                h.id.clone(),
                format!("{:.3}", h.distance_m),
                h.aim_index.to_string(),
                f6(h.acc_model),
                f6(h.acc_ideal),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["metric", "value"]);
        t.push(vec!["median_heliostat_acc_model".into(), f6(self.median_model())]);
        t.push(vec!["median_heliostat_acc_ideal".into(), f6(self.median_ideal())]);
        t.push(vec!["superposed_acc_model".into(), f6(self.superposed_model)]);
        t.push(vec!["superposed_acc_ideal".into(), f6(self.superposed_ideal)]);
        t
    }
}

/// Receiver extrapolation: each heliostat gets a fresh surface, is observed on
/// its calibration target from summer sun positions only, and is then traced
/// onto the receiver at the evaluation sun. Heliostat `i` aims at grid point
/// `i mod 6`.
pub fn run_scenario(cfg: &RunConfig, seed: u64, field: &[HeliostatSpec], model: &Model) -> anyhow::Result<ScenarioReport> {
    let sc = &cfg.scenario;
    let sun: SunState = sc.sun()?;
    let nodes = summer_nodes(&sun_grid_nodes(&cfg.generate.location, cfg.generate.az_step_deg, cfg.generate.el_step_deg)?);
    let aims = sc.aim_points();
    let receiver = &sc.receiver;
    let gen = &cfg.generate;

    let per: Vec<(ScenarioHeliostat, [FluxImage; 3])> = field
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut r = rng::stream(seed, domain::SCENARIO, i as u64);
            let truth = synth_surface(&gen.prior, &mut r);
            let obs_seed: u64 = r.random();
            let observations = observe(
                h,
                &truth,
                &gen.target_for(i),
                &nodes,
                gen.observations_per_sample,
                gen.rays_per_observation,
                obs_seed,
                &mut r,
            )?;
            let pred = model.predict_surface(&observations, h.position)?;
            let aim_index = i % aims.len();
            let rs: u64 = r.random();
            let trace = |s: &HeliostatSurface| trace_flux(h, s, sun, receiver, aims[aim_index], sc.rays, rs);
            let (t, p, f) = (trace(&truth)?, trace(&pred)?, trace(&HeliostatSurface::flat())?);
            let row = ScenarioHeliostat {
                id: h.id.clone(),
                distance_m: h.distance_to(receiver.apex()),
                aim_index,
                acc_model: flux_accuracy(&p, &t)?,
                acc_ideal: flux_accuracy(&f, &t)?,
            };
            Ok((row, [t, p, f]))
        })
        .collect::<anyhow::Result<_>>()?;

    let pick = |k: usize| per.iter().map(|(_, imgs)| imgs[k].clone()).collect::<Vec<_>>();
    let truth = superpose(&pick(0))?;
    let predicted = superpose(&pick(1))?;
    let ideal = superpose(&pick(2))?;
    Ok(ScenarioReport {
        superposed_model: metrics::flux_accuracy(&predicted, &truth)?,
        superposed_ideal: metrics::flux_accuracy(&ideal, &truth)?,
        heliostats: per.into_iter().map(|(h, _)| h).collect(),
        truth,
        predicted,
        ideal,
    })
}

pub fn scenario(cfg: &RunConfig, seed: u64, field_path: &Path, model_path: &Path, out: &Path) -> anyhow::Result<ScenarioReport> {
    let field = read_field(field_path)?;
    let (model, _) = load_checkpoint(model_path)?;
    let report = run_scenario(cfg, seed, &field, &model)?;
    create_dir(out)?;
    report.heliostat_table().write_csv(&out.join("scenario.csv"))?;
    report.summary_table().write_csv(&out.join("scenario_summary.csv"))?;
    for (name, img) in [("truth", &report.truth), ("predicted", &report.predicted), ("ideal", &report.ideal)] {
        img.write(&out.join(format!("superposed_{name}.flux")))?;
        write_png(img.normalized(), &out.join(format!("superposed_{name}.png")))?;
    }
    Ok(report)
}

/// Renders a flux record to `.pgm` (grayscale) or `.png` (false color).
pub fn render(flux_path: &Path, out: &Path) -> anyhow::Result<PathBuf> {
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    if ext != "png" && ext != "pgm" {
        return Err(UsageError(format!("{}: output must end in .png or .pgm", out.display())).into());
    }
    let img = FluxImage::read(flux_path)?;
    match ext.as_str() {
        "png" => write_png(img.normalized(), out)?,
        _ => write_pgm(img.normalized(), out)?,
    }
    Ok(out.to_path_buf())
}
