//! Surface and flux quality metrics and experiment statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{HelioError, Result};
use crate::nurbs::{HeliostatSurface, GRID};
use crate::optics::FluxImage;

/// Mean absolute difference of two equally long value slices.
pub fn mean_abs_diff(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(HelioError::Shape(format!(
            "cannot compare {} values against {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Per-heliostat MAE in mm: mean over facets of the per-facet control-point MAE.
pub fn surface_mae(a: &HeliostatSurface, b: &HeliostatSurface) -> f64 {
    let per_facet = GRID * GRID;
    let (fa, fb) = (a.flatten(), b.flatten());
    let facets = fa.len() / per_facet;
    let mut total = 0.0;
    for k in 0..facets {
        let r = k * per_facet..(k + 1) * per_facet;
        total += mean_abs_diff(&fa[r.clone()], &fb[r]).expect("facet slices have equal length");
    }
    total / facets as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConstants {
    /// Dynamic range `L` in mm.
    pub dynamic_range: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants { dynamic_range: 5.0 }
    }
}

impl SsimConstants {
    pub fn c1(&self) -> f64 {
        (0.01 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (0.03 * self.dynamic_range).powi(2)
    }
}

/// Global structural similarity of two value sets (population moments).
pub fn ssim_values(a: &[f64], b: &[f64], constants: SsimConstants) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(HelioError::Shape(format!("cannot compare {} values against {}", a.len(), b.len())));
    }
    if !(constants.dynamic_range > 0.0) {
        return Err(HelioError::invalid("SSIM dynamic range must be positive"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let (c1, c2) = (constants.c1(), constants.c2());
    Ok(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
}

pub fn surface_ssim(a: &HeliostatSurface, b: &HeliostatSurface, constants: SsimConstants) -> Result<f64> {
    ssim_values(&a.flatten(), &b.flatten(), constants)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SsimBand {
    VeryHigh,
    High,
    Medium,
    NoSimilarity,
    Negative,
}

impl SsimBand {
    pub fn label(&self) -> &'static str {
        match self {
            SsimBand::VeryHigh => "very_high",
            SsimBand::High => "high",
            SsimBand::Medium => "medium",
            SsimBand::NoSimilarity => "none",
            SsimBand::Negative => "negative",
        }
    }
}

/// Any SSIM below this counts as a misprediction.
pub const MISPREDICTION_SSIM: f64 = 0.25;

/// Similarity band and misprediction flag for an SSIM value.
pub fn ssim_band(ssim: f64) -> (SsimBand, bool) {
    let band = if ssim >= 0.75 {
        SsimBand::VeryHigh
    } else if ssim >= 0.5 {
        SsimBand::High
    } else if ssim >= 0.25 {
        SsimBand::Medium
    } else if ssim > -0.25 {
        SsimBand::NoSimilarity
    } else {
        SsimBand::Negative
    };
    (band, ssim < MISPREDICTION_SSIM)
}

/// Total-variation overlap of two mass-normalized grids.
pub fn overlap_accuracy(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(HelioError::Shape("flux grids differ in size".into()));
    }
    let (sp, sr): (f64, f64) = (pred.iter().sum(), reference.iter().sum());
    if !(sp > 0.0 && sr > 0.0) {
        return Err(HelioError::invalid("flux accuracy is undefined for an all-zero image"));
    }
    let tv: f64 = pred.iter().zip(reference).map(|(p, r)| (p / sp - r / sr).abs()).sum();
    Ok((1.0 - 0.5 * tv).clamp(0.0, 1.0))
}

/// Flux accuracy in `[0, 1]`: one minus the total-variation distance of the
/// two raw grids after scaling each to unit mass.
pub fn flux_accuracy(pred: &FluxImage, reference: &FluxImage) -> Result<f64> {
    if pred.geometry() != reference.geometry()
        || pred.width() != reference.width()
        || pred.height() != reference.height()
    {
        return Err(HelioError::Shape("flux images must share geometry and resolution".into()));
    }
    let p: Vec<f64> = pred.raw().iter().map(|&v| v as f64).collect();
    let r: Vec<f64> = reference.raw().iter().map(|&v| v as f64).collect();
    overlap_accuracy(&p, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryStats {
    pub const CSV_HEADER: &'static str = "min,q1,median,mean,q3,max";

    pub fn csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.min, self.q1, self.median, self.mean, self.q3, self.max
        )
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(HelioError::invalid("cannot summarize an empty set"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(HelioError::invalid("cannot summarize NaN values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryStats {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeliostatScore {
    pub distance_m: f64,
    pub mae_mm: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBin {
    pub lower_m: f64,
    pub upper_m: f64,
    pub count: usize,
    pub mae: SummaryStats,
    pub ssim: SummaryStats,
}

/// Fixed-width distance bins with MAE and SSIM statistics; empty bins omitted.
pub fn distance_trend(scores: &[HeliostatScore], bin_width_m: f64) -> Result<Vec<DistanceBin>> {
    if !(bin_width_m > 0.0) {
        return Err(HelioError::invalid("bin width must be positive"));
    }
    let mut bins: std::collections::BTreeMap<i64, Vec<HeliostatScore>> = Default::default();
    for s in scores {
        bins.entry((s.distance_m / bin_width_m).floor() as i64).or_default().push(*s);
    }
    bins.into_iter()
        .map(|(k, members)| {
            let mae: Vec<f64> = members.iter().map(|s| s.mae_mm).collect();
            let ssim: Vec<f64> = members.iter().map(|s| s.ssim).collect();
            Ok(DistanceBin {
                lower_m: k as f64 * bin_width_m,
                upper_m: (k + 1) as f64 * bin_width_m,
                count: members.len(),
                mae: summarize(&mae)?,
                ssim: summarize(&ssim)?,
            })
        })
        .collect()
}

pub fn distance_trend_csv(bins: &[DistanceBin]) -> String {
    let mut out = String::from(
        "bin_lower_m,bin_upper_m,count,mae_min,mae_q1,mae_median,mae_mean,mae_q3,mae_max,ssim_min,ssim_q1,ssim_median,ssim_mean,ssim_q3,ssim_max\n",
    );
    for b in bins {
        let _ = writeln!(
            out,
            "{:.1},{:.1},{},{},{}",
            b.lower_m,
            b.upper_m,
            b.count,
            b.mae.csv_fields(),
            b.ssim.csv_fields()
        );
    }
    out
}
