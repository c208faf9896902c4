//! Run configuration: one JSON document with a section per command.

use std::path::Path;

use helioflux::datagen::GenerateConfig;
use helioflux::degrade::{RandomizationConfig, IMAGE_TRANSFORMS};
use helioflux::geometry::SunState;
use helioflux::metrics::SsimConstants;
use helioflux::model::{ModelConfig, TrainConfig};
use helioflux::optics::CurvedReceiver;
use helioflux::Vec3;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub heliostats: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { heliostats: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rays per flux trace when comparing predicted and true surfaces.
    pub flux_rays: u64,
    pub distance_bin_m: f64,
    pub ssim: SsimConstants,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            flux_rays: 20_000,
            distance_bin_m: 50.0,
            ssim: SsimConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Degradation applied to the test fluxes as the stand-in for real data.
    pub degraded: RandomizationConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            degraded: RandomizationConfig {
                enabled: IMAGE_TRANSFORMS.iter().map(|(n, _)| n.to_string()).collect(),
                apply_prob: 1.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub receiver: CurvedReceiver,
    /// Sun direction for the receiver traces; normalized on use.
    pub eval_sun: Vec3,
    pub eval_csr: f64,
    /// Aim points as (arc fraction, height fraction) on the receiver.
    pub aim_grid: Vec<[f64; 2]>,
    pub rays: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        // 3 x 2 cell centres over the central 80% of the receiver
        let mut aim_grid = Vec::new();
        for j in 0..2 {
            for i in 0..3 {
                aim_grid.push([0.1 + 0.8 * (i as f64 + 0.5) / 3.0, 0.1 + 0.8 * (j as f64 + 0.5) / 2.0]);
            }
        }
        ScenarioConfig {
            receiver: CurvedReceiver::default(),
            eval_sun: Vec3::new(-1.0, -1.0, 1.0),
            eval_csr: 0.05,
            aim_grid,
            rays: 20_000,
        }
    }
}

impl ScenarioConfig {
    pub const AIM_POINTS: usize = 6;

    pub fn sun(&self) -> helioflux::Result<SunState> {
        let d = self.eval_sun;
        if !(d.is_finite() && d.norm() > 0.0) {
            return Err(helioflux::HelioError::invalid("eval_sun must be a finite non-zero vector"));
        }
        if d.z <= 0.0 {
            return Err(helioflux::HelioError::invalid("eval_sun is below the horizon"));
        }
        SunState::new(d.normalized(), self.eval_csr)
    }

    pub fn aim_points(&self) -> Vec<Vec3> {
        let r = &self.receiver;
        self.aim_grid
            .iter()
            .map(|[s, h]| r.surface_point(((s - 0.5) * r.opening_angle).to_radians(), (h - 0.5) * r.height_extent))
            .collect()
    }

    pub fn validate(&self) -> helioflux::Result<()> {
        self.receiver.validate()?;
        self.sun()?;
        if self.aim_grid.len() != Self::AIM_POINTS {
            return Err(helioflux::HelioError::invalid(format!(
                "aim_grid needs exactly {} points",
                Self::AIM_POINTS
            )));
        }
        if self.aim_grid.iter().flatten().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(helioflux::HelioError::invalid("aim_grid fractions must lie in [0, 1]"));
        }
        if self.rays == 0 {
            return Err(helioflux::HelioError::invalid("scenario rays must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub generate: GenerateConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluate: EvalConfig,
    pub ablation: AblationConfig,
    pub scenario: ScenarioConfig,
}

impl RunConfig {
    /// Reads and validates a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> helioflux::Result<()> {
        if self.field.heliostats < 3 {
            return Err(helioflux::HelioError::invalid("field needs at least 3 heliostats"));
        }
        self.generate.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.evaluate.flux_rays == 0 || !(self.evaluate.distance_bin_m > 0.0) || !(self.evaluate.ssim.dynamic_range > 0.0) {
            return Err(helioflux::HelioError::invalid("evaluate needs positive flux_rays, distance_bin_m and ssim range"));
        }
        self.ablation.degraded.validate()?;
        self.scenario.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let aims = ScenarioConfig::default().aim_grid;
        assert_eq!(aims.len(), 6);
        assert!((aims[0][0] - 0.233333).abs() < 1e-6 && (aims[5][1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sun_below_horizon_is_rejected() {
        let cfg = ScenarioConfig {
            eval_sun: Vec3::new(-1.0, -1.0, -0.1),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epochs": 3}}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"scenario": {"aim_grid": [[0.5, 0.5]]}}"#)
            .unwrap()
            .validate()
            .is_err());
    }
}
