//! Pipeline configuration: one TOML document with defaulted sections.
//!
//! Parsing is total over the defaults (an empty document is a valid
//! config); unknown keys are rejected. Angles are degrees in the file and
//! radians internally. Per-stage seeds derive from the global seed and the
//! stage name, so stages stay reproducible without seed bookkeeping.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fallback::FallbackMode;
use crate::levelset::{AxisSpec, GridSpec};
use crate::plant::PlantConfig;
use crate::sensor::CameraConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub plant: PlantSection,
    pub camera: CameraSection,
    pub grid: GridSection,
    pub estimator: EstimatorSection,
    pub nrt: NrtSection,
    pub fd: FdSection,
    pub mining: MiningSection,
    pub fallback: FallbackSection,
    pub retrain: RetrainSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub seed: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection { seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub v: f64,
    pub half_width: f64,
    pub dt: f64,
    pub u_max: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let d = PlantConfig::default();
        PlantSection { v: d.v, half_width: d.half_width, dt: d.dt, u_max: d.u_max }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub lateral_offset: f64,
    pub height: f64,
    pub pitch_deg: f64,
    pub focal: f64,
    pub width: usize,
    pub height_px: usize,
}

impl Default for CameraSection {
    fn default() -> Self {
        let d = CameraConfig::default();
        CameraSection {
            lateral_offset: d.lateral_offset,
            height: d.height,
            pitch_deg: d.pitch.to_degrees(),
            focal: d.focal,
            width: d.width,
            height_px: d.height_px,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub px_min: f64,
    pub px_max: f64,
    pub px_count: usize,
    pub py_min: f64,
    pub py_max: f64,
    pub py_count: usize,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub theta_count: usize,
    /// Reachability horizon T, seconds.
    pub horizon: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            px_min: -15.0,
            px_max: 15.0,
            px_count: 101,
            py_min: 100.0,
            py_max: 250.0,
            py_count: 61,
            theta_min_deg: -30.0,
            theta_max_deg: 30.0,
            theta_count: 61,
            horizon: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub corpus_size: usize,
    /// Corpus poses sample |px| up to this bound (meters).
    pub corpus_px_abs_max: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            hidden: vec![64, 64],
            lr: 1e-3,
            epochs: 90,
            batch: 64,
            corpus_size: 12_000,
            corpus_px_abs_max: 12.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NrtSection {
    pub hidden: Vec<usize>,
    pub omega0: f64,
    pub lambda: f64,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub pretrain_frac: f64,
    pub pool: usize,
    /// Runway the value network is trained for (one network per runway).
    pub runway: u8,
}

impl Default for NrtSection {
    fn default() -> Self {
        NrtSection {
            hidden: vec![64, 64],
            omega0: 30.0,
            lambda: 100.0,
            batch: 128,
            iters: 15_000,
            lr: 2e-4,
            pretrain_frac: 0.2,
            pool: 50_000,
            runway: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FdSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    /// Size of the mined labeled pool.
    pub pool_size: usize,
    /// Fraction of the pool held out for conformal calibration.
    pub cal_fraction: f64,
    /// Fraction of the pool held out for in-distribution evaluation.
    pub test_fraction: f64,
    /// Per-environment sample count for the held-out evaluation sets.
    pub eval_per_env: usize,
}

impl Default for FdSection {
    fn default() -> Self {
        FdSection {
            hidden: vec![64, 64],
            lr: 1e-3,
            epochs: 25,
            batch: 64,
            alpha: 0.05,
            cal_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            pool_size: 12_000,
            eval_per_env: 1200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    /// Which tube labels the mined pool: "nrt" or "grid".
    pub tube: String,
    pub trace_count: usize,
    pub trace_horizon: f64,
    pub pe_threshold: f64,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            tube: "nrt".to_string(),
            trace_count: 40,
            trace_horizon: 10.0,
            pe_threshold: crate::mining::DEFAULT_PREDICTION_ERROR_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FallbackSection {
    /// "gps" or "velocity".
    pub mode: String,
    pub sigma: f64,
    pub dv: f64,
    pub v_floor: f64,
    pub horizon: f64,
    /// Initial-state grid for unsafe-fraction comparisons.
    pub states_px_count: usize,
    pub states_theta_count: usize,
    pub states_px_abs_max: f64,
    pub states_theta_abs_max_deg: f64,
    pub states_py: f64,
}

impl Default for FallbackSection {
    fn default() -> Self {
        FallbackSection {
            mode: "gps".to_string(),
            sigma: 1.0,
            dv: 0.01,
            v_floor: 0.0,
            horizon: 10.0,
            states_px_count: 19,
            states_theta_count: 9,
            states_px_abs_max: 9.0,
            states_theta_abs_max_deg: 25.0,
            states_py: 110.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainSection {
    pub mined_count: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub target_failure_fraction: f64,
    /// Fraction of mined failures held out for before/after evaluation.
    pub failure_holdout_frac: f64,
}

impl Default for RetrainSection {
    fn default() -> Self {
        RetrainSection {
            mined_count: 1500,
            epochs: 10,
            lr: 3e-4,
            batch: 64,
            target_failure_fraction: 0.3,
            failure_holdout_frac: 0.2,
        }
    }
}

impl PipelineConfig {
    /// Parse a TOML document; missing sections take defaults, unknown keys
    /// are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse with `key.path=value` overrides applied on top of the document.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (path, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let segments: Vec<&str> = path.split('.').collect();
            if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
                return Err(Error::Config(format!("bad override key `{path}`")));
            }
            // Parse the value as a TOML literal; fall back to a string.
            let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            let mut node = &mut value;
            for seg in &segments[..segments.len() - 1] {
                node = node
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{seg}` is not a table")))?;
            }
            node.insert(segments.last().unwrap().to_string(), parsed);
        }
        let text = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant().validate()?;
        self.camera().validate()?;
        self.grid_spec().validate()?;
        if !(0.0 < self.fd.alpha && self.fd.alpha < 1.0) {
            return Err(Error::Config(format!("fd.alpha must be in (0,1), got {}", self.fd.alpha)));
        }
        if self.fd.cal_fraction + self.fd.test_fraction >= 1.0 {
            return Err(Error::Config("fd calibration+test fractions must leave training data".into()));
        }
        match self.mining.tube.as_str() {
            "nrt" | "grid" => {}
            other => return Err(Error::Config(format!("mining.tube must be nrt|grid, got {other}"))),
        }
        self.fallback_mode()?;
        if self.grid.horizon <= 0.0 {
            return Err(Error::Config("grid.horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn plant(&self) -> PlantConfig {
        PlantConfig {
            v: self.plant.v,
            half_width: self.plant.half_width,
            dt: self.plant.dt,
            u_max: self.plant.u_max,
        }
    }

    pub fn camera(&self) -> CameraConfig {
        CameraConfig {
            lateral_offset: self.camera.lateral_offset,
            height: self.camera.height,
            pitch: self.camera.pitch_deg.to_radians(),
            focal: self.camera.focal,
            width: self.camera.width,
            height_px: self.camera.height_px,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            px: AxisSpec::new(self.grid.px_min, self.grid.px_max, self.grid.px_count),
            py: AxisSpec::new(self.grid.py_min, self.grid.py_max, self.grid.py_count),
            theta: AxisSpec::new(
                self.grid.theta_min_deg.to_radians(),
                self.grid.theta_max_deg.to_radians(),
                self.grid.theta_count,
            ),
        }
    }

    pub fn fallback_mode(&self) -> Result<FallbackMode> {
        match self.fallback.mode.as_str() {
            "gps" => Ok(FallbackMode::Gps { sigma: self.fallback.sigma }),
            "velocity" => {
                Ok(FallbackMode::Velocity { dv: self.fallback.dv, v_floor: self.fallback.v_floor })
            }
            other => Err(Error::Config(format!("fallback.mode must be gps|velocity, got {other}"))),
        }
    }

    /// Canonical serialized form (defaults filled in).
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Digest of the canonical form.
    pub fn digest(&self) -> String {
        crate::io::bytes_digest(self.canonical_toml().as_bytes())
    }
}

/// Derive a stage seed from the global seed and the stage name.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
