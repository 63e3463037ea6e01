//! Declarative run configuration in human units (gauss, kHz, µs, ms).
//!
//! Every section has defaults, so an empty file is the high-field preset.
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{make_grid, AcquisitionGrid, Design, ShotNoiseConfig};
use crate::dataset::{DatasetOptions, ImageSpec};
use crate::error::{Error, Result};
use crate::prior::{BathConfig, Interval, PriorConfig};
use crate::seed::Seed;
use crate::simulate::SignalModel;
use crate::spin_model::{DecoherenceModel, FieldConfig};

pub const HIGH_FIELD_PRESET: &str = include_str!("../presets/high_field.toml");
pub const LOW_FIELD_PRESET: &str = include_str!("../presets/low_field.toml");

/// Closed interval written as `[low, high]` in kHz.
pub type KhzRange = [f64; 2];

fn interval(r: KhzRange) -> Interval {
    Interval::khz(r[0], r[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub b_gauss: f64,
    /// γ_n/2π in MHz/T.
    pub gamma_mhz_per_tesla: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            b_gauss: 404.0,
            gamma_mhz_per_tesla: 10.705,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceSection {
    pub enabled: bool,
    pub t_ref_ms: f64,
    pub n_ref: u32,
    pub eta: f64,
}

impl Default for DecoherenceSection {
    fn default() -> Self {
        let d = DecoherenceModel::default();
        Self {
            enabled: d.enabled,
            t_ref_ms: d.t_ref * 1e3,
            n_ref: d.n_ref,
            eta: d.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub n_min: u32,
    pub n_max: u32,
    pub az_khz: KhzRange,
    pub aperp_khz: KhzRange,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 50,
            az_khz: [-50.0, 50.0],
            aperp_khz: [2.0, 80.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSection {
    pub enabled: bool,
    pub n_configs: u32,
    pub spins_per_config: u32,
    pub az_khz: KhzRange,
    pub aperp_khz: KhzRange,
}

impl Default for BathSection {
    fn default() -> Self {
        let b = BathConfig::default();
        Self {
            enabled: true,
            n_configs: b.n_configs,
            spins_per_config: b.spins_per_config,
            az_khz: [b.az_range.low * 1e-3, b.az_range.high * 1e-3],
            aperp_khz: [b.aperp_range.low * 1e-3, b.aperp_range.high * 1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_pulses: u32,
    pub tau_lo_us: f64,
    pub tau_hi_us: f64,
    pub dtau_ns: f64,
    /// Keep only the delays listed in this file (one τ in ns per line).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_file: Option<PathBuf>,
}

impl GridSection {
    pub fn new(n_pulses: u32, tau_lo_us: f64, tau_hi_us: f64, dtau_ns: f64) -> Self {
        Self {
            n_pulses,
            tau_lo_us,
            tau_hi_us,
            dtau_ns,
            selection_file: None,
        }
    }

    pub fn build(&self) -> Result<AcquisitionGrid> {
        let grid = make_grid(self.n_pulses, self.tau_lo_us * 1e-6, self.tau_hi_us * 1e-6, self.dtau_ns * 1e-9)?;
        match &self.selection_file {
            None => Ok(grid),
            Some(path) => {
                let taus = read_selection_file(path)?;
                let mut sub = grid.restrict_to(&taus)?;
                sub.label = grid.label;
                Ok(sub)
            }
        }
    }
}

/// Sorted τ list (ns), one per line; blank lines and `#` comments skipped.
pub fn read_selection_file(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse::<u64>()
                .map_err(|_| Error::format(path, format!("line {}: expected a delay in ns, got {l:?}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotSection {
    pub enabled: bool,
    pub n_m: u32,
}

impl Default for ShotSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_m: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigSection {
    pub n_samples: u64,
    pub n_p: usize,
}

impl Default for SigSection {
    fn default() -> Self {
        Self {
            n_samples: crate::sig::DEFAULT_SAMPLES,
            n_p: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub height: usize,
    pub width: usize,
    pub az_khz: KhzRange,
    pub aperp_khz: KhzRange,
    pub peak_sigma: f64,
}

impl Default for ImageSection {
    fn default() -> Self {
        let s = ImageSpec::default();
        Self {
            height: s.height,
            width: s.width,
            az_khz: [s.az_extent.low * 1e-3, s.az_extent.high * 1e-3],
            aperp_khz: [s.aperp_extent.low * 1e-3, s.aperp_extent.high * 1e-3],
            peak_sigma: s.peak_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_samples: u64,
    pub shard_size: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            shard_size: crate::dataset::DEFAULT_SHARD_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub radius_hz: f64,
    pub threshold: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            radius_hz: crate::metrics::DEFAULT_RADIUS,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
        }
    }
}

fn default_grids() -> Vec<GridSection> {
    vec![GridSection::new(32, 6.0, 50.0, 4.0), GridSection::new(256, 10.0, 40.0, 4.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub field: FieldSection,
    pub decoherence: DecoherenceSection,
    pub prior: PriorSection,
    pub bath: BathSection,
    pub grids: Vec<GridSection>,
    pub shot: ShotSection,
    pub sig: SigSection,
    pub image: ImageSection,
    pub dataset: DatasetSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            field: FieldSection::default(),
            decoherence: DecoherenceSection::default(),
            prior: PriorSection::default(),
            bath: BathSection::default(),
            grids: default_grids(),
            shot: ShotSection::default(),
            sig: SigSection::default(),
            image: ImageSection::default(),
            dataset: DatasetSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    HighField,
    LowField,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let text = match p {
            Preset::HighField => HIGH_FIELD_PRESET,
            Preset::LowField => LOW_FIELD_PRESET,
        };
        Self::from_toml(text).expect("shipped presets parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML run file, or a JSON sidecar written by a previous run (either
    /// the bare configuration or an object carrying it under `config`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let in_file = |e: Error| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        };
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            let cfg: RunConfig =
                serde_json::from_value(value).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            cfg.validate().map_err(in_file)?;
            Ok(cfg)
        } else {
            Self::from_toml(&text).map_err(in_file)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.field()?;
        self.decoherence().validate()?;
        self.prior().validate()?;
        if self.bath.enabled {
            self.bath_config().validate()?;
        }
        if self.grids.is_empty() {
            return Err(Error::config("at least one [[grids]] entry is required"));
        }
        self.shot().validate()?;
        if self.sig.n_samples < 2 {
            return Err(Error::config("sig.n_samples must be at least 2"));
        }
        if self.sig.n_p == 0 {
            return Err(Error::config("sig.n_p must be at least 1"));
        }
        self.image_spec().validate()?;
        if self.dataset.shard_size == 0 {
            return Err(Error::config("dataset.shard_size must be at least 1"));
        }
        if !(self.metrics.radius_hz > 0.0) {
            return Err(Error::config("metrics.radius_hz must be positive"));
        }
        if !(self.metrics.threshold > 0.0 && self.metrics.threshold <= 1.0) {
            return Err(Error::config("metrics.threshold must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn seed(&self) -> Seed {
        Seed(self.seed)
    }

    pub fn field(&self) -> Result<FieldConfig> {
        FieldConfig::new(
            self.field.b_gauss * crate::spin_model::GAUSS,
            2.0 * std::f64::consts::PI * self.field.gamma_mhz_per_tesla * 1e6,
        )
        .map_err(|e| Error::config(e.to_string()))
    }

    pub fn decoherence(&self) -> DecoherenceModel {
        DecoherenceModel {
            t_ref: self.decoherence.t_ref_ms * 1e-3,
            n_ref: self.decoherence.n_ref,
            eta: self.decoherence.eta,
            enabled: self.decoherence.enabled,
        }
    }

    pub fn prior(&self) -> PriorConfig {
        PriorConfig {
            n_min: self.prior.n_min,
            n_max: self.prior.n_max,
            az_range: interval(self.prior.az_khz),
            aperp_range: interval(self.prior.aperp_khz),
        }
    }

    pub fn bath_config(&self) -> BathConfig {
        BathConfig {
            n_configs: self.bath.n_configs,
            spins_per_config: self.bath.spins_per_config,
            az_range: interval(self.bath.az_khz),
            aperp_range: interval(self.bath.aperp_khz),
        }
    }

    pub fn model(&self) -> Result<SignalModel> {
        Ok(SignalModel {
            prior: self.prior(),
            bath: self.bath.enabled.then(|| self.bath_config()),
            field: self.field()?,
            decoherence: self.decoherence(),
        })
    }

    pub fn grids(&self) -> Result<Vec<AcquisitionGrid>> {
        self.grids.iter().map(GridSection::build).collect()
    }

    pub fn shot(&self) -> ShotNoiseConfig {
        ShotNoiseConfig {
            n_m: self.shot.n_m,
            enabled: self.shot.enabled,
        }
    }

    pub fn design(&self) -> Result<Design> {
        Design::new(self.grids()?, self.shot())
    }

    pub fn image_spec(&self) -> ImageSpec {
        ImageSpec {
            height: self.image.height,
            width: self.image.width,
            az_extent: interval(self.image.az_khz),
            aperp_extent: interval(self.image.aperp_khz),
            peak_sigma: self.image.peak_sigma,
        }
    }

    pub fn dataset_options(&self, workers: usize) -> DatasetOptions {
        DatasetOptions {
            shard_size: self.dataset.shard_size,
            workers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        assert_eq!(RunConfig::preset(Preset::HighField), RunConfig::default());
        let low = RunConfig::preset(Preset::LowField);
        assert!((low.field.b_gauss - 40.4).abs() < 1e-12);
        assert_eq!(low.sig.n_p, 8000);
        let grids = low.grids().unwrap();
        assert!(grids.iter().all(|g| g.len() == 49_001));
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[shot]\nn_m = 100\nnm = 3\n").unwrap_err().to_string();
        assert!(err.contains("nm"), "{err}");
        let err = RunConfig::from_toml("sead = 4\n").unwrap_err().to_string();
        assert!(err.contains("sead"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::preset(Preset::LowField);
        cfg.seed = 77;
        cfg.grids[0].selection_file = Some(PathBuf::from("sel.txt"));
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[shot]\nn_m = 0\n").is_err());
        assert!(RunConfig::from_toml("[prior]\nn_min = 5\nn_max = 2\n").is_err());
        assert!(RunConfig::from_toml("grids = []\n").is_err());
        assert!(RunConfig::from_toml("[metrics]\nthreshold = 1.5\n").is_err());
    }
}
