//! Scenario configuration, read from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::KalmanConfig;
use crate::model::{BetaSource, Millis, Modality, QosProfile, SensorId, SensorSpec, UtopiaVector, ATTRIBUTE_COUNT};
use crate::pipeline::{
    FeatureFunction, FeatureRegistry, MissingPolicy, Mode, PipelineConfig, ServiceConfig, Statistic, WindowShape,
    DEFAULT_CACHE_HORIZON_MS,
};
use crate::voting::VotingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub start_ms: Millis,
    pub horizon_ms: Millis,
    #[serde(default)]
    pub voting: VotingConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    #[serde(default)]
    pub reliability: ReliabilitySection,
    #[serde(default)]
    pub alignment: AlignmentSection,
    #[serde(default)]
    pub cache: CacheSection,
    #[serde(default)]
    pub sensors: Vec<SensorEntry>,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub csv: Vec<CsvSource>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub features: Vec<FeatureEntry>,
    #[serde(default)]
    pub services: Vec<ServiceEntry>,
    /// Directory relative CSV paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilitySection {
    pub interval_ms: Millis,
}

impl Default for ReliabilitySection {
    fn default() -> Self {
        ReliabilitySection { interval_ms: 15_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    pub max_gap_ms: Millis,
    pub tolerance_ms: Millis,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection {
            max_gap_ms: 10_000,
            tolerance_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub horizon_ms: Millis,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection {
            horizon_ms: DEFAULT_CACHE_HORIZON_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorEntry {
    pub id: SensorId,
    pub modality: Modality,
    #[serde(default = "default_zone")]
    pub zone: String,
    pub resolution: f64,
    pub response_time: f64,
    pub range: f64,
}

fn default_zone() -> String {
    "default".into()
}

impl SensorEntry {
    pub fn spec(&self) -> SensorSpec {
        SensorSpec::new(
            self.id.0.clone(),
            self.modality.clone(),
            self.zone.clone(),
            self.resolution,
            self.response_time,
            self.range,
        )
    }
}

/// Base signal of a synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "signal", rename_all = "snake_case")]
pub enum Signal {
    Constant {
        value: f64,
    },
    Sinusoid {
        offset: f64,
        amplitude: f64,
        period_s: f64,
        #[serde(default)]
        phase: f64,
    },
    Ramp {
        initial: f64,
        slope_per_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub sensor: SensorId,
    /// Sampling period.
    pub period_ms: Millis,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(flatten)]
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    StuckAt { value: f64 },
    Drift { slope_per_s: f64 },
    Spike { magnitude: f64, rate: f64 },
    Dropout { probability: f64 },
}

/// A fault active over `]start_ms, end_ms]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub sensor: SensorId,
    pub start_ms: Millis,
    pub end_ms: Millis,
    #[serde(flatten)]
    pub kind: FaultKind,
}

impl FaultSpec {
    pub fn active_at(&self, t: Millis) -> bool {
        self.start_ms < t && t <= self.end_ms
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_ms >= self.end_ms {
            return Err(Error::Config(format!("fault on {}: empty interval", self.sensor)));
        }
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("fault on {}: {name} {p} outside [0, 1]", self.sensor)))
            }
        };
        match self.kind {
            FaultKind::StuckAt { value: x } | FaultKind::Drift { slope_per_s: x } | FaultKind::Spike { magnitude: x, .. }
                if !x.is_finite() =>
            {
                Err(Error::Config(format!("fault on {}: non-finite parameter", self.sensor)))
            }
            FaultKind::Spike { rate, .. } => unit("rate", rate),
            FaultKind::Dropout { probability } => unit("probability", probability),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKindEntry {
    Mean,
    Std,
    Min,
    Max,
    Last,
    Count,
    Presence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub id: String,
    pub kind: FeatureKindEntry,
    pub modality: Modality,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub min_fraction: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution_ms: Millis,
    #[serde(default)]
    pub window: Option<WindowShape>,
}

fn default_resolution() -> Millis {
    1000
}

impl FeatureEntry {
    pub fn function(&self) -> Result<FeatureFunction> {
        let stat = |s| FeatureFunction::stat(self.id.clone(), self.modality.clone(), s);
        let f = match self.kind {
            FeatureKindEntry::Mean => stat(Statistic::Mean),
            FeatureKindEntry::Std => stat(Statistic::Std),
            FeatureKindEntry::Min => stat(Statistic::Min),
            FeatureKindEntry::Max => stat(Statistic::Max),
            FeatureKindEntry::Last => stat(Statistic::Last),
            FeatureKindEntry::Count => stat(Statistic::Count),
            FeatureKindEntry::Presence => {
                let (Some(threshold), Some(min_fraction)) = (self.threshold, self.min_fraction) else {
                    return Err(Error::Config(format!(
                        "feature {}: presence needs threshold and min_fraction",
                        self.id
                    )));
                };
                FeatureFunction::presence(self.id.clone(), self.modality.clone(), threshold, min_fraction)
            }
        };
        let f = f.with_resolution(self.resolution_ms);
        Ok(match self.window {
            Some(w) => f.with_window(w),
            None => f,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceEntry {
    pub id: String,
    pub period_ms: Millis,
    #[serde(default)]
    pub offset_ms: Millis,
    pub weights: [f64; ATTRIBUTE_COUNT],
    #[serde(default)]
    pub utopia: UtopiaVector,
    pub modalities: Vec<Modality>,
    /// `None` means every zone that has a sensor.
    #[serde(default)]
    pub zones: Option<Vec<String>>,
    #[serde(default = "default_resolution")]
    pub granularity_ms: Millis,
    #[serde(default = "default_select_count")]
    pub select_count: usize,
    #[serde(default)]
    pub beta_source: BetaSource,
    pub window: WindowShape,
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

fn default_select_count() -> usize {
    1
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn end_ms(&self) -> Millis {
        self.start_ms + self.horizon_ms
    }

    fn sensor(&self, id: &SensorId) -> Option<&SensorEntry> {
        self.sensors.iter().find(|s| &s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_ms <= 0 || self.start_ms < 0 {
            return Err(Error::Config("horizon must be positive and start nonnegative".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.sensors {
            if !ids.insert(&s.id) {
                return Err(Error::Config(format!("sensor {} declared twice", s.id)));
            }
        }
        for g in &self.generators {
            if self.sensor(&g.sensor).is_none() {
                return Err(Error::Config(format!("generator for unknown sensor {}", g.sensor)));
            }
        }
        for f in &self.faults {
            if self.sensor(&f.sensor).is_none() {
                return Err(Error::Config(format!("fault on unknown sensor {}", f.sensor)));
            }
            f.validate()?;
            if f.start_ms < self.start_ms || f.end_ms > self.end_ms() {
                return Err(Error::Config(format!("fault on {} lies outside the scenario", f.sensor)));
            }
        }
        Ok(())
    }

    pub fn pipeline_config(&self, mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            start_ms: self.start_ms,
            voting: self.voting.clone(),
            kalman: self.kalman.clone(),
            reliability_interval_ms: self.reliability.interval_ms,
            max_gap_ms: self.alignment.max_gap_ms,
            tolerance_ms: self.alignment.tolerance_ms,
            cache_horizon_ms: self.cache.horizon_ms,
        }
    }

    pub fn sensor_specs(&self) -> Vec<SensorSpec> {
        self.sensors.iter().map(SensorEntry::spec).collect()
    }

    pub fn registry(&self) -> Result<FeatureRegistry> {
        let mut r = FeatureRegistry::new();
        for f in &self.features {
            r.register(f.function()?)?;
        }
        Ok(r)
    }

    pub fn service_configs(&self) -> Vec<ServiceConfig> {
        let all_zones: BTreeSet<String> = self.sensors.iter().map(|s| s.zone.clone()).collect();
        self.services
            .iter()
            .map(|s| {
                let mut qos = QosProfile::new(s.id.clone(), s.weights);
                qos.utopia = s.utopia;
                qos.modality_needs = s.modalities.iter().cloned().collect();
                qos.granularity_ms = s.granularity_ms;
                qos.select_count = s.select_count;
                qos.beta_source = s.beta_source;
                ServiceConfig {
                    qos,
                    period_ms: s.period_ms,
                    offset_ms: s.offset_ms,
                    window: s.window,
                    zones: match &s.zones {
                        Some(z) => z.iter().cloned().collect(),
                        None => all_zones.clone(),
                    },
                    features: s.features.clone(),
                    missing: s.missing,
                }
            })
            .collect()
    }

    /// Fault windows per sensor.
    pub fn fault_windows(&self) -> BTreeMap<SensorId, Vec<(Millis, Millis)>> {
        let mut out: BTreeMap<SensorId, Vec<(Millis, Millis)>> = BTreeMap::new();
        for f in &self.faults {
            out.entry(f.sensor.clone()).or_default().push((f.start_ms, f.end_ms));
        }
        out
    }
}
