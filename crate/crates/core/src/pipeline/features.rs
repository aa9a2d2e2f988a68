//! Feature functions, their registry, and the memoizing cache that lets
//! services share a computation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Millis, Modality, SensorId};
use crate::pipeline::window::{WindowShape, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    RawStat,
    LowLevelInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    /// Population standard deviation.
    Std,
    Min,
    Max,
    Last,
    Count,
}

impl Statistic {
    fn apply(self, xs: &[f64]) -> Option<f64> {
        if xs.is_empty() {
            return match self {
                Statistic::Count => Some(0.0),
                _ => None,
            };
        }
        let n = xs.len() as f64;
        Some(match self {
            Statistic::Mean => xs.iter().sum::<f64>() / n,
            Statistic::Std => {
                let m = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
            }
            Statistic::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Statistic::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Statistic::Last => xs[xs.len() - 1],
            Statistic::Count => n,
        })
    }
}

/// Fused per-modality series over one window, the input of every kernel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureInput {
    pub sensors: BTreeSet<SensorId>,
    pub series: BTreeMap<Modality, Vec<f64>>,
}

impl FeatureInput {
    pub fn series(&self, m: &Modality) -> &[f64] {
        self.series.get(m).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub type CustomKernel = Arc<dyn Fn(&FeatureInput) -> Option<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum Kernel {
    Stat { modality: Modality, statistic: Statistic },
    /// Presence detection on a fused activity signal: outputs
    /// `[flag, fraction]` where `fraction` is the share of ticks at or above
    /// `threshold` and `flag` is 1 when that share reaches `min_fraction`.
    Presence { modality: Modality, threshold: f64, min_fraction: f64 },
    Custom(CustomKernel),
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Stat { modality, statistic } => write!(f, "Stat({modality}, {statistic:?})"),
            Kernel::Presence { modality, threshold, min_fraction } => {
                write!(f, "Presence({modality}, {threshold}, {min_fraction})")
            }
            Kernel::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureFunction {
    pub id: String,
    pub kind: FeatureKind,
    pub modalities: BTreeSet<Modality>,
    /// Own window shape; `None` uses the requesting service's window.
    pub window: Option<WindowShape>,
    /// Spacing of the fusion grid inside the window.
    pub resolution_ms: Millis,
    pub outputs: Vec<String>,
    pub kernel: Kernel,
}

impl FeatureFunction {
    pub fn stat(id: impl Into<String>, modality: Modality, statistic: Statistic) -> Self {
        FeatureFunction {
            id: id.into(),
            kind: FeatureKind::RawStat,
            modalities: BTreeSet::from([modality.clone()]),
            window: None,
            resolution_ms: 1000,
            outputs: vec!["value".into()],
            kernel: Kernel::Stat { modality, statistic },
        }
    }

    pub fn presence(id: impl Into<String>, modality: Modality, threshold: f64, min_fraction: f64) -> Self {
        FeatureFunction {
            id: id.into(),
            kind: FeatureKind::LowLevelInference,
            modalities: BTreeSet::from([modality.clone()]),
            window: None,
            resolution_ms: 1000,
            outputs: vec!["flag".into(), "fraction".into()],
            kernel: Kernel::Presence {
                modality,
                threshold,
                min_fraction,
            },
        }
    }

    pub fn custom(
        id: impl Into<String>,
        modalities: impl IntoIterator<Item = Modality>,
        outputs: Vec<String>,
        kernel: CustomKernel,
    ) -> Self {
        FeatureFunction {
            id: id.into(),
            kind: FeatureKind::RawStat,
            modalities: modalities.into_iter().collect(),
            window: None,
            resolution_ms: 1000,
            outputs,
            kernel: Kernel::Custom(kernel),
        }
    }

    pub fn with_window(mut self, shape: WindowShape) -> Self {
        self.window = Some(shape);
        self
    }

    pub fn with_resolution(mut self, resolution_ms: Millis) -> Self {
        self.resolution_ms = resolution_ms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("feature id is empty".into()));
        }
        if self.resolution_ms <= 0 {
            return Err(Error::Config(format!("{}: resolution must be positive", self.id)));
        }
        if self.outputs.is_empty() {
            return Err(Error::Config(format!("{}: no outputs declared", self.id)));
        }
        if let Some(w) = &self.window {
            w.at(0)?;
        }
        Ok(())
    }

    /// Component names this function contributes to a feature vector.
    pub fn component_names(&self) -> Vec<String> {
        if self.outputs.len() == 1 {
            vec![self.id.clone()]
        } else {
            self.outputs.iter().map(|o| format!("{}.{o}", self.id)).collect()
        }
    }

    /// Runs the kernel. `None` marks a missing feature.
    pub fn evaluate(&self, input: &FeatureInput) -> Option<Vec<f64>> {
        let out = match &self.kernel {
            Kernel::Stat { modality, statistic } => statistic.apply(input.series(modality)).map(|v| vec![v]),
            Kernel::Presence {
                modality,
                threshold,
                min_fraction,
            } => {
                let xs = input.series(modality);
                if xs.is_empty() {
                    None
                } else {
                    let fraction = xs.iter().filter(|x| **x >= *threshold).count() as f64 / xs.len() as f64;
                    let flag = if fraction >= *min_fraction { 1.0 } else { 0.0 };
                    Some(vec![flag, fraction])
                }
            }
            Kernel::Custom(f) => f(input),
        }?;
        (out.len() == self.outputs.len() && out.iter().all(|v| v.is_finite())).then_some(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeatureRegistry {
    functions: BTreeMap<String, FeatureFunction>,
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, f: FeatureFunction) -> Result<()> {
        f.validate()?;
        if self.functions.contains_key(&f.id) {
            return Err(Error::Config(format!("feature {} registered twice", f.id)));
        }
        self.functions.insert(f.id.clone(), f);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureFunction> {
        self.functions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureFunction> {
        self.functions.values()
    }
}

/// Memoization key of a feature computation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FeatureKey {
    pub function: String,
    pub t_a: Millis,
    pub t_b: Millis,
    pub sensors: Vec<SensorId>,
}

impl FeatureKey {
    pub fn new(function: &FeatureFunction, window: &WindowSpec, sensors: &BTreeSet<SensorId>) -> Self {
        FeatureKey {
            function: function.id.clone(),
            t_a: window.t_a,
            t_b: window.t_b,
            sensors: sensors.iter().cloned().collect(),
        }
    }
}

/// Memoization key of a fused series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FusionKey {
    pub modality: Modality,
    pub t_a: Millis,
    pub t_b: Millis,
    pub resolution_ms: Millis,
    pub sensors: Vec<SensorId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub feature_invocations: u64,
    pub feature_hits: u64,
    pub fusion_invocations: u64,
    pub fusion_hits: u64,
    pub evicted: u64,
}

impl std::ops::AddAssign for CacheStats {
    fn add_assign(&mut self, o: Self) {
        self.feature_invocations += o.feature_invocations;
        self.feature_hits += o.feature_hits;
        self.fusion_invocations += o.fusion_invocations;
        self.fusion_hits += o.fusion_hits;
        self.evicted += o.evicted;
    }
}

/// Results keyed by window; entries whose window ended more than `horizon_ms`
/// before the latest eviction instant are dropped.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    horizon_ms: Millis,
    features: BTreeMap<FeatureKey, Option<Vec<f64>>>,
    fused: BTreeMap<FusionKey, Vec<f64>>,
    pub stats: CacheStats,
}

pub const DEFAULT_CACHE_HORIZON_MS: Millis = 10 * 60 * 1000;

impl Default for FeatureCache {
    fn default() -> Self {
        FeatureCache::new(DEFAULT_CACHE_HORIZON_MS)
    }
}

impl FeatureCache {
    pub fn new(horizon_ms: Millis) -> Self {
        FeatureCache {
            horizon_ms,
            features: BTreeMap::new(),
            fused: BTreeMap::new(),
            stats: CacheStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.fused.clear();
    }

    pub fn evict(&mut self, now: Millis) {
        let cutoff = now - self.horizon_ms;
        let before = self.features.len() + self.fused.len();
        self.features.retain(|k, _| k.t_b >= cutoff);
        self.fused.retain(|k, _| k.t_b >= cutoff);
        self.stats.evicted += (before - self.features.len() - self.fused.len()) as u64;
    }

    /// Cached fused series, or `compute()` stored under `key`.
    pub fn fused_series(&mut self, key: FusionKey, compute: impl FnOnce() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        if let Some(v) = self.fused.get(&key) {
            self.stats.fusion_hits += 1;
            return Ok(v.clone());
        }
        self.stats.fusion_invocations += 1;
        let v = compute()?;
        self.fused.insert(key, v.clone());
        Ok(v)
    }
}

/// Evaluates `function` on `input` over `window`, memoized under
/// (function id, window bounds, contributing sensors).
pub fn compute_feature(
    function: &FeatureFunction,
    window: &WindowSpec,
    input: &FeatureInput,
    cache: &mut FeatureCache,
) -> Option<Vec<f64>> {
    let key = FeatureKey::new(function, window, &input.sensors);
    if let Some(v) = cache.features.get(&key) {
        cache.stats.feature_hits += 1;
        return v.clone();
    }
    cache.stats.feature_invocations += 1;
    let out = function.evaluate(input);
    cache.features.insert(key, out.clone());
    out
}
