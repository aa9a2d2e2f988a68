//! The unified preprocessing orchestrator: cohort scoring, per-service
//! selection, fusion of the selected streams, windowing and feature
//! extraction with shared memoization.

mod features;
mod scoring;
mod window;

pub use features::{
    compute_feature, CacheStats, CustomKernel, FeatureCache, FeatureFunction, FeatureInput, FeatureKey, FeatureKind,
    FeatureRegistry, FusionKey, Kernel, Statistic, DEFAULT_CACHE_HORIZON_MS,
};
pub use scoring::CohortScorer;
pub use window::{associate, form_window, Association, AssociationPredicate, WindowShape, WindowSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{align_on_ticks, kalman_fuse_streams, KalmanConfig};
use crate::model::{
    validate_spec, DataPoint, Millis, Modality, QosProfile, SensorId, SensorSpec, SensorStateVector, SensorStream,
    StaticAttribute,
};
use crate::ranking::{rank_and_select, static_score, topsis_select, RankingResult};
use crate::voting::VotingConfig;
use window::associated_slice;

/// How sensors are chosen for each service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Direction-aware distance to the service's utopia vector.
    Ranked,
    /// Static TOPSIS baseline.
    Topsis,
    /// Every live sensor.
    All,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unified,
    PerService,
    TopsisBaseline,
    NoSelectionFused,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Unified, Mode::PerService, Mode::TopsisBaseline, Mode::NoSelectionFused];

    pub fn selection(self) -> SelectionMode {
        match self {
            Mode::Unified | Mode::PerService => SelectionMode::Ranked,
            Mode::TopsisBaseline => SelectionMode::Topsis,
            Mode::NoSelectionFused => SelectionMode::All,
        }
    }

    /// Whether services share one feature cache.
    pub fn shares_cache(self) -> bool {
        self != Mode::PerService
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unified => "unified",
            Mode::PerService => "per_service",
            Mode::TopsisBaseline => "topsis_baseline",
            Mode::NoSelectionFused => "no_selection_fused",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// What a service receives when a feature cannot be computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Emit the component as missing.
    #[default]
    Mark,
    Fill(f64),
    /// Emit no vector for that activation.
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub qos: QosProfile,
    pub period_ms: Millis,
    /// First activation at `start + offset + period`.
    pub offset_ms: Millis,
    pub window: WindowShape,
    pub zones: BTreeSet<String>,
    pub features: Vec<String>,
    pub missing: MissingPolicy,
}

impl ServiceConfig {
    pub fn id(&self) -> &str {
        &self.qos.service_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub start_ms: Millis,
    pub voting: VotingConfig,
    pub kalman: KalmanConfig,
    pub reliability_interval_ms: Millis,
    pub max_gap_ms: Millis,
    pub tolerance_ms: Millis,
    pub cache_horizon_ms: Millis,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Unified,
            start_ms: 0,
            voting: VotingConfig::default(),
            kalman: KalmanConfig::default(),
            reliability_interval_ms: 15_000,
            max_gap_ms: 10_000,
            tolerance_ms: 0,
            cache_horizon_ms: DEFAULT_CACHE_HORIZON_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub t_ms: Millis,
    pub service_id: String,
    pub components: BTreeMap<String, Option<f64>>,
    pub provenance: Vec<String>,
}

/// One row of the selection trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t_ms: Millis,
    pub service_id: String,
    pub sensor_id: SensorId,
    #[serde(rename = "d_M")]
    pub d_m: f64,
    #[serde(rename = "d_A")]
    pub d_a: f64,
    #[serde(rename = "d_MA")]
    pub d_ma: f64,
    pub rank: usize,
    pub selected: bool,
}

pub const TRACE_HEADER: [&str; 8] = ["t_ms", "service_id", "sensor_id", "d_M", "d_A", "d_MA", "rank", "selected"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceError {
    pub t_ms: Millis,
    pub service_id: String,
    pub message: String,
}

/// A feature lookup made on behalf of a service.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRequest {
    pub service_id: String,
    pub key: FeatureKey,
    pub hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleOutput {
    pub t_ms: Millis,
    pub vectors: Vec<FeatureVector>,
    pub trace: Vec<TraceRow>,
    pub errors: Vec<ServiceError>,
    pub requests: Vec<FeatureRequest>,
    /// Services whose vector was dropped by their missing-data policy.
    pub dropped: Vec<String>,
    /// Selected sensors per service and modality.
    pub selections: BTreeMap<String, BTreeMap<Modality, Vec<SensorId>>>,
    pub points_processed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub cycles: u64,
    pub activations: u64,
    pub points_processed: u64,
    pub vectors_emitted: u64,
    pub vectors_dropped: u64,
    pub service_errors: u64,
}

fn gcd(a: Millis, b: Millis) -> Millis {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    specs: BTreeMap<SensorId, SensorSpec>,
    streams: BTreeMap<SensorId, SensorStream>,
    services: Vec<ServiceConfig>,
    registry: FeatureRegistry,
    scorers: BTreeMap<(Modality, String), CohortScorer>,
    caches: BTreeMap<String, FeatureCache>,
    counters: Counters,
}

impl Pipeline {
    pub fn new(
        cfg: PipelineConfig,
        specs: Vec<SensorSpec>,
        streams: Vec<SensorStream>,
        mut services: Vec<ServiceConfig>,
        registry: FeatureRegistry,
    ) -> Result<Self> {
        cfg.voting.validate()?;
        cfg.kalman.validate()?;
        if cfg.reliability_interval_ms <= 0 || cfg.max_gap_ms < 0 || cfg.tolerance_ms < 0 || cfg.cache_horizon_ms < 0 {
            return Err(Error::Config(
                "reliability interval must be positive; gap, tolerance and cache horizon nonnegative".into(),
            ));
        }
        let mut spec_map = BTreeMap::new();
        for spec in specs {
            let report = validate_spec(&spec);
            if let Some(v) = report.violations.first() {
                return Err(Error::Config(format!("sensor {}: {} {}", spec.sensor_id, v.field, v.message)));
            }
            if spec_map.insert(spec.sensor_id.clone(), spec).is_some() {
                return Err(Error::Config("duplicate sensor spec".into()));
            }
        }
        let mut stream_map = BTreeMap::new();
        for s in streams {
            let spec = spec_map
                .get(s.sensor_id())
                .ok_or_else(|| Error::Config(format!("stream for unknown sensor {}", s.sensor_id())))?;
            if &spec.modality != s.modality() {
                return Err(Error::Config(format!(
                    "stream {} has modality {} but its spec says {}",
                    s.sensor_id(),
                    s.modality(),
                    spec.modality
                )));
            }
            let merged = match stream_map.remove(s.sensor_id()) {
                Some(prev) => SensorStream::merge(&prev, &s)?,
                None => s,
            };
            stream_map.insert(merged.sensor_id().clone(), merged);
        }
        for spec in spec_map.values() {
            stream_map
                .entry(spec.sensor_id.clone())
                .or_insert_with(|| SensorStream::empty(spec.sensor_id.clone(), spec.modality.clone()));
        }

        services.sort_by(|a, b| a.id().cmp(b.id()));
        for pair in services.windows(2) {
            if pair[0].id() == pair[1].id() {
                return Err(Error::Config(format!("service {} declared twice", pair[0].id())));
            }
        }
        for svc in &services {
            svc.qos.validate()?;
            if svc.period_ms <= 0 || svc.offset_ms < 0 {
                return Err(Error::Config(format!("{}: period must be positive and offset nonnegative", svc.id())));
            }
            svc.window.at(0)?;
            if svc.zones.is_empty() {
                return Err(Error::Config(format!("{}: no zones", svc.id())));
            }
            for fid in &svc.features {
                let f = registry
                    .get(fid)
                    .ok_or_else(|| Error::Config(format!("{}: unknown feature {fid}", svc.id())))?;
                if let Some(m) = f.modalities.iter().find(|m| !svc.qos.modality_needs.contains(m)) {
                    return Err(Error::Config(format!(
                        "{}: feature {fid} needs {m}, which the service does not declare",
                        svc.id()
                    )));
                }
            }
        }

        let mut cohorts: BTreeMap<(Modality, String), Vec<SensorId>> = BTreeMap::new();
        for spec in spec_map.values() {
            cohorts
                .entry((spec.modality.clone(), spec.zone.clone()))
                .or_default()
                .push(spec.sensor_id.clone());
        }
        let mut scorers = BTreeMap::new();
        for ((modality, zone), members) in cohorts {
            let granularity = services
                .iter()
                .filter(|s| s.qos.modality_needs.contains(&modality))
                .map(|s| s.qos.granularity_ms)
                .min()
                .unwrap_or(1000);
            let scorer = CohortScorer::new(
                modality.clone(),
                zone.clone(),
                members,
                cfg.start_ms,
                granularity,
                cfg.reliability_interval_ms,
            )?;
            scorers.insert((modality, zone), scorer);
        }

        let caches = if cfg.mode.shares_cache() {
            BTreeMap::from([(String::new(), FeatureCache::new(cfg.cache_horizon_ms))])
        } else {
            services
                .iter()
                .map(|s| (s.id().to_string(), FeatureCache::new(cfg.cache_horizon_ms)))
                .collect()
        };

        Ok(Pipeline {
            cfg,
            specs: spec_map,
            streams: stream_map,
            services,
            registry,
            scorers,
            caches,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn services(&self) -> &[ServiceConfig] {
        &self.services
    }

    pub fn scorer(&self, modality: &Modality, zone: &str) -> Option<&CohortScorer> {
        self.scorers.get(&(modality.clone(), zone.to_string()))
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Totals over every cache.
    pub fn cache_stats(&self) -> CacheStats {
        let mut total = CacheStats::default();
        for c in self.caches.values() {
            total += c.stats;
        }
        total
    }

    /// Orchestrator step: the GCD of all service periods and offsets.
    pub fn tick_ms(&self) -> Option<Millis> {
        self.services
            .iter()
            .flat_map(|s| [s.period_ms, s.offset_ms])
            .fold(None, |acc, p| match acc {
                None if p > 0 => Some(p),
                Some(g) => Some(gcd(g, p)),
                None => None,
            })
    }

    /// Cycle instants in `]start, start + horizon]`.
    pub fn schedule(&self, horizon_ms: Millis) -> Vec<Millis> {
        let Some(step) = self.tick_ms() else {
            return Vec::new();
        };
        let start = self.cfg.start_ms;
        (1..)
            .map(|i| start + i * step)
            .take_while(|t| *t <= start + horizon_ms)
            .collect()
    }

    pub fn is_due(&self, svc: &ServiceConfig, t: Millis) -> bool {
        let since = t - self.cfg.start_ms - svc.offset_ms;
        since > 0 && since % svc.period_ms == 0
    }

    fn state_vector(&self, id: &SensorId, svc: &ServiceConfig, t: Millis) -> Result<SensorStateVector> {
        let spec = &self.specs[id];
        let scorer = &self.scorers[&(spec.modality.clone(), spec.zone.clone())];
        let mut statics = [0.0; 3];
        for (slot, attr) in statics.iter_mut().zip(StaticAttribute::ALL) {
            let a = spec
                .static_attrs
                .get(&attr)
                .ok_or_else(|| Error::Config(format!("sensor {id} lacks {attr}")))?;
            *slot = static_score(a.raw, a.direction)?;
        }
        SensorStateVector::new(
            id.clone(),
            t,
            [
                scorer.alpha(id),
                scorer.beta(id, svc.qos.beta_source)?,
                statics[0],
                statics[1],
                statics[2],
            ],
        )
    }

    fn select(&self, svc: &ServiceConfig, cohort: &[SensorStateVector]) -> Result<RankingResult> {
        let count = svc.qos.select_count.min(cohort.len());
        match self.cfg.mode.selection() {
            SelectionMode::Ranked => rank_and_select(cohort, &svc.qos, count),
            SelectionMode::Topsis => topsis_select(cohort, &svc.qos, count),
            SelectionMode::All => rank_and_select(cohort, &svc.qos, cohort.len()),
        }
    }

    /// Runs one orchestrator cycle at `t`: advances every cohort's scoring to
    /// `t`, then serves each due service in id order.
    pub fn run_cycle(&mut self, t: Millis) -> Result<CycleOutput> {
        for scorer in self.scorers.values_mut() {
            scorer.advance_to(t, &self.streams, &self.cfg.voting, &self.cfg.kalman, self.cfg.max_gap_ms)?;
        }
        for cache in self.caches.values_mut() {
            cache.evict(t);
        }
        let mut out = CycleOutput {
            t_ms: t,
            ..CycleOutput::default()
        };
        self.counters.cycles += 1;
        let due: Vec<usize> = (0..self.services.len())
            .filter(|&i| self.is_due(&self.services[i], t))
            .collect();
        for i in due {
            self.counters.activations += 1;
            let sid = self.services[i].id().to_string();
            if let Err(e) = self.serve(i, t, &mut out) {
                out.errors.push(ServiceError {
                    t_ms: t,
                    service_id: sid,
                    message: e.to_string(),
                });
                self.counters.service_errors += 1;
            }
        }
        self.counters.points_processed += out.points_processed;
        Ok(out)
    }

    fn serve(&mut self, idx: usize, t: Millis, out: &mut CycleOutput) -> Result<()> {
        let svc = self.services[idx].clone();
        let window = svc.window.at(t)?;
        let pred = AssociationPredicate {
            tolerance_ms: self.cfg.tolerance_ms,
            zones: svc.zones.clone(),
        };

        let mut selected: BTreeMap<Modality, Vec<SensorId>> = BTreeMap::new();
        let mut trace = Vec::new();
        for modality in &svc.qos.modality_needs {
            let live: Vec<&SensorId> = self
                .specs
                .values()
                .filter(|s| &s.modality == modality)
                .filter(|s| !associated_slice(self.streams[&s.sensor_id].points(), &pred, &window, &s.zone).is_empty())
                .map(|s| &s.sensor_id)
                .collect();
            if live.is_empty() {
                return Err(Error::Stream(format!("no live {modality} sensor in the window ending at {t}")));
            }
            let cohort = live
                .iter()
                .map(|id| self.state_vector(id, &svc, t))
                .collect::<Result<Vec<_>>>()?;
            let ranking = self.select(&svc, &cohort)?;
            for (pos, id) in ranking.order.iter().enumerate() {
                let s = ranking.score_of(id).expect("ranked sensor has a score");
                trace.push(TraceRow {
                    t_ms: t,
                    service_id: svc.id().to_string(),
                    sensor_id: id.clone(),
                    d_m: s.d_m,
                    d_a: s.d_a,
                    d_ma: s.d_ma,
                    rank: pos + 1,
                    selected: ranking.selected.contains(id),
                });
            }
            let mut chosen = ranking.selected.clone();
            chosen.sort();
            selected.insert(modality.clone(), chosen);
        }

        let cache_key = if self.cfg.mode.shares_cache() { String::new() } else { svc.id().to_string() };
        let mut components = BTreeMap::new();
        let mut provenance: BTreeSet<String> = BTreeSet::new();
        let mut consumed: BTreeSet<(SensorId, Millis)> = BTreeSet::new();
        let mut drop_vector = false;
        for fid in &svc.features {
            let f = self.registry.get(fid).expect("validated at construction").clone();
            let fwindow = match &f.window {
                Some(shape) => shape.at(t)?,
                None => window,
            };
            let mut input = FeatureInput::default();
            for m in &f.modalities {
                let ids = &selected[m];
                let slices: Vec<(&SensorId, &[DataPoint])> = ids
                    .iter()
                    .map(|id| {
                        let zone = &self.specs[id].zone;
                        (id, associated_slice(self.streams[id].points(), &pred, &fwindow, zone))
                    })
                    .collect();
                for (id, pts) in &slices {
                    consumed.extend(pts.iter().map(|p| ((*id).clone(), p.timestamp)));
                    provenance.insert(format!("sensor:{id}"));
                }
                input.sensors.extend(ids.iter().cloned());
                let key = FusionKey {
                    modality: m.clone(),
                    t_a: fwindow.t_a,
                    t_b: fwindow.t_b,
                    resolution_ms: f.resolution_ms,
                    sensors: ids.clone(),
                };
                let kalman = &self.cfg.kalman;
                let max_gap = self.cfg.max_gap_ms;
                let cache = self.caches.get_mut(&cache_key).expect("cache exists for every key");
                let series = cache.fused_series(key, || {
                    let ticks = fwindow.ticks(f.resolution_ms)?;
                    let aligned = align_on_ticks(slices.iter().copied(), &ticks, f.resolution_ms, max_gap);
                    let fused = kalman_fuse_streams(&aligned, kalman, SensorId(format!("fused:{m}")))?;
                    Ok(fused.values().collect())
                })?;
                input.series.insert(m.clone(), series);
            }
            provenance.insert(format!("feature:{fid}"));
            let cache = self.caches.get_mut(&cache_key).expect("cache exists for every key");
            let hits_before = cache.stats.feature_hits;
            let value = compute_feature(&f, &fwindow, &input, cache);
            out.requests.push(FeatureRequest {
                service_id: svc.id().to_string(),
                key: FeatureKey::new(&f, &fwindow, &input.sensors),
                hit: cache.stats.feature_hits > hits_before,
            });
            let names = f.component_names();
            match value {
                Some(vs) => {
                    for (n, v) in names.into_iter().zip(vs) {
                        components.insert(n, Some(v));
                    }
                }
                None => match svc.missing {
                    MissingPolicy::Mark => components.extend(names.into_iter().map(|n| (n, None))),
                    MissingPolicy::Fill(v) => components.extend(names.into_iter().map(|n| (n, Some(v)))),
                    MissingPolicy::Drop => drop_vector = true,
                },
            }
        }

        out.trace.extend(trace);
        out.points_processed += consumed.len() as u64;
        out.selections.insert(svc.id().to_string(), selected);
        if drop_vector {
            out.dropped.push(svc.id().to_string());
            self.counters.vectors_dropped += 1;
        } else {
            out.vectors.push(FeatureVector {
                t_ms: t,
                service_id: svc.id().to_string(),
                components,
                provenance: provenance.into_iter().collect(),
            });
            self.counters.vectors_emitted += 1;
        }
        Ok(())
    }

    /// Runs every scheduled cycle over `]start, start + horizon]`.
    pub fn run(&mut self, horizon_ms: Millis) -> Result<Vec<CycleOutput>> {
        self.schedule(horizon_ms).into_iter().map(|t| self.run_cycle(t)).collect()
    }
}
