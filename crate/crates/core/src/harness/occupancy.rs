//! Labeled occupancy data for measuring what sensor selection does to a
//! downstream classifier.
//!
//! A room alternates between occupied and empty segments. Three motion
//! detectors fire with high probability while the room is occupied and rarely
//! otherwise; one of them is stuck at 1. Two CO2 sensors relax toward an
//! occupied or empty equilibrium. A fixed threshold classifier labels every
//! service activation from the emitted feature vector.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::harness::synth::rng_for;
use crate::model::{Millis, Modality, QosProfile, SensorId, SensorSpec, SensorStream};
use crate::pipeline::{
    FeatureFunction, FeatureRegistry, FeatureVector, MissingPolicy, Mode, Pipeline, PipelineConfig, ServiceConfig,
    Statistic, WindowShape,
};

pub const PRESENCE: &str = "presence";
pub const CO2_MEAN: &str = "co2_mean";
const ZONE: &str = "room";

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySetup {
    pub horizon_ms: Millis,
    pub min_segment_ms: Millis,
    pub max_segment_ms: Millis,
    pub motion_sensors: Vec<SensorId>,
    /// Reports 1 for the whole run.
    pub corrupted: SensorId,
    pub co2_sensors: Vec<SensorId>,
    pub p_fire_occupied: f64,
    pub p_fire_empty: f64,
    pub co2_occupied: f64,
    pub co2_empty: f64,
    pub co2_time_constant_s: f64,
    pub co2_noise: f64,
    pub service_period_ms: Millis,
}

impl Default for OccupancySetup {
    fn default() -> Self {
        OccupancySetup {
            horizon_ms: 3_600_000,
            min_segment_ms: 60_000,
            max_segment_ms: 300_000,
            motion_sensors: vec!["M1".into(), "M2".into(), "M3".into()],
            corrupted: "M1".into(),
            co2_sensors: vec!["C1".into(), "C2".into()],
            p_fire_occupied: 0.6,
            p_fire_empty: 0.02,
            co2_occupied: 900.0,
            co2_empty: 420.0,
            co2_time_constant_s: 300.0,
            co2_noise: 10.0,
            service_period_ms: 10_000,
        }
    }
}

/// Ground truth as `(start, end, occupied)` segments covering `]0, horizon]`.
pub fn occupancy_segments(setup: &OccupancySetup, seed: u64) -> Vec<(Millis, Millis, bool)> {
    let mut rng = rng_for(seed, "occupancy/segments");
    let mut occupied = rng.random_bool(0.5);
    let mut t = 0;
    let mut out = Vec::new();
    while t < setup.horizon_ms {
        let len = rng.random_range(setup.min_segment_ms..=setup.max_segment_ms);
        let end = (t + len).min(setup.horizon_ms);
        out.push((t, end, occupied));
        t = end;
        occupied = !occupied;
    }
    out
}

pub fn occupied_at(segments: &[(Millis, Millis, bool)], t: Millis) -> bool {
    segments
        .iter()
        .find(|(a, b, _)| *a < t && t <= *b)
        .map(|s| s.2)
        .unwrap_or(false)
}

pub fn occupancy_streams(setup: &OccupancySetup, seed: u64) -> Result<Vec<SensorStream>> {
    let segments = occupancy_segments(setup, seed);
    let ticks: Vec<Millis> = (1..=setup.horizon_ms / 1000).map(|i| i * 1000).collect();
    let mut streams = Vec::new();
    for id in &setup.motion_sensors {
        let mut rng = rng_for(seed, &format!("occupancy/{id}"));
        let samples = ticks.iter().map(|&t| {
            let fired = if *id == setup.corrupted {
                true
            } else {
                let p = if occupied_at(&segments, t) { setup.p_fire_occupied } else { setup.p_fire_empty };
                rng.random_bool(p)
            };
            (t, if fired { 1.0 } else { 0.0 })
        });
        streams.push(SensorStream::from_samples(id.clone(), Modality::Motion, samples)?.with_period_hint(1.0));
    }
    let noise = Normal::new(0.0, setup.co2_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut level = setup.co2_empty;
    let mut truth = Vec::with_capacity(ticks.len());
    for &t in &ticks {
        let target = if occupied_at(&segments, t) { setup.co2_occupied } else { setup.co2_empty };
        level += (target - level) / setup.co2_time_constant_s;
        truth.push(level);
    }
    for id in &setup.co2_sensors {
        let mut rng = rng_for(seed, &format!("occupancy/{id}"));
        let samples = ticks.iter().zip(&truth).map(|(&t, &v)| (t, v + noise.sample(&mut rng)));
        streams.push(SensorStream::from_samples(id.clone(), Modality::Co2, samples)?.with_period_hint(1.0));
    }
    Ok(streams)
}

/// Occupied iff the motion presence fraction or the CO2 mean reaches its
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdClassifier {
    pub presence_fraction: f64,
    pub co2_ppm: f64,
}

impl Default for ThresholdClassifier {
    fn default() -> Self {
        ThresholdClassifier {
            presence_fraction: 0.5,
            co2_ppm: 800.0,
        }
    }
}

impl ThresholdClassifier {
    /// `None` when neither input is present in the vector.
    pub fn classify(&self, v: &FeatureVector) -> Option<bool> {
        let get = |k: &str| v.components.get(k).copied().flatten();
        let fraction = get(&format!("{PRESENCE}.fraction"));
        let co2 = get(CO2_MEAN);
        if fraction.is_none() && co2.is_none() {
            return None;
        }
        Some(fraction.is_some_and(|f| f >= self.presence_fraction) || co2.is_some_and(|c| c >= self.co2_ppm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyOutcome {
    pub seed: u64,
    pub mode: Mode,
    pub correct: usize,
    pub labeled: usize,
    /// Activations in which the corrupted detector was selected.
    pub corrupted_selected: usize,
}

impl OccupancyOutcome {
    pub fn accuracy(&self) -> f64 {
        if self.labeled == 0 {
            0.0
        } else {
            self.correct as f64 / self.labeled as f64
        }
    }
}

fn pipeline(setup: &OccupancySetup, seed: u64, mode: Mode) -> Result<Pipeline> {
    let mut specs = Vec::new();
    for id in &setup.motion_sensors {
        specs.push(SensorSpec::new(id.0.clone(), Modality::Motion, ZONE, 1.0, 0.5, 10.0));
    }
    for id in &setup.co2_sensors {
        specs.push(SensorSpec::new(id.0.clone(), Modality::Co2, ZONE, 10.0, 30.0, 5000.0));
    }
    let mut registry = FeatureRegistry::new();
    registry.register(FeatureFunction::presence(PRESENCE, Modality::Motion, 0.3, 0.5))?;
    registry.register(FeatureFunction::stat(CO2_MEAN, Modality::Co2, Statistic::Mean))?;
    let mut qos = QosProfile::new("occupancy", [1.0, 1.0, 0.1, 0.1, 0.1]);
    qos.modality_needs = [Modality::Motion, Modality::Co2].into_iter().collect();
    let service = ServiceConfig {
        qos,
        period_ms: setup.service_period_ms,
        offset_ms: 0,
        window: WindowShape {
            k_l: 3,
            k_r: 0,
            delta_t_ms: 10_000,
        },
        zones: BTreeSet::from([ZONE.to_string()]),
        features: vec![PRESENCE.into(), CO2_MEAN.into()],
        missing: MissingPolicy::Mark,
    };
    let cfg = PipelineConfig {
        mode,
        ..PipelineConfig::default()
    };
    Pipeline::new(cfg, specs, occupancy_streams(setup, seed)?, vec![service], registry)
}

/// Runs the occupancy service in `mode` and scores the classifier against
/// the ground truth at every activation.
pub fn evaluate_occupancy(
    setup: &OccupancySetup,
    classifier: &ThresholdClassifier,
    seed: u64,
    mode: Mode,
) -> Result<OccupancyOutcome> {
    let segments = occupancy_segments(setup, seed);
    let mut p = pipeline(setup, seed, mode)?;
    let mut outcome = OccupancyOutcome {
        seed,
        mode,
        correct: 0,
        labeled: 0,
        corrupted_selected: 0,
    };
    for out in p.run(setup.horizon_ms)? {
        let corrupted = out
            .selections
            .values()
            .any(|sel| sel.get(&Modality::Motion).is_some_and(|ids| ids.contains(&setup.corrupted)));
        outcome.corrupted_selected += usize::from(corrupted);
        for v in &out.vectors {
            if let Some(pred) = classifier.classify(v) {
                outcome.labeled += 1;
                outcome.correct += usize::from(pred == occupied_at(&segments, v.t_ms));
            }
        }
    }
    Ok(outcome)
}
