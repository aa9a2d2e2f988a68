//! Stream alignment by linear interpolation and multi-stream fusion with a
//! scalar random-walk Kalman filter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataPoint, Millis, SensorId, SensorStream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Adopt the first measurement as the state; it is not re-applied as an
    /// update.
    #[default]
    FirstMeasurement,
    /// Start from the mean of the measurements, then apply all of them.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    pub process_noise: f64,
    pub measurement_noise: f64,
    /// Per-source overrides of `measurement_noise`.
    pub source_noise: BTreeMap<SensorId, f64>,
    pub initial_variance: f64,
    pub initial_state: InitialState,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise: 1e-3,
            measurement_noise: 0.1,
            source_noise: BTreeMap::new(),
            initial_variance: 1.0,
            initial_state: InitialState::FirstMeasurement,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("kalman {name} must be positive, got {v}")))
            }
        };
        positive("process_noise", self.process_noise)?;
        positive("measurement_noise", self.measurement_noise)?;
        positive("initial_variance", self.initial_variance)?;
        for (id, r) in &self.source_noise {
            positive(&format!("measurement_noise[{id}]"), *r)?;
        }
        Ok(())
    }

    pub fn noise_for(&self, source: &SensorId) -> f64 {
        self.source_noise
            .get(source)
            .copied()
            .unwrap_or(self.measurement_noise)
    }
}

/// One-dimensional Kalman filter with identity transition and observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarKalman {
    state: f64,
    variance: f64,
    process_noise: f64,
}

impl ScalarKalman {
    pub fn new(initial: f64, initial_variance: f64, process_noise: f64) -> Self {
        ScalarKalman {
            state: initial,
            variance: initial_variance,
            process_noise,
        }
    }

    pub fn predict(&mut self) {
        self.variance += self.process_noise;
    }

    pub fn update(&mut self, measurement: f64, measurement_noise: f64) {
        let gain = self.variance / (self.variance + measurement_noise);
        self.state += gain * (measurement - self.state);
        self.variance *= 1.0 - gain;
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Sequential predict/update over `measurements` in the given order,
/// returning the final state estimate.
pub fn kalman_fuse(measurements: &[f64], cfg: &KalmanConfig) -> Result<f64> {
    cfg.validate()?;
    let (&first, rest) = measurements
        .split_first()
        .ok_or_else(|| Error::Domain("kalman_fuse needs at least one measurement".into()))?;
    if measurements.iter().any(|m| !m.is_finite()) {
        return Err(Error::Domain("kalman_fuse: non-finite measurement".into()));
    }
    let (mut kf, pending) = match cfg.initial_state {
        InitialState::FirstMeasurement => (
            ScalarKalman::new(first, cfg.initial_variance, cfg.process_noise),
            rest,
        ),
        InitialState::Mean => {
            let mean = measurements.iter().sum::<f64>() / measurements.len() as f64;
            (
                ScalarKalman::new(mean, cfg.initial_variance, cfg.process_noise),
                measurements,
            )
        }
    };
    for &m in pending {
        kf.predict();
        kf.update(m, cfg.measurement_noise);
    }
    Ok(kf.state())
}

/// Linear interpolant between two samples of one stream at instant `at`,
/// which must lie strictly between them.
pub fn interpolate(before: &DataPoint, after: &DataPoint, at: Millis) -> Result<DataPoint> {
    if !(before.timestamp < at && at < after.timestamp) {
        return Err(Error::Range(format!(
            "interpolation instant {at} outside ]{}, {}[",
            before.timestamp, after.timestamp
        )));
    }
    let (a, b) = (before.timestamp as f64, after.timestamp as f64);
    let value = (before.value - after.value) / (a - b) * (at as f64 - b) + after.value;
    DataPoint::new(before.sensor_id.clone(), at, value)
}

/// Value of a stream at `tick`: the nearest sample within `half_width`
/// (earlier wins on ties), else the interpolant of the bracketing samples when
/// they are at most `max_gap` apart, else `None`.
pub fn sample_at(points: &[DataPoint], tick: Millis, half_width: Millis, max_gap: Millis) -> Option<f64> {
    let idx = points.partition_point(|p| p.timestamp < tick);
    let before = idx.checked_sub(1).map(|i| &points[i]);
    let at_or_after = points.get(idx);

    let nearest = match (before, at_or_after) {
        (Some(b), Some(a)) => {
            if a.timestamp - tick < tick - b.timestamp {
                Some(a)
            } else {
                Some(b)
            }
        }
        (b, a) => b.or(a),
    };
    if let Some(p) = nearest {
        if (p.timestamp - tick).abs() <= half_width {
            return Some(p.value);
        }
    }
    match (before, at_or_after) {
        (Some(b), Some(a)) if a.timestamp > tick && a.timestamp - b.timestamp <= max_gap => {
            interpolate(b, a, tick).ok().map(|p| p.value)
        }
        _ => None,
    }
}

/// Streams resampled onto a common tick grid. `values[row][col]` is the value
/// of `sources[col]` at `ticks[row]`; `None` marks a missing sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedMatrix {
    pub ticks: Vec<Millis>,
    pub sources: Vec<SensorId>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl AlignedMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (&SensorId, f64)> {
        self.sources
            .iter()
            .zip(&self.values[i])
            .filter_map(|(s, v)| v.map(|v| (s, v)))
    }
}

/// Aligns point sequences onto explicit ticks. Sources are ordered by
/// ascending sensor id regardless of input order.
pub fn align_on_ticks<'a>(
    sources: impl IntoIterator<Item = (&'a SensorId, &'a [DataPoint])>,
    ticks: &[Millis],
    spacing: Millis,
    max_gap: Millis,
) -> AlignedMatrix {
    let mut sorted: Vec<(&SensorId, &[DataPoint])> = sources.into_iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let half = spacing / 2;
    let values = ticks
        .iter()
        .map(|&t| {
            sorted
                .iter()
                .map(|(_, pts)| sample_at(pts, t, half, max_gap))
                .collect()
        })
        .collect();
    AlignedMatrix {
        ticks: ticks.to_vec(),
        sources: sorted.into_iter().map(|(id, _)| id.clone()).collect(),
        values,
    }
}

/// Aligns whole streams onto the grid of multiples of `spacing` covering the
/// union of their spans.
pub fn align(streams: &[SensorStream], spacing: Millis, max_gap: Millis) -> Result<AlignedMatrix> {
    if spacing <= 0 {
        return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
    }
    let first = streams.iter().filter_map(|s| s.points().first()).map(|p| p.timestamp).min();
    let last = streams.iter().filter_map(|s| s.points().last()).map(|p| p.timestamp).max();
    let ticks: Vec<Millis> = match (first, last) {
        (Some(lo), Some(hi)) => {
            let start = lo.div_euclid(spacing) * spacing + if lo.rem_euclid(spacing) == 0 { 0 } else { spacing };
            (0..)
                .map(|i| start + i * spacing)
                .take_while(|t| *t <= hi)
                .collect()
        }
        _ => Vec::new(),
    };
    Ok(align_on_ticks(
        streams.iter().map(|s| (s.sensor_id(), s.points())),
        &ticks,
        spacing,
        max_gap,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedStream {
    pub fused_id: SensorId,
    pub points: Vec<DataPoint>,
    pub source_ids: Vec<SensorId>,
}

impl FusedStream {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.value)
    }
}

/// Fuses an aligned matrix into one stream: per tick, one predict step then
/// one update per available source in column order. Ticks with no data are
/// skipped.
pub fn kalman_fuse_streams(
    aligned: &AlignedMatrix,
    cfg: &KalmanConfig,
    fused_id: SensorId,
) -> Result<FusedStream> {
    cfg.validate()?;
    let mut kf: Option<ScalarKalman> = None;
    let mut points = Vec::new();
    for (i, &tick) in aligned.ticks.iter().enumerate() {
        let row: Vec<(&SensorId, f64)> = aligned.row(i).collect();
        if row.is_empty() {
            continue;
        }
        let filter = match kf.as_mut() {
            Some(f) => {
                f.predict();
                for (src, v) in &row {
                    f.update(*v, cfg.noise_for(src));
                }
                f
            }
            None => {
                let f = match cfg.initial_state {
                    InitialState::FirstMeasurement => {
                        let mut f = ScalarKalman::new(row[0].1, cfg.initial_variance, cfg.process_noise);
                        for (src, v) in &row[1..] {
                            f.update(*v, cfg.noise_for(src));
                        }
                        f
                    }
                    InitialState::Mean => {
                        let mean = row.iter().map(|(_, v)| v).sum::<f64>() / row.len() as f64;
                        let mut f = ScalarKalman::new(mean, cfg.initial_variance, cfg.process_noise);
                        for (src, v) in &row {
                            f.update(*v, cfg.noise_for(src));
                        }
                        f
                    }
                };
                kf.insert(f)
            }
        };
        points.push(DataPoint::new(fused_id.clone(), tick, filter.state())?);
    }
    Ok(FusedStream {
        fused_id,
        points,
        source_ids: aligned.sources.clone(),
    })
}
