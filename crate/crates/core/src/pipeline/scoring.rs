//! Per-cohort dynamic scoring: fuzzy voting on a fixed tick grid feeds the
//! accuracy of every sensor and the optimal-set counts behind reliability.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fusion::{sample_at, KalmanConfig};
use crate::model::{BetaSource, Millis, Modality, SensorId, SensorStream};
use crate::reliability::ReliabilityState;
use crate::voting::{vote, VotingConfig};

/// Collocated sensors of one modality in one zone.
#[derive(Debug, Clone)]
pub struct CohortScorer {
    pub modality: Modality,
    pub zone: String,
    members: Vec<SensorId>,
    origin: Millis,
    granularity_ms: Millis,
    interval_ms: Millis,
    next_tick: Millis,
    next_boundary: Millis,
    reliability: BTreeMap<SensorId, ReliabilityState>,
    accuracy: BTreeMap<SensorId, f64>,
    last_tick: Option<Millis>,
    votes: u64,
}

impl CohortScorer {
    /// Ticks run every `granularity_ms` from `origin`; reliability intervals
    /// are `interval_ms` long and measured in ticks.
    pub fn new(
        modality: Modality,
        zone: impl Into<String>,
        mut members: Vec<SensorId>,
        origin: Millis,
        granularity_ms: Millis,
        interval_ms: Millis,
    ) -> Result<Self> {
        if granularity_ms <= 0 || interval_ms <= 0 {
            return Err(Error::Config(format!(
                "granularity ({granularity_ms} ms) and reliability interval ({interval_ms} ms) must be positive"
            )));
        }
        members.sort();
        members.dedup();
        let n_expected = ((interval_ms / granularity_ms) as u64).max(1);
        let reliability = members
            .iter()
            .map(|id| Ok((id.clone(), ReliabilityState::new(id.clone(), n_expected, 0.0)?)))
            .collect::<Result<_>>()?;
        Ok(CohortScorer {
            modality,
            zone: zone.into(),
            members,
            origin,
            granularity_ms,
            interval_ms,
            next_tick: origin + granularity_ms,
            next_boundary: origin + interval_ms,
            reliability,
            accuracy: BTreeMap::new(),
            last_tick: None,
            votes: 0,
        })
    }

    pub fn members(&self) -> &[SensorId] {
        &self.members
    }

    pub fn granularity_ms(&self) -> Millis {
        self.granularity_ms
    }

    pub fn votes(&self) -> u64 {
        self.votes
    }

    pub fn last_tick(&self) -> Option<Millis> {
        self.last_tick
    }

    fn units(&self, t: Millis) -> f64 {
        (t - self.origin) as f64 / self.granularity_ms as f64
    }

    /// Processes every tick up to and including `t`.
    pub fn advance_to(
        &mut self,
        t: Millis,
        streams: &BTreeMap<SensorId, SensorStream>,
        voting: &VotingConfig,
        kalman: &KalmanConfig,
        max_gap_ms: Millis,
    ) -> Result<()> {
        while self.next_tick <= t {
            let tick = self.next_tick;
            let measurements: Vec<(SensorId, f64)> = self
                .members
                .iter()
                .filter_map(|id| {
                    let pts = streams.get(id)?.points();
                    sample_at(pts, tick, self.granularity_ms / 2, max_gap_ms).map(|v| (id.clone(), v))
                })
                .collect();
            let outcome = if measurements.is_empty() {
                None
            } else {
                self.votes += 1;
                Some(vote(&measurements, voting, kalman)?)
            };
            for id in &self.members {
                let (alpha, hit) = match &outcome {
                    Some(o) => (
                        o.accuracy.get(id).copied().unwrap_or(0.0),
                        o.optimal.contains(id),
                    ),
                    None => (0.0, false),
                };
                self.accuracy.insert(id.clone(), alpha);
                if let Some(state) = self.reliability.get_mut(id) {
                    state.record_observation(hit);
                }
            }
            self.last_tick = Some(tick);
            while self.next_boundary <= tick {
                let end = self.units(self.next_boundary);
                for state in self.reliability.values_mut() {
                    state.close_interval(end)?;
                }
                self.next_boundary += self.interval_ms;
            }
            self.next_tick += self.granularity_ms;
        }
        Ok(())
    }

    /// Accuracy from the latest tick; 0 when the sensor had no value there.
    pub fn alpha(&self, id: &SensorId) -> f64 {
        self.accuracy.get(id).copied().unwrap_or(0.0)
    }

    pub fn reliability(&self, id: &SensorId) -> Option<&ReliabilityState> {
        self.reliability.get(id)
    }

    pub fn beta(&self, id: &SensorId, source: BetaSource) -> Result<f64> {
        let state = self
            .reliability
            .get(id)
            .ok_or_else(|| Error::Config(format!("sensor {id} is not in cohort {}/{}", self.modality, self.zone)))?;
        Ok(match source {
            BetaSource::Interval => state.beta,
            BetaSource::Cumulative => {
                if state.lambda_history.is_empty() {
                    state.beta
                } else {
                    state.cumulative(0.0)?.value
                }
            }
        })
    }
}
