//! Core domain types: data points, sensor streams, sensor specifications,
//! dynamic state vectors and per-service QoS profiles.
//!
//! Timestamps are integer epoch milliseconds so that window and interval
//! arithmetic stays exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch milliseconds.
pub type Millis = i64;

pub const MILLIS_PER_SECOND: f64 = 1000.0;

/// Number of attributes in a sensor state vector (accuracy, reliability,
/// resolution, response time, range).
pub const ATTRIBUTE_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub String);

impl SensorId {
    pub fn new(id: impl Into<String>) -> Self {
        SensorId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SensorId {
    fn from(s: &str) -> Self {
        SensorId(s.to_owned())
    }
}

impl From<String> for SensorId {
    fn from(s: String) -> Self {
        SensorId(s)
    }
}

/// Physical quantity a sensor measures. `Other` carries a free-form tag; an
/// empty tag means the modality was never declared.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Modality {
    Temperature,
    Humidity,
    Co2,
    Motion,
    Other(String),
}

impl Modality {
    pub fn is_declared(&self) -> bool {
        !matches!(self, Modality::Other(tag) if tag.trim().is_empty())
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Temperature => f.write_str("temperature"),
            Modality::Humidity => f.write_str("humidity"),
            Modality::Co2 => f.write_str("co2"),
            Modality::Motion => f.write_str("motion"),
            Modality::Other(tag) => f.write_str(tag),
        }
    }
}

impl FromStr for Modality {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "temperature" => Modality::Temperature,
            "humidity" => Modality::Humidity,
            "co2" => Modality::Co2,
            "motion" => Modality::Motion,
            _ => Modality::Other(s.trim().to_owned()),
        })
    }
}

impl From<String> for Modality {
    fn from(s: String) -> Self {
        match s.parse() {
            Ok(m) => m,
            Err(never) => match never {},
        }
    }
}

impl From<Modality> for String {
    fn from(m: Modality) -> Self {
        m.to_string()
    }
}

/// A single timestamped measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub value: f64,
    pub timestamp: Millis,
    pub sensor_id: SensorId,
}

impl DataPoint {
    pub fn new(sensor_id: SensorId, timestamp: Millis, value: f64) -> Result<Self> {
        if timestamp < 0 {
            return Err(Error::Stream(format!(
                "{sensor_id}: negative timestamp {timestamp}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::Stream(format!(
                "{sensor_id}: non-finite value at {timestamp}"
            )));
        }
        Ok(DataPoint {
            value,
            timestamp,
            sensor_id,
        })
    }
}

/// Time-ordered measurements of one sensor. Timestamps are strictly
/// increasing and every point carries the stream's sensor id.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    sensor_id: SensorId,
    modality: Modality,
    points: Vec<DataPoint>,
    /// Nominal sampling interval in seconds.
    pub period_hint: Option<f64>,
}

impl SensorStream {
    pub fn empty(sensor_id: SensorId, modality: Modality) -> Self {
        SensorStream {
            sensor_id,
            modality,
            points: Vec::new(),
            period_hint: None,
        }
    }

    pub fn new(sensor_id: SensorId, modality: Modality, points: Vec<DataPoint>) -> Result<Self> {
        let mut stream = SensorStream::empty(sensor_id, modality);
        for p in points {
            stream.push_point(p)?;
        }
        Ok(stream)
    }

    pub fn from_samples(
        sensor_id: SensorId,
        modality: Modality,
        samples: impl IntoIterator<Item = (Millis, f64)>,
    ) -> Result<Self> {
        let mut stream = SensorStream::empty(sensor_id, modality);
        for (t, v) in samples {
            stream.push(t, v)?;
        }
        Ok(stream)
    }

    pub fn with_period_hint(mut self, seconds: f64) -> Self {
        self.period_hint = Some(seconds);
        self
    }

    pub fn sensor_id(&self) -> &SensorId {
        &self.sensor_id
    }

    pub fn modality(&self) -> &Modality {
        &self.modality
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, timestamp: Millis, value: f64) -> Result<()> {
        let p = DataPoint::new(self.sensor_id.clone(), timestamp, value)?;
        self.push_point(p)
    }

    pub fn push_point(&mut self, p: DataPoint) -> Result<()> {
        if p.sensor_id != self.sensor_id {
            return Err(Error::Stream(format!(
                "point of {} pushed onto stream {}",
                p.sensor_id, self.sensor_id
            )));
        }
        let p = DataPoint::new(p.sensor_id, p.timestamp, p.value)?;
        if let Some(last) = self.points.last() {
            if p.timestamp <= last.timestamp {
                return Err(Error::Stream(format!(
                    "{}: timestamp {} not after {}",
                    self.sensor_id, p.timestamp, last.timestamp
                )));
            }
        }
        self.points.push(p);
        Ok(())
    }

    /// Points with timestamp in the half-open interval `]start, end]`.
    pub fn slice(&self, start: Millis, end: Millis) -> &[DataPoint] {
        let lo = self.points.partition_point(|p| p.timestamp <= start);
        let hi = self.points.partition_point(|p| p.timestamp <= end);
        if lo >= hi {
            &[]
        } else {
            &self.points[lo..hi]
        }
    }

    /// Interleaves two streams of the same sensor. Fails on a sensor or
    /// modality mismatch and on any shared timestamp.
    pub fn merge(&self, other: &SensorStream) -> Result<SensorStream> {
        if self.sensor_id != other.sensor_id || self.modality != other.modality {
            return Err(Error::Stream(format!(
                "cannot merge {} ({}) with {} ({})",
                self.sensor_id, self.modality, other.sensor_id, other.modality
            )));
        }
        let mut merged = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.points.iter().peekable(), other.points.iter().peekable());
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.timestamp == y.timestamp => {
                    return Err(Error::Stream(format!(
                        "{}: duplicate timestamp {} while merging",
                        self.sensor_id, x.timestamp
                    )))
                }
                (Some(x), Some(y)) if x.timestamp < y.timestamp => a.next(),
                (Some(_), Some(_)) => b.next(),
                (Some(_), None) => a.next(),
                (None, Some(_)) => b.next(),
                (None, None) => break,
            };
            merged.extend(next.cloned());
        }
        let mut out = SensorStream::new(self.sensor_id.clone(), self.modality.clone(), merged)?;
        out.period_hint = self.period_hint.or(other.period_hint);
        Ok(out)
    }

    /// Replaces every value through `f(timestamp, value)`, dropping points
    /// for which it returns `None`.
    pub(crate) fn map_values(&self, mut f: impl FnMut(Millis, f64) -> Option<f64>) -> Result<Self> {
        let mut out = SensorStream::empty(self.sensor_id.clone(), self.modality.clone());
        out.period_hint = self.period_hint;
        for p in &self.points {
            if let Some(v) = f(p.timestamp, p.value) {
                out.push(p.timestamp, v)?;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Lower raw value is better.
    Cost,
    /// Higher raw value is better.
    Benefit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticAttribute {
    Resolution,
    ResponseTime,
    Range,
}

impl StaticAttribute {
    pub const ALL: [StaticAttribute; 3] = [
        StaticAttribute::Resolution,
        StaticAttribute::ResponseTime,
        StaticAttribute::Range,
    ];

    pub fn default_direction(self) -> Direction {
        match self {
            StaticAttribute::Resolution | StaticAttribute::ResponseTime => Direction::Cost,
            StaticAttribute::Range => Direction::Benefit,
        }
    }
}

impl fmt::Display for StaticAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StaticAttribute::Resolution => "resolution",
            StaticAttribute::ResponseTime => "response_time",
            StaticAttribute::Range => "range",
        })
    }
}

/// Documented (datasheet) value of a static attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub raw: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: SensorId,
    pub modality: Modality,
    pub zone: String,
    pub static_attrs: BTreeMap<StaticAttribute, AttributeValue>,
}

impl SensorSpec {
    /// Spec with the three static attributes in their default directions.
    pub fn new(
        sensor_id: impl Into<String>,
        modality: Modality,
        zone: impl Into<String>,
        resolution: f64,
        response_time: f64,
        range: f64,
    ) -> Self {
        let static_attrs = [
            (StaticAttribute::Resolution, resolution),
            (StaticAttribute::ResponseTime, response_time),
            (StaticAttribute::Range, range),
        ]
        .into_iter()
        .map(|(a, raw)| {
            (
                a,
                AttributeValue {
                    raw,
                    direction: a.default_direction(),
                },
            )
        })
        .collect();
        SensorSpec {
            sensor_id: SensorId(sensor_id.into()),
            modality,
            zone: zone.into(),
            static_attrs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Lists every problem with a sensor spec. Never fails and never mutates.
pub fn validate_spec(spec: &SensorSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.sensor_id.0.trim().is_empty() {
        report.push("sensor_id", "empty sensor id");
    }
    if !spec.modality.is_declared() {
        report.push("modality", "missing modality tag");
    }
    for attr in StaticAttribute::ALL {
        match spec.static_attrs.get(&attr) {
            None => report.push(attr.to_string(), "attribute not documented"),
            Some(v) if !v.raw.is_finite() => report.push(attr.to_string(), "non-finite value"),
            Some(v) if v.raw < 0.0 => {
                report.push(attr.to_string(), format!("negative value {}", v.raw))
            }
            Some(_) => {}
        }
    }
    report
}

/// Dynamic attribute vector of one sensor at one instant. Every component
/// lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorStateVector {
    pub sensor_id: SensorId,
    pub t: Millis,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub kappa: f64,
}

impl SensorStateVector {
    pub fn new(sensor_id: SensorId, t: Millis, components: [f64; ATTRIBUTE_COUNT]) -> Result<Self> {
        if let Some(bad) = components.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Range(format!(
                "{sensor_id}: state component {bad} outside [0, 1]"
            )));
        }
        let [alpha, beta, gamma, epsilon, kappa] = components;
        Ok(SensorStateVector {
            sensor_id,
            t,
            alpha,
            beta,
            gamma,
            epsilon,
            kappa,
        })
    }

    pub fn components(&self) -> [f64; ATTRIBUTE_COUNT] {
        [self.alpha, self.beta, self.gamma, self.epsilon, self.kappa]
    }
}

/// Ideal attribute targets a service ranks sensors against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; ATTRIBUTE_COUNT]", into = "[f64; ATTRIBUTE_COUNT]")]
pub struct UtopiaVector([f64; ATTRIBUTE_COUNT]);

impl UtopiaVector {
    pub fn new(components: [f64; ATTRIBUTE_COUNT]) -> Result<Self> {
        if components.iter().all(|c| (0.0..=1.0).contains(c)) {
            Ok(UtopiaVector(components))
        } else {
            Err(Error::Config(format!(
                "utopia components must lie in [0, 1]: {components:?}"
            )))
        }
    }

    pub fn components(&self) -> [f64; ATTRIBUTE_COUNT] {
        self.0
    }
}

impl Default for UtopiaVector {
    fn default() -> Self {
        UtopiaVector([1.0; ATTRIBUTE_COUNT])
    }
}

impl TryFrom<[f64; ATTRIBUTE_COUNT]> for UtopiaVector {
    type Error = Error;

    fn try_from(c: [f64; ATTRIBUTE_COUNT]) -> Result<Self> {
        UtopiaVector::new(c)
    }
}

impl From<UtopiaVector> for [f64; ATTRIBUTE_COUNT] {
    fn from(u: UtopiaVector) -> Self {
        u.0
    }
}

/// Which Poisson reliability estimate feeds β.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// The most recent closed interval.
    #[default]
    Interval,
    /// Cumulative over every closed interval since the start.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub service_id: String,
    #[serde(default)]
    pub utopia: UtopiaVector,
    pub weights: [f64; ATTRIBUTE_COUNT],
    pub modality_needs: BTreeSet<Modality>,
    /// Expected inter-sample interval.
    pub granularity_ms: Millis,
    /// Number of sensors selected per modality.
    #[serde(default = "default_select_count")]
    pub select_count: usize,
    #[serde(default)]
    pub beta_source: BetaSource,
}

fn default_select_count() -> usize {
    1
}

impl QosProfile {
    pub fn new(service_id: impl Into<String>, weights: [f64; ATTRIBUTE_COUNT]) -> Self {
        QosProfile {
            service_id: service_id.into(),
            utopia: UtopiaVector::default(),
            weights,
            modality_needs: BTreeSet::new(),
            granularity_ms: 1000,
            select_count: 1,
            beta_source: BetaSource::Interval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "{}: weights must be finite and nonnegative",
                self.service_id
            )));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "{}: weights sum to zero",
                self.service_id
            )));
        }
        if self.granularity_ms <= 0 {
            return Err(Error::Config(format!(
                "{}: granularity must be positive",
                self.service_id
            )));
        }
        if self.select_count == 0 {
            return Err(Error::Config(format!(
                "{}: select_count must be at least 1",
                self.service_id
            )));
        }
        UtopiaVector::new(self.utopia.0).map(|_| ())
    }
}

pub const CSV_HEADER: [&str; 4] = ["timestamp_ms", "sensor_id", "modality", "value"];

/// Parses the `timestamp_ms,sensor_id,modality,value` format. Streams come
/// back ordered by sensor id; within a sensor, rows must already be in
/// strictly increasing time order.
pub fn read_streams_csv<R: Read>(reader: R) -> Result<Vec<SensorStream>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(header) => {
            let header = header.map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            if header.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {}", CSV_HEADER.join(",")),
                });
            }
        }
    }

    let mut streams: BTreeMap<SensorId, SensorStream> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected 4 fields, found {}", rec.len())));
        }
        let timestamp: Millis = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", &rec[0])))?;
        let sensor_id = SensorId::from(&rec[1]);
        if sensor_id.0.is_empty() {
            return Err(bad("empty sensor id".into()));
        }
        let modality: Modality = rec[2].to_owned().into();
        let value: f64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("bad value {:?}", &rec[3])))?;
        let stream = streams
            .entry(sensor_id.clone())
            .or_insert_with(|| SensorStream::empty(sensor_id.clone(), modality.clone()));
        if *stream.modality() != modality {
            return Err(bad(format!(
                "{sensor_id}: modality {modality} conflicts with {}",
                stream.modality()
            )));
        }
        stream
            .push(timestamp, value)
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(streams.into_values().collect())
}

/// Writes streams in the ingestion format, sorted by timestamp then sensor
/// id. Values use the shortest representation that parses back bit-exact.
pub fn write_streams_csv<W: Write>(streams: &[SensorStream], writer: W) -> Result<()> {
    let mut rows: Vec<(&DataPoint, &Modality)> = streams
        .iter()
        .flat_map(|s| s.points().iter().map(move |p| (p, s.modality())))
        .collect();
    rows.sort_by(|a, b| {
        (a.0.timestamp, &a.0.sensor_id).cmp(&(b.0.timestamp, &b.0.sensor_id))
    });
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for (p, m) in rows {
        wtr.write_record([
            p.timestamp.to_string(),
            p.sensor_id.to_string(),
            m.to_string(),
            p.value.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}
