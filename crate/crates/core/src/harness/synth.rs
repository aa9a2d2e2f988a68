//! Seeded synthetic streams and fault injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::harness::config::{FaultKind, FaultSpec, GeneratorSpec, ScenarioConfig, Signal};
use crate::model::{Millis, Modality, SensorStream, MILLIS_PER_SECOND};

/// 64-bit FNV-1a, used to derive a generator stream id from a label so that
/// adding a generator does not shift the randomness of the others.
fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic generator for `label` under `seed`.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label));
    rng
}

impl Signal {
    pub fn value_at(&self, seconds: f64) -> f64 {
        match *self {
            Signal::Constant { value } => value,
            Signal::Sinusoid {
                offset,
                amplitude,
                period_s,
                phase,
            } => offset + amplitude * (std::f64::consts::TAU * seconds / period_s + phase).sin(),
            Signal::Ramp { initial, slope_per_s } => initial + slope_per_s * seconds,
        }
    }
}

/// Samples `spec` every `period_ms` over `]start, end]`, adding Gaussian
/// noise. Time inside the signal is measured from `start`.
pub fn generate_synthetic(
    spec: &GeneratorSpec,
    modality: Modality,
    start: Millis,
    end: Millis,
    seed: u64,
) -> Result<SensorStream> {
    if spec.period_ms <= 0 {
        return Err(Error::Config(format!("{}: sampling period must be positive", spec.sensor)));
    }
    if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return Err(Error::Config(format!("{}: noise must be finite and nonnegative", spec.sensor)));
    }
    if let Signal::Sinusoid { period_s, .. } = spec.signal {
        if !(period_s > 0.0) {
            return Err(Error::Config(format!("{}: sinusoid period must be positive", spec.sensor)));
        }
    }
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng_for(seed, &format!("generator/{}", spec.sensor));
    let mut stream = SensorStream::empty(spec.sensor.clone(), modality)
        .with_period_hint(spec.period_ms as f64 / MILLIS_PER_SECOND);
    let mut t = start + spec.period_ms;
    while t <= end {
        let base = spec.signal.value_at((t - start) as f64 / MILLIS_PER_SECOND);
        let v = if spec.noise_std > 0.0 { base + noise.sample(&mut rng) } else { base };
        stream.push(t, v)?;
        t += spec.period_ms;
    }
    Ok(stream)
}

/// Every generator of the scenario, in declaration order.
pub fn generate_all(cfg: &ScenarioConfig) -> Result<Vec<SensorStream>> {
    cfg.generators
        .iter()
        .map(|g| {
            let modality = cfg
                .sensors
                .iter()
                .find(|s| s.id == g.sensor)
                .map(|s| s.modality.clone())
                .ok_or_else(|| Error::Config(format!("generator for unknown sensor {}", g.sensor)))?;
            generate_synthetic(g, modality, cfg.start_ms, cfg.end_ms(), cfg.seed)
        })
        .collect()
}

/// Applies the faults in order. Each fault draws from its own generator.
pub fn inject_faults(mut streams: Vec<SensorStream>, faults: &[FaultSpec], seed: u64) -> Result<Vec<SensorStream>> {
    for (i, fault) in faults.iter().enumerate() {
        fault.validate()?;
        let target = streams
            .iter_mut()
            .find(|s| s.sensor_id() == &fault.sensor)
            .ok_or_else(|| Error::Config(format!("fault on unknown sensor {}", fault.sensor)))?;
        let mut rng = rng_for(seed, &format!("fault/{i}/{}", fault.sensor));
        let active = |t: Millis| fault.active_at(t);
        *target = target.map_values(|t, v| {
            if !active(t) {
                return Some(v);
            }
            match fault.kind {
                FaultKind::StuckAt { value } => Some(value),
                FaultKind::Drift { slope_per_s } => {
                    Some(v + slope_per_s * (t - fault.start_ms) as f64 / MILLIS_PER_SECOND)
                }
                FaultKind::Spike { magnitude, rate } => {
                    if rng.random_bool(rate) {
                        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        Some(v + sign * magnitude)
                    } else {
                        Some(v)
                    }
                }
                FaultKind::Dropout { probability } => (!rng.random_bool(probability)).then_some(v),
            }
        })?;
    }
    Ok(streams)
}
