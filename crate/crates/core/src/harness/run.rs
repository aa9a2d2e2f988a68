//! Scenario execution, mode comparison and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::harness::synth::{generate_all, inject_faults};
use crate::model::{read_streams_csv, Millis, Modality, SensorId, SensorStream};
use crate::pipeline::{CycleOutput, FeatureKey, FeatureVector, Mode, Pipeline, ServiceError, TraceRow, TRACE_HEADER};

pub const TRACE_FILE: &str = "trace.csv";
pub const FEATURES_FILE: &str = "features.ndjson";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<SensorStream>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_streams_csv(file).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Generated and ingested streams with the scenario's faults applied.
pub fn load_streams(cfg: &ScenarioConfig) -> Result<Vec<SensorStream>> {
    let mut streams = generate_all(cfg)?;
    for src in &cfg.csv {
        let path = if src.path.is_absolute() { src.path.clone() } else { cfg.base_dir.join(&src.path) };
        streams.extend(ingest_csv(path)?);
    }
    let mut merged: BTreeMap<SensorId, SensorStream> = BTreeMap::new();
    for s in streams {
        let s = match merged.remove(s.sensor_id()) {
            Some(prev) => prev.merge(&s)?,
            None => s,
        };
        merged.insert(s.sensor_id().clone(), s);
    }
    inject_faults(merged.into_values().collect(), &cfg.faults, cfg.seed)
}

/// Per service and sensor selection counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub service_id: String,
    pub sensor_id: SensorId,
    /// Activations in which the sensor was part of the live cohort.
    pub considered: u64,
    pub selected: u64,
    /// Activations inside one of the sensor's fault windows.
    pub fault_cycles: u64,
    pub selected_in_fault: u64,
    /// Share of fault-window activations without this sensor selected.
    pub avoidance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub mode: Mode,
    pub seed: u64,
    pub cycles: u64,
    pub activations: u64,
    pub feature_invocations: u64,
    pub feature_hits: u64,
    pub distinct_feature_keys: u64,
    pub fusion_invocations: u64,
    pub fusion_hits: u64,
    pub points_processed: u64,
    pub vectors_emitted: u64,
    pub vectors_dropped: u64,
    pub cycle_failures: Vec<String>,
    pub service_errors: Vec<ServiceError>,
    pub selection: Vec<SelectionSummary>,
    /// Activations whose selected set differs from the previous one, per
    /// service.
    pub selection_changes: BTreeMap<String, u64>,
    pub features_file: String,
    pub trace_file: String,
    /// Mean wall-clock time per cycle. Kept out of written files so repeated
    /// runs stay byte-identical.
    #[serde(skip)]
    pub wall_clock_per_cycle_ms: f64,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub vectors: Vec<FeatureVector>,
    pub trace: Vec<TraceRow>,
    pub feature_keys: Vec<FeatureKey>,
    /// Selected sensors per activation: (t, service) -> modality -> ids.
    pub selections: BTreeMap<(Millis, String), BTreeMap<Modality, Vec<SensorId>>>,
}

fn summary_entry<'a>(
    summary: &'a mut BTreeMap<(String, SensorId), SelectionSummary>,
    svc: &str,
    id: &SensorId,
) -> &'a mut SelectionSummary {
    summary.entry((svc.to_string(), id.clone())).or_insert_with(|| SelectionSummary {
        service_id: svc.to_string(),
        sensor_id: id.clone(),
        considered: 0,
        selected: 0,
        fault_cycles: 0,
        selected_in_fault: 0,
        avoidance_rate: None,
    })
}

fn summarize(
    cfg: &ScenarioConfig,
    pipeline: &Pipeline,
    outputs: &[CycleOutput],
) -> (Vec<SelectionSummary>, BTreeMap<String, u64>) {
    let faults = cfg.fault_windows();
    let zone_of: BTreeMap<&SensorId, (&Modality, &str)> =
        cfg.sensors.iter().map(|s| (&s.id, (&s.modality, s.zone.as_str()))).collect();
    let mut summary: BTreeMap<(String, SensorId), SelectionSummary> = BTreeMap::new();
    let mut changes: BTreeMap<String, u64> = BTreeMap::new();
    let mut previous: BTreeMap<String, BTreeMap<Modality, Vec<SensorId>>> = BTreeMap::new();
    for out in outputs {
        for row in &out.trace {
            let s = summary_entry(&mut summary, &row.service_id, &row.sensor_id);
            s.considered += 1;
            if row.selected {
                s.selected += 1;
            }
        }
        for (svc_id, selection) in &out.selections {
            let changed = previous.get(svc_id).is_some_and(|p| p != selection);
            *changes.entry(svc_id.clone()).or_default() += u64::from(changed);
            previous.insert(svc_id.clone(), selection.clone());
            let svc = pipeline
                .services()
                .iter()
                .find(|s| s.id() == svc_id)
                .expect("selection belongs to a configured service");
            for (sensor, windows) in &faults {
                let Some((modality, zone)) = zone_of.get(sensor) else { continue };
                if !svc.qos.modality_needs.contains(*modality) || !svc.zones.contains(*zone) {
                    continue;
                }
                if !windows.iter().any(|(a, b)| *a < out.t_ms && out.t_ms <= *b) {
                    continue;
                }
                let picked = selection.get(*modality).is_some_and(|ids| ids.contains(sensor));
                let s = summary_entry(&mut summary, svc_id, sensor);
                s.fault_cycles += 1;
                if picked {
                    s.selected_in_fault += 1;
                }
            }
        }
    }
    let mut list: Vec<SelectionSummary> = summary.into_values().collect();
    for s in &mut list {
        if s.fault_cycles > 0 {
            s.avoidance_rate = Some(1.0 - s.selected_in_fault as f64 / s.fault_cycles as f64);
        }
    }
    (list, changes)
}

/// Runs the scenario in `mode` without touching the filesystem.
pub fn execute(cfg: &ScenarioConfig, mode: Mode) -> Result<ScenarioRun> {
    cfg.validate()?;
    let streams = load_streams(cfg)?;
    let mut pipeline = Pipeline::new(
        cfg.pipeline_config(mode),
        cfg.sensor_specs(),
        streams,
        cfg.service_configs(),
        cfg.registry()?,
    )?;
    let schedule = pipeline.schedule(cfg.horizon_ms);
    let started = Instant::now();
    let mut outputs = Vec::with_capacity(schedule.len());
    let mut failures = Vec::new();
    for t in schedule {
        match pipeline.run_cycle(t) {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push(format!("t={t}: {e}")),
        }
    }
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;

    let (selection, selection_changes) = summarize(cfg, &pipeline, &outputs);
    let stats = pipeline.cache_stats();
    let counters = pipeline.counters();
    let feature_keys: Vec<FeatureKey> = outputs
        .iter()
        .flat_map(|o| o.requests.iter().map(|r| r.key.clone()))
        .collect();
    let distinct: BTreeSet<&FeatureKey> = feature_keys.iter().collect();
    let report = ScenarioReport {
        mode,
        seed: cfg.seed,
        cycles: counters.cycles,
        activations: counters.activations,
        feature_invocations: stats.feature_invocations,
        feature_hits: stats.feature_hits,
        distinct_feature_keys: distinct.len() as u64,
        fusion_invocations: stats.fusion_invocations,
        fusion_hits: stats.fusion_hits,
        points_processed: counters.points_processed,
        vectors_emitted: counters.vectors_emitted,
        vectors_dropped: counters.vectors_dropped,
        cycle_failures: failures,
        service_errors: outputs.iter().flat_map(|o| o.errors.iter().cloned()).collect(),
        selection,
        selection_changes,
        features_file: FEATURES_FILE.into(),
        trace_file: TRACE_FILE.into(),
        wall_clock_per_cycle_ms: if counters.cycles > 0 { elapsed / counters.cycles as f64 } else { 0.0 },
    };
    let selections = outputs
        .iter()
        .flat_map(|o| o.selections.iter().map(move |(s, sel)| ((o.t_ms, s.clone()), sel.clone())))
        .collect();
    Ok(ScenarioRun {
        report,
        vectors: outputs.iter().flat_map(|o| o.vectors.iter().cloned()).collect(),
        trace: outputs.into_iter().flat_map(|o| o.trace).collect(),
        feature_keys,
        selections,
    })
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| Error::io(path, e))?;
    for r in rows {
        w.write_record([
            r.t_ms.to_string(),
            r.service_id.clone(),
            r.sensor_id.to_string(),
            r.d_m.to_string(),
            r.d_a.to_string(),
            r.d_ma.to_string(),
            r.rank.to_string(),
            r.selected.to_string(),
        ])
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_features(vectors: &[FeatureVector], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for v in vectors {
        serde_json::to_writer(&mut buf, v).map_err(|e| Error::io(path, e))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map(|r| format!("{:.1}%", r * 100.0)).unwrap_or_else(|| "-".into())
}

pub fn render_report(r: &ScenarioReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}  seed: {}", r.mode, r.seed);
    let _ = writeln!(s, "cycles: {}  service activations: {}", r.cycles, r.activations);
    let _ = writeln!(
        s,
        "feature invocations: {}  cache hits: {}  distinct keys: {}",
        r.feature_invocations, r.feature_hits, r.distinct_feature_keys
    );
    let _ = writeln!(s, "fusion invocations: {}  fusion hits: {}", r.fusion_invocations, r.fusion_hits);
    let _ = writeln!(s, "data points processed: {}", r.points_processed);
    let _ = writeln!(s, "feature vectors: {} emitted, {} dropped", r.vectors_emitted, r.vectors_dropped);
    let _ = writeln!(s, "service errors: {}  failed cycles: {}", r.service_errors.len(), r.cycle_failures.len());
    let _ = writeln!(s, "\nselection (service / sensor: selected of considered; fault-window avoidance)");
    for x in &r.selection {
        let _ = writeln!(
            s,
            "  {:<20} {:<8} {:>6} / {:<6} {}",
            x.service_id,
            x.sensor_id,
            x.selected,
            x.considered,
            if x.fault_cycles > 0 {
                format!(
                    "avoided {} ({} of {} fault cycles selected)",
                    fmt_rate(x.avoidance_rate),
                    x.selected_in_fault,
                    x.fault_cycles
                )
            } else {
                String::new()
            }
        );
    }
    let _ = writeln!(s, "\nselection changes per service");
    for (svc, n) in &r.selection_changes {
        let _ = writeln!(s, "  {svc:<20} {n}");
    }
    let _ = writeln!(s, "\nfeatures: {}\ntrace: {}", r.features_file, r.trace_file);
    s
}

/// Writes the trace, features and report of a finished run into `out_dir`.
pub fn write_run(run: &ScenarioRun, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_trace(&run.trace, &out_dir.join(TRACE_FILE))?;
    write_features(&run.vectors, &out_dir.join(FEATURES_FILE))?;
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(REPORT_JSON);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join(REPORT_TEXT);
    fs::write(&path, render_report(&run.report)).map_err(|e| Error::io(&path, e))
}

/// Executes the scenario in `mode` and writes its outputs.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode, out_dir: &Path) -> Result<ScenarioReport> {
    let run = execute(cfg, mode)?;
    write_run(&run, out_dir)?;
    Ok(run.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeOutcome {
    pub mode: Mode,
    pub report: Option<ScenarioReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub modes: Vec<ModeOutcome>,
    /// Whether unified and per-service runs emitted identical feature
    /// vectors; `None` when either failed.
    pub unified_matches_per_service: Option<bool>,
    #[serde(skip)]
    pub wall_clock_per_cycle_ms: BTreeMap<Mode, f64>,
}

impl ComparisonReport {
    pub fn report(&self, mode: Mode) -> Option<&ScenarioReport> {
        self.modes.iter().find(|m| m.mode == mode).and_then(|m| m.report.as_ref())
    }
}

pub fn render_comparison(c: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed: {}", c.seed);
    let _ = writeln!(
        s,
        "{:<20} {:>12} {:>10} {:>12} {:>12} {:>10}",
        "mode", "invocations", "hits", "fusions", "points", "vectors"
    );
    for m in &c.modes {
        match (&m.report, &m.error) {
            (Some(r), _) => {
                let _ = writeln!(
                    s,
                    "{:<20} {:>12} {:>10} {:>12} {:>12} {:>10}",
                    m.mode.as_str(),
                    r.feature_invocations,
                    r.feature_hits,
                    r.fusion_invocations,
                    r.points_processed,
                    r.vectors_emitted
                );
            }
            (None, err) => {
                let _ = writeln!(s, "{:<20} failed: {}", m.mode.as_str(), err.as_deref().unwrap_or("unknown"));
            }
        }
    }
    let verdict = match c.unified_matches_per_service {
        Some(true) => "identical",
        Some(false) => "DIFFERENT",
        None => "not compared",
    };
    let _ = writeln!(s, "\nunified vs per_service feature vectors: {verdict}");
    let _ = writeln!(s, "\nselection changes per service");
    for m in &c.modes {
        if let Some(r) = &m.report {
            let changes: Vec<String> = r.selection_changes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "  {:<20} {}", m.mode.as_str(), changes.join(" "));
        }
    }
    s
}

/// Runs every mode on the same inputs. When `out_dir` is given each mode's
/// outputs go to `out_dir/<mode>/` next to `comparison.json` and
/// `comparison.txt`.
pub fn compare_modes(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ComparisonReport> {
    let mut modes = Vec::new();
    let mut vectors: BTreeMap<Mode, Vec<FeatureVector>> = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for mode in Mode::ALL {
        let outcome = execute(cfg, mode).and_then(|run| {
            if let Some(dir) = out_dir {
                write_run(&run, &dir.join(mode.as_str()))?;
            }
            Ok(run)
        });
        match outcome {
            Ok(run) => {
                timings.insert(mode, run.report.wall_clock_per_cycle_ms);
                vectors.insert(mode, run.vectors);
                modes.push(ModeOutcome {
                    mode,
                    report: Some(run.report),
                    error: None,
                });
            }
            Err(e) => modes.push(ModeOutcome {
                mode,
                report: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let unified_matches_per_service = match (vectors.get(&Mode::Unified), vectors.get(&Mode::PerService)) {
        (Some(a), Some(b)) => Some(a == b),
        _ => None,
    };
    let report = ComparisonReport {
        seed: cfg.seed,
        modes,
        unified_matches_per_service,
        wall_clock_per_cycle_ms: timings,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("comparison.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join("comparison.txt");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(render_comparison(&report).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
