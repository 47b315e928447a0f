use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use super::*;
use crate::cluster::{self, ClusterError, ClusterParams, DEFAULT_MIN_SIZE};
use crate::ingest::{self, CellIdentity, IngestError};
use crate::report;
use crate::resolver::{self, CellDatabase};
use crate::synth::{self, OutlierSpec, Region, SynthError, SyntheticWorld, TopologyConfig, TraceOptions};

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_SEED: u64 = 1;
pub const EVENTS_PER_CELL: usize = 10;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn ingest_error(path: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::MalformedRow { line, reason } => CliError::format(path, Some(line), reason),
        e @ IngestError::BadHeader { .. } => CliError::format(path, e.line(), e),
        IngestError::Io(source) => CliError::Input {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn synth_error(e: SynthError) -> CliError {
    CliError::Config(e.to_string())
}

/// Write `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never observe a partial file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    let output_err = |source| CliError::Output {
        path: path.clone(),
        source,
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(output_err)?;
    tmp.write_all(bytes).map_err(output_err)?;
    tmp.as_file().sync_all().map_err(output_err)?;
    tmp.persist(&path).map_err(|e| output_err(e.error))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_atomic(dir, name, &bytes)
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("--{flag} is required (flag or config file)")))
}

fn manifest(command: &str, config: &impl Serialize, extra: Value) -> Value {
    let mut m = json!({
        "tool": "lacclust",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
        m.extend(extra);
    }
    m
}

#[derive(Default)]
struct Timer {
    stages: BTreeMap<&'static str, f64>,
}

impl Timer {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.insert(stage, start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

impl CleanOptions {
    /// Layer: defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<CleanOptions, CliError> {
        let file = match &self.config {
            Some(path) => load_config_file::<CleanOptions>(path)?,
            None => CleanOptions::default(),
        };
        let metric = self.metric.or(file.metric).unwrap_or(MetricArg::Equirect);
        Ok(CleanOptions {
            config: None,
            trace: self.trace.clone().or(file.trace),
            cell_db: self.cell_db.clone().or(file.cell_db),
            cell_db_format: Some(
                self.cell_db_format
                    .or(file.cell_db_format)
                    .unwrap_or(DbFormatArg::Native),
            ),
            out: self.out.clone().or(file.out),
            linkage: Some(self.linkage.or(file.linkage).unwrap_or(LinkageArg::Centroid)),
            metric: Some(metric),
            cutoff: Some(
                self.cutoff
                    .or(file.cutoff)
                    .unwrap_or_else(|| default_cutoff(metric.into())),
            ),
            min_size: Some(self.min_size.or(file.min_size).unwrap_or(DEFAULT_MIN_SIZE)),
            policy: Some(self.policy.or(file.policy).unwrap_or(PolicyArg::Wildcard)),
            strictness: Some(self.strictness.or(file.strictness).unwrap_or(StrictnessArg::Strict)),
            window: Some(self.window.or(file.window).unwrap_or(DEFAULT_WINDOW)),
            execution: Some(self.execution.or(file.execution).unwrap_or(ExecutionArg::Parallel)),
        })
    }
}

pub fn run_clean(options: &CleanOptions) -> Result<(), CliError> {
    let cfg = options.resolve()?;
    let trace_path = require(cfg.trace.clone(), "trace")?;
    let db_path = require(cfg.cell_db.clone(), "cell-db")?;
    let out = require(cfg.out.clone(), "out")?;
    let params = ClusterParams {
        linkage: cfg.linkage.expect("resolved").into(),
        cutoff: cfg.cutoff.expect("resolved"),
        min_size: cfg.min_size.expect("resolved"),
        metric: cfg.metric.expect("resolved").into(),
    };
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let window = NonZeroUsize::new(cfg.window.expect("resolved"))
        .ok_or_else(|| CliError::Config("window must be at least 1".into()))?;
    let exec: Execution = cfg.execution.expect("resolved").into();
    let mut timer = Timer::default();

    let trace = open(&trace_path)?;
    let parsed = timer
        .time("parse_trace", || {
            ingest::parse_trace(trace, cfg.strictness.expect("resolved").into())
        })
        .map_err(|e| ingest_error(&trace_path, e))?;
    let db_reader = open(&db_path)?;
    let db: CellDatabase = timer
        .time("load_cell_db", || match cfg.cell_db_format.expect("resolved") {
            DbFormatArg::Native => resolver::load_cell_db(db_reader),
            DbFormatArg::Opencellid => resolver::load_opencellid(db_reader),
        })
        .map_err(|e| ingest_error(&db_path, e))?;

    let unique = ingest::extract_unique_cells(&parsed.events);
    let outcome = timer.time("resolve", || {
        db.resolve_all(&unique, cfg.policy.expect("resolved").into())
    });
    let result = timer
        .time("cluster", || {
            cluster::clean_dataset_with(&outcome.resolved, &params, exec)
        })
        .map_err(|e| match e {
            ClusterError::InvalidParams(m) => CliError::Config(m),
            e => CliError::format(&db_path, None, e),
        })?;

    let retention = report::retention_stats(unique.len(), outcome.resolved.len(), result.stats.retained)
        .expect("retained <= resolved <= unique by construction");
    let resolved_ids: HashSet<CellIdentity> = outcome.resolved.iter().map(|c| c.cell).collect();
    let retained_ids: HashSet<CellIdentity> = result.retained().map(|c| c.cell).collect();
    let coverage = report::coverage_series(&parsed.events, &resolved_ids, &retained_ids, window);

    create_out_dir(&out)?;
    let (geojson, csv, before, after) = timer.time("render", || {
        (
            report::export_geojson(&result),
            report::export_csv(&result),
            report::render_resolved_scatter(&outcome.resolved, "Resolved cells before cleaning"),
            report::render_result_scatter(&result, "Cells after cleaning"),
        )
    });
    write_atomic(&out, "cleaned.geojson", &geojson)?;
    write_atomic(&out, "cleaned.csv", &csv)?;
    write_json(&out, "retention.json", &retention)?;
    write_json(&out, "coverage.json", &coverage)?;
    write_atomic(&out, "scatter_before.svg", before.as_bytes())?;
    write_atomic(&out, "scatter_after.svg", after.as_bytes())?;

    let discarded: Vec<Value> = result
        .lacs
        .iter()
        .filter(|l| !l.discarded_dense.is_empty())
        .map(|l| {
            json!({
                "lac": l.lac,
                "clusters": l.discarded_dense.iter()
                    .map(|c| c.iter().map(ToString::to_string).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    let m = manifest(
        "clean",
        &cfg,
        json!({
            "trace": {
                "events": parsed.events.len(),
                "skipped_lines": parsed.skipped,
                "unique_cells": unique.len(),
            },
            "cell_db": { "rows_read": db.rows_read(), "cells": db.len() },
            "resolution": outcome.stats,
            "unresolved": outcome.unresolved.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "clean": result.stats,
            "discarded_dense_clusters": discarded,
            "outputs": CLEAN_OUTPUTS,
        }),
    );
    write_json(&out, "manifest.json", &m)?;
    write_json(
        &out,
        TIMINGS_FILE,
        &json!({ "execution": exec, "parallel": exec.is_parallel(), "stages_ms": timer.stages }),
    )?;
    Ok(())
}

impl SynthOptions {
    pub fn resolve(&self) -> Result<SynthOptions, CliError> {
        let file = match &self.config {
            Some(path) => load_config_file::<SynthOptions>(path)?,
            None => SynthOptions::default(),
        };
        let topo = TopologyConfig::default();
        let region = Region::default();
        let outliers = OutlierSpec::default();
        let mut r = SynthOptions {
            config: None,
            out: self.out.clone().or(file.out),
            lacs: Some(self.lacs.or(file.lacs).unwrap_or(topo.lac_count)),
            cells_per_lac: Some(self.cells_per_lac.or(file.cells_per_lac).unwrap_or(topo.cells_per_lac)),
            cell_radius: Some(self.cell_radius.or(file.cell_radius).unwrap_or(topo.cell_radius_m)),
            lat_min: Some(self.lat_min.or(file.lat_min).unwrap_or(region.lat_min)),
            lat_max: Some(self.lat_max.or(file.lat_max).unwrap_or(region.lat_max)),
            lon_min: Some(self.lon_min.or(file.lon_min).unwrap_or(region.lon_min)),
            lon_max: Some(self.lon_max.or(file.lon_max).unwrap_or(region.lon_max)),
            min_separation: Some(
                self.min_separation
                    .or(file.min_separation)
                    .unwrap_or(topo.min_separation_m),
            ),
            first_lac: Some(self.first_lac.or(file.first_lac).unwrap_or(topo.first_lac)),
            mcc: self.mcc.or(file.mcc).or(topo.mcc),
            mnc: self.mnc.or(file.mnc).or(topo.mnc),
            outlier_rate: Some(self.outlier_rate.or(file.outlier_rate).unwrap_or(outliers.rate)),
            displacement_min: Some(
                self.displacement_min
                    .or(file.displacement_min)
                    .unwrap_or(outliers.displacement_min_m),
            ),
            displacement_max: Some(
                self.displacement_max
                    .or(file.displacement_max)
                    .unwrap_or(outliers.displacement_max_m),
            ),
            events: self.events.or(file.events),
            seed: Some(self.seed.or(file.seed).unwrap_or(DEFAULT_SEED)),
            strip_operator: Some(self.strip_operator.or(file.strip_operator).unwrap_or(false)),
        };
        let cells = r
            .lacs
            .expect("resolved")
            .saturating_mul(r.cells_per_lac.expect("resolved"));
        r.events = Some(r.events.unwrap_or(cells.saturating_mul(EVENTS_PER_CELL)));
        Ok(r)
    }

    fn topology(&self) -> TopologyConfig {
        TopologyConfig {
            lac_count: self.lacs.expect("resolved"),
            cells_per_lac: self.cells_per_lac.expect("resolved"),
            cell_radius_m: self.cell_radius.expect("resolved"),
            region: Region {
                lat_min: self.lat_min.expect("resolved"),
                lat_max: self.lat_max.expect("resolved"),
                lon_min: self.lon_min.expect("resolved"),
                lon_max: self.lon_max.expect("resolved"),
            },
            min_separation_m: self.min_separation.expect("resolved"),
            first_lac: self.first_lac.expect("resolved"),
            mcc: self.mcc,
            mnc: self.mnc,
        }
    }

    fn outliers(&self) -> OutlierSpec {
        OutlierSpec {
            rate: self.outlier_rate.expect("resolved"),
            displacement_min_m: self.displacement_min.expect("resolved"),
            displacement_max_m: self.displacement_max.expect("resolved"),
        }
    }
}

/// Seeds for the three generation stages, derived from the run seed.
pub fn stage_seeds(seed: u64) -> [u64; 3] {
    [seed, seed.wrapping_add(1), seed.wrapping_add(2)]
}

pub fn run_synth(options: &SynthOptions) -> Result<(), CliError> {
    let cfg = options.resolve()?;
    let out = require(cfg.out.clone(), "out")?;
    let [topo_seed, inject_seed, trace_seed] = stage_seeds(cfg.seed.expect("resolved"));
    let spec = cfg.outliers();
    spec.validate().map_err(synth_error)?;

    let world = synth::generate_topology(&cfg.topology(), topo_seed).map_err(synth_error)?;
    let world = synth::inject_outliers(&world, &spec, inject_seed).map_err(synth_error)?;
    let trace_options = TraceOptions {
        strip_operator: cfg.strip_operator.expect("resolved"),
        ..TraceOptions::default()
    };
    let events = synth::generate_trace(&world, cfg.events.expect("resolved"), trace_seed, &trace_options);

    create_out_dir(&out)?;
    write_atomic(&out, "cell_db.csv", &synth::export_world_db(&world))?;
    write_atomic(&out, "trace.csv", &ingest::write_trace(&events))?;
    let m = manifest(
        "synth",
        &cfg,
        json!({
            "cells": world.cell_count(),
            "outliers": world.outlier_count(),
            "events": events.len(),
            "outputs": SYNTH_OUTPUTS,
            "world": world,
        }),
    );
    write_json(&out, "world.json", &m)
}

/// Read a world written by `synth` (or a bare serialized world).
pub fn load_world(path: &Path) -> Result<SyntheticWorld, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, Some(e.line() as u64), e))?;
    let world = match value.get("world") {
        Some(w) => w.clone(),
        None => value,
    };
    serde_json::from_value(world).map_err(|e| CliError::format(path, None, e))
}

fn read_result_rows(path: &Path) -> Result<Vec<report::ResultRow>, CliError> {
    report::parse_result_csv(open(path)?).map_err(|e| ingest_error(path, e))
}

pub fn run_score(options: &ScoreOptions) -> Result<(), CliError> {
    let rows = read_result_rows(&options.result)?;
    let world = load_world(&options.world)?;
    let score = synth::score_rows(rows.iter().map(|r| (&r.cell, r.role)), &world)
        .map_err(|e| CliError::format(&options.result, None, e))?;
    let text = serde_json::to_string_pretty(&score).expect("serializable");
    println!("{text}");
    if let Some(path) = &options.out {
        let dir = parent_dir(path);
        create_out_dir(&dir)?;
        let name = file_name(path)?;
        write_atomic(&dir, &name, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_name(path: &Path) -> Result<String, CliError> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Config(format!("{} is not a file path", path.display())))
}

pub fn run_report(options: &ReportOptions) -> Result<(), CliError> {
    if let Some(counts) = &options.retention {
        let [total, resolved, retained] = counts[..] else {
            return Err(CliError::Config("--retention takes three counts".into()));
        };
        let mut table =
            report::retention_stats(total, resolved, retained).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(claimed) = options.claimed_retained_pct {
            table.note_claimed_retained_pct(claimed);
        }
        println!("{}", serde_json::to_string_pretty(&table).expect("serializable"));
    }
    if let Some(path) = &options.result {
        let out = require(options.out.clone(), "out")?;
        let rows = read_result_rows(path)?;
        create_out_dir(&out)?;
        let mut geojson = serde_json::to_vec_pretty(&report::rows_to_geojson(&rows)).expect("serializable");
        geojson.push(b'\n');
        write_atomic(&out, "cleaned.geojson", &geojson)?;
        write_atomic(
            &out,
            "scatter_after.svg",
            report::render_scatter(&rows, "Cells after cleaning").as_bytes(),
        )?;
    }
    Ok(())
}
