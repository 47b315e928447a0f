//! Synthetic GSM topologies with ground-truth outlier labels.
//!
//! Each location area is a hexagonal lattice of cells spiralling out from
//! the area's center: the center cell first, then ring 1 starting due north
//! and proceeding clockwise, then ring 2, and so on. Cell ids follow spiral
//! order starting at 1. Outliers are injected by moving a cell's stored
//! coordinate a random distance along a random bearing, which mimics a
//! relabeled or reused cell id in a crowd-sourced database.
//!
//! Every generator is a pure function of its configuration and seed, using
//! [`PRNG_ID`].

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{CleanResult, Role};
use crate::geo::{self, GeoPoint};
use crate::ingest::{CellIdentity, TraceEvent, LAC_MAX};
use crate::resolver;

pub const PRNG_ID: &str = "rand_chacha-0.9/ChaCha8Rng/seed_from_u64";
pub const MAX_LAC_RADIUS_M: f64 = 35_000.0;
pub const MAX_CENTER_ATTEMPTS: usize = 10_000;
pub const TRACE_SPACING_S: i64 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place {wanted} area centers {separation_m} m apart within {attempts} attempts")]
    RegionTooSmall {
        wanted: usize,
        separation_m: f64,
        attempts: usize,
    },
    #[error("result references cell {0} absent from the world")]
    WorldMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for Region {
    /// Roughly the contiguous United States.
    fn default() -> Self {
        Self {
            lat_min: 30.0,
            lat_max: 47.0,
            lon_min: -120.0,
            lon_max: -75.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub lac_count: usize,
    pub cells_per_lac: usize,
    pub cell_radius_m: f64,
    pub region: Region,
    pub min_separation_m: f64,
    pub first_lac: u16,
    pub mcc: Option<u16>,
    pub mnc: Option<u16>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            lac_count: 14,
            cells_per_lac: 20,
            cell_radius_m: 180.0,
            region: Region::default(),
            min_separation_m: 80_000.0,
            first_lac: 1000,
            mcc: Some(310),
            mnc: Some(26),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub rate: f64,
    pub displacement_min_m: f64,
    pub displacement_max_m: f64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        Self {
            rate: 0.1,
            displacement_min_m: 50_000.0,
            displacement_max_m: 60_000.0,
        }
    }
}

impl OutlierSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(SynthError::InvalidConfig(format!(
                "outlier rate {} outside [0, 1]",
                self.rate
            )));
        }
        let (lo, hi) = (self.displacement_min_m, self.displacement_max_m);
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(SynthError::InvalidConfig(format!(
                "displacement range [{lo}, {hi}] invalid"
            )));
        }
        Ok(())
    }

    /// Outliers injected into an area of `size` cells. The small epsilon keeps
    /// rates like `2/22` from rounding down a whole cell.
    pub fn count_for(&self, size: usize) -> usize {
        ((self.rate * size as f64) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Clean,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCell {
    pub cell: CellIdentity,
    /// Lattice position.
    pub true_point: GeoPoint,
    /// Position published in the cell database; differs from `true_point`
    /// only for outliers.
    pub stored_point: GeoPoint,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLac {
    pub lac: u16,
    pub center: GeoPoint,
    pub cell_radius_m: f64,
    pub cells: Vec<SynthCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub spec: OutlierSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub prng: String,
    pub seed: u64,
    pub config: TopologyConfig,
    pub injections: Vec<InjectionRecord>,
    pub lacs: Vec<SynthLac>,
}

impl SyntheticWorld {
    pub fn cells(&self) -> impl Iterator<Item = &SynthCell> {
        self.lacs.iter().flat_map(|l| l.cells.iter())
    }

    pub fn cell_count(&self) -> usize {
        self.lacs.iter().map(|l| l.cells.len()).sum()
    }

    pub fn outlier_count(&self) -> usize {
        self.cells().filter(|c| c.label == Label::Outlier).count()
    }
}

/// Number of complete rings needed to hold `cells` lattice sites.
pub fn ring_count(cells: usize) -> usize {
    let mut rings = 0;
    while 1 + 3 * rings * (rings + 1) < cells {
        rings += 1;
    }
    rings
}

/// Upper bound on the distance between two sites of a `cells`-site spiral.
pub fn lattice_diameter_m(cells: usize, cell_radius_m: f64) -> f64 {
    2.0 * ring_count(cells) as f64 * 3f64.sqrt() * cell_radius_m
}

/// East/north offsets of the first `count` spiral sites with unit neighbor
/// spacing.
pub fn hex_spiral(count: usize) -> Vec<(f64, f64)> {
    let unit = |bearing_deg: f64| {
        let b = bearing_deg.to_radians();
        (b.sin(), b.cos())
    };
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push((0.0, 0.0));
    let mut ring = 1usize;
    while out.len() < count {
        // start at the north corner; edges then run clockwise
        let (mut x, mut y) = unit(0.0);
        x *= ring as f64;
        y *= ring as f64;
        for edge in 0..6 {
            let (dx, dy) = unit(120.0 + 60.0 * edge as f64);
            for _ in 0..ring {
                if out.len() == count {
                    return out;
                }
                out.push((x, y));
                x += dx;
                y += dy;
            }
        }
        ring += 1;
    }
    out
}

fn validate_topology(config: &TopologyConfig) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::InvalidConfig(m));
    if config.lac_count == 0 || config.cells_per_lac == 0 {
        return bad("lac_count and cells_per_lac must be >= 1".into());
    }
    if !(config.cell_radius_m.is_finite() && config.cell_radius_m > 0.0) {
        return bad(format!("cell radius {} must be > 0", config.cell_radius_m));
    }
    let extent = lattice_radius_m(config.cells_per_lac, config.cell_radius_m);
    if extent > MAX_LAC_RADIUS_M {
        return bad(format!(
            "{} cells of radius {} m reach {extent:.0} m from the center, beyond {MAX_LAC_RADIUS_M} m",
            config.cells_per_lac, config.cell_radius_m
        ));
    }
    let last_lac = config.first_lac as usize + config.lac_count - 1;
    if config.first_lac == 0 || last_lac > LAC_MAX as usize {
        return bad(format!("lac codes {}..={last_lac} out of range", config.first_lac));
    }
    let r = &config.region;
    let ok = |v: f64, lo: f64, hi: f64| v.is_finite() && (lo..=hi).contains(&v);
    if !(ok(r.lat_min, -90.0, 90.0) && ok(r.lat_max, -90.0, 90.0) && r.lat_min <= r.lat_max) {
        return bad(format!("region latitudes [{}, {}] invalid", r.lat_min, r.lat_max));
    }
    if !(ok(r.lon_min, -180.0, 180.0) && ok(r.lon_max, -180.0, 180.0) && r.lon_min <= r.lon_max) {
        return bad(format!("region longitudes [{}, {}] invalid", r.lon_min, r.lon_max));
    }
    for code in [config.mcc, config.mnc].into_iter().flatten() {
        if code > crate::ingest::MAX_CODE {
            return bad(format!("operator code {code} out of range"));
        }
    }
    Ok(())
}

pub fn generate_topology(config: &TopologyConfig, seed: u64) -> Result<SyntheticWorld, SynthError> {
    validate_topology(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = config.region;

    let mut centers: Vec<GeoPoint> = Vec::with_capacity(config.lac_count);
    let mut attempts = 0;
    while centers.len() < config.lac_count {
        if attempts == MAX_CENTER_ATTEMPTS {
            return Err(SynthError::RegionTooSmall {
                wanted: config.lac_count,
                separation_m: config.min_separation_m,
                attempts,
            });
        }
        attempts += 1;
        let lat = if r.lat_min < r.lat_max {
            rng.random_range(r.lat_min..r.lat_max)
        } else {
            r.lat_min
        };
        let lon = if r.lon_min < r.lon_max {
            rng.random_range(r.lon_min..r.lon_max)
        } else {
            r.lon_min
        };
        let candidate = GeoPoint::wrapped(lat, lon).expect("region validated");
        if centers
            .iter()
            .all(|c| geo::haversine_m(c, &candidate) >= config.min_separation_m)
        {
            centers.push(candidate);
        }
    }

    let spacing = 3f64.sqrt() * config.cell_radius_m;
    let spiral = hex_spiral(config.cells_per_lac);
    let lacs = centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            let lac = config.first_lac + i as u16;
            let cells = spiral
                .iter()
                .enumerate()
                .map(|(k, &(east, north))| {
                    let point = geo::offset_m(&center, east * spacing, north * spacing);
                    SynthCell {
                        cell: CellIdentity::new(config.mcc, config.mnc, lac, k as u32 + 1).expect("validated identity"),
                        true_point: point,
                        stored_point: point,
                        label: Label::Clean,
                    }
                })
                .collect();
            SynthLac {
                lac,
                center,
                cell_radius_m: config.cell_radius_m,
                cells,
            }
        })
        .collect();

    Ok(SyntheticWorld {
        prng: PRNG_ID.to_string(),
        seed,
        config: config.clone(),
        injections: Vec::new(),
        lacs,
    })
}

/// Displace `spec.count_for(size)` clean cells per area. Only stored
/// coordinates and labels change.
pub fn inject_outliers(world: &SyntheticWorld, spec: &OutlierSpec, seed: u64) -> Result<SyntheticWorld, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = world.clone();
    for lac in &mut out.lacs {
        let clean: Vec<usize> = (0..lac.cells.len())
            .filter(|&i| lac.cells[i].label == Label::Clean)
            .collect();
        let k = spec.count_for(lac.cells.len()).min(clean.len());
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, clean.len(), k)
            .into_iter()
            .map(|i| clean[i])
            .collect();
        chosen.sort_unstable();
        for i in chosen {
            let distance = if spec.displacement_min_m < spec.displacement_max_m {
                rng.random_range(spec.displacement_min_m..=spec.displacement_max_m)
            } else {
                spec.displacement_min_m
            };
            let bearing = rng.random_range(0.0..360.0);
            let cell = &mut lac.cells[i];
            cell.stored_point = cell.true_point.destination(bearing, distance);
            cell.label = Label::Outlier;
        }
    }
    out.injections.push(InjectionRecord { spec: *spec, seed });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    pub start: DateTime<Utc>,
    /// Drop mcc/mnc from every event, as in captures that log only LAC and
    /// cell id.
    pub strip_operator: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            start: DateTime::from_timestamp(1_093_996_800, 0).expect("valid epoch"), // 2004-09-01
            strip_operator: false,
        }
    }
}

/// Emit `event_count` events 60 s apart. The first events enumerate every
/// cell once in world order; the rest sample cells with weight `1/rank`,
/// rank being the cell's spiral position within its area.
pub fn generate_trace(
    world: &SyntheticWorld,
    event_count: usize,
    seed: u64,
    options: &TraceOptions,
) -> Vec<TraceEvent> {
    let cells: Vec<CellIdentity> = world
        .cells()
        .map(|c| {
            if options.strip_operator {
                c.cell.without_operator()
            } else {
                c.cell
            }
        })
        .collect();
    let mut events = Vec::with_capacity(event_count);
    if cells.is_empty() {
        return events;
    }
    let stamp = |i: usize| options.start + Duration::seconds(TRACE_SPACING_S * i as i64);
    for (i, cell) in cells.iter().take(event_count).enumerate() {
        events.push(TraceEvent {
            timestamp: stamp(i),
            cell: *cell,
        });
    }
    if event_count > cells.len() {
        let weights: Vec<f64> = world
            .lacs
            .iter()
            .flat_map(|l| (1..=l.cells.len()).map(|rank| 1.0 / rank as f64))
            .collect();
        let dist = WeightedIndex::new(&weights).expect("positive weights");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in cells.len()..event_count {
            events.push(TraceEvent {
                timestamp: stamp(i),
                cell: cells[dist.sample(&mut rng)],
            });
        }
    }
    events
}

/// The world's database as cell-DB CSV: stored coordinates, full identities.
pub fn export_world_db(world: &SyntheticWorld) -> Vec<u8> {
    let mut rows: Vec<(&CellIdentity, GeoPoint, i64)> = world.cells().map(|c| (&c.cell, c.stored_point, 0)).collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    resolver::write_cell_db(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    /// Cells in the outlier bucket.
    pub flagged: usize,
    pub true_positives: usize,
    /// Ground-truth outliers among the cells present in the result.
    pub true_outliers: usize,
    /// Ground-truth outliers that never reached clustering (unresolved).
    pub true_outliers_absent: usize,
}

/// Score flagged cells against ground truth. A result identity missing its
/// operator codes matches the world cell agreeing on the codes it has.
pub fn score_rows<'a, I>(rows: I, world: &SyntheticWorld) -> Result<DetectionScore, SynthError>
where
    I: IntoIterator<Item = (&'a CellIdentity, Role)>,
{
    let index: HashMap<(u16, u32), &SynthCell> = world.cells().map(|c| ((c.cell.lac, c.cell.cell_id), c)).collect();
    let mut seen: HashMap<(u16, u32), Role> = HashMap::new();
    for (id, role) in rows {
        let known = index
            .get(&(id.lac, id.cell_id))
            .filter(|c| id.mcc.is_none_or(|m| c.cell.mcc == Some(m)) && id.mnc.is_none_or(|m| c.cell.mnc == Some(m)));
        if known.is_none() {
            return Err(SynthError::WorldMismatch(id.to_string()));
        }
        seen.insert((id.lac, id.cell_id), role);
    }

    let mut score = DetectionScore {
        precision: 1.0,
        recall: 1.0,
        flagged: 0,
        true_positives: 0,
        true_outliers: 0,
        true_outliers_absent: 0,
    };
    for (key, role) in &seen {
        let is_outlier = index[key].label == Label::Outlier;
        if *role == Role::Outlier {
            score.flagged += 1;
            if is_outlier {
                score.true_positives += 1;
            }
        }
        if is_outlier {
            score.true_outliers += 1;
        }
    }
    score.true_outliers_absent = world.outlier_count() - score.true_outliers;
    if score.flagged > 0 {
        score.precision = score.true_positives as f64 / score.flagged as f64;
    }
    if score.true_outliers > 0 {
        score.recall = score.true_positives as f64 / score.true_outliers as f64;
    }
    Ok(score)
}

pub fn score_detection(result: &CleanResult, world: &SyntheticWorld) -> Result<DetectionScore, SynthError> {
    score_rows(result.cells().map(|(c, role)| (&c.cell, role)), world)
}

/// Radius of the smallest disc around the center guaranteed to hold every
/// clean cell of a `cells`-site lattice.
pub fn lattice_radius_m(cells: usize, cell_radius_m: f64) -> f64 {
    ring_count(cells) as f64 * 3f64.sqrt() * cell_radius_m
}
