//! Cell-ID to coordinate resolution against an offline cell database.
//!
//! The native database format is CSV with header
//! `mcc,mnc,lac,cell_id,lat,lon,freshness`. Rows sharing a quadruple are
//! collapsed at load time: the highest freshness wins, and among equal
//! freshness the row appearing last in the file wins.
//!
//! Lookups support two policies. [`MatchPolicy::ExactOnly`] requires the full
//! quadruple, absent codes included. [`MatchPolicy::AllowWildcard`] additionally
//! lets a query with missing operator codes match any row that agrees on the
//! fields the query does carry; when several rows qualify the smallest
//! `(mcc, mnc)` is chosen and the lookup is reported as ambiguous.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Read;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;
use crate::ingest::{self, CellIdentity, CellSet, IngestError, Row};

pub const CELL_DB_HEADER: [&str; 7] = ["mcc", "mnc", "lac", "cell_id", "lat", "lon", "freshness"];

/// Column order of OpenCellID exports.
pub const OPENCELLID_HEADER: [&str; 14] = [
    "radio",
    "mcc",
    "net",
    "area",
    "cell",
    "unit",
    "lon",
    "lat",
    "range",
    "samples",
    "changeable",
    "created",
    "updated",
    "averageSignal",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    ExactOnly,
    #[default]
    AllowWildcard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Wildcard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCell {
    /// The identity as queried, not the database row's.
    pub cell: CellIdentity,
    pub point: GeoPoint,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    Resolved {
        cell: ResolvedCell,
        /// Rows that qualified; greater than one only for ambiguous wildcards.
        candidates: usize,
    },
    Unresolved,
}

impl Resolution {
    pub fn resolved(&self) -> Option<&ResolvedCell> {
        match self {
            Resolution::Resolved { cell, .. } => Some(cell),
            Resolution::Unresolved => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResolutionStats {
    pub total: usize,
    pub resolved: usize,
    pub unresolved: usize,
    pub wildcard_ambiguous: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResolveOutcome {
    pub resolved: Vec<ResolvedCell>,
    pub unresolved: Vec<CellIdentity>,
    pub stats: ResolutionStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DbEntry {
    point: GeoPoint,
    freshness: i64,
}

/// Immutable cell database.
#[derive(Debug, Clone, Default)]
pub struct CellDatabase {
    rows: BTreeMap<CellIdentity, DbEntry>,
    /// `(lac, cell_id)` to the full identities stored for it, in canonical order.
    by_cell: HashMap<(u16, u32), Vec<CellIdentity>>,
    /// Data rows read, before conflict resolution.
    rows_read: usize,
}

impl CellDatabase {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_read(&self) -> usize {
        self.rows_read
    }

    pub fn get(&self, cell: &CellIdentity) -> Option<GeoPoint> {
        self.rows.get(cell).map(|e| e.point)
    }

    /// Rows in canonical key order.
    pub fn iter(&self) -> impl Iterator<Item = (&CellIdentity, GeoPoint, i64)> {
        self.rows.iter().map(|(k, e)| (k, e.point, e.freshness))
    }

    /// Insert one row, applying the freshness conflict rule. A later call with
    /// equal freshness replaces the earlier row.
    pub fn insert(&mut self, cell: CellIdentity, point: GeoPoint, freshness: i64) {
        self.rows_read += 1;
        match self.rows.get_mut(&cell) {
            Some(existing) if existing.freshness > freshness => {}
            Some(existing) => *existing = DbEntry { point, freshness },
            None => {
                self.rows.insert(cell, DbEntry { point, freshness });
                let ids = self.by_cell.entry((cell.lac, cell.cell_id)).or_default();
                let pos = ids.binary_search(&cell).unwrap_or_else(|p| p);
                ids.insert(pos, cell);
            }
        }
    }

    pub fn resolve_cell(&self, cell: &CellIdentity, policy: MatchPolicy) -> Resolution {
        if let Some(entry) = self.rows.get(cell) {
            return Resolution::Resolved {
                cell: ResolvedCell {
                    cell: *cell,
                    point: entry.point,
                    match_kind: MatchKind::Exact,
                },
                candidates: 1,
            };
        }
        if policy == MatchPolicy::ExactOnly || cell.is_complete() {
            return Resolution::Unresolved;
        }
        let Some(ids) = self.by_cell.get(&(cell.lac, cell.cell_id)) else {
            return Resolution::Unresolved;
        };
        let agrees = |row: &&CellIdentity| {
            cell.mcc.is_none_or(|m| row.mcc == Some(m)) && cell.mnc.is_none_or(|m| row.mnc == Some(m))
        };
        // ids is sorted, so the first candidate has the smallest (mcc, mnc)
        let mut candidates = ids.iter().filter(agrees);
        let Some(best) = candidates.next() else {
            return Resolution::Unresolved;
        };
        Resolution::Resolved {
            cell: ResolvedCell {
                cell: *cell,
                point: self.rows[best].point,
                match_kind: MatchKind::Wildcard,
            },
            candidates: 1 + candidates.count(),
        }
    }

    pub fn resolve_all(&self, cells: &CellSet, policy: MatchPolicy) -> ResolveOutcome {
        let mut out = ResolveOutcome::default();
        for cell in cells {
            match self.resolve_cell(cell, policy) {
                Resolution::Resolved { cell, candidates } => {
                    if candidates > 1 {
                        out.stats.wildcard_ambiguous += 1;
                    }
                    out.resolved.push(cell);
                }
                Resolution::Unresolved => out.unresolved.push(*cell),
            }
        }
        out.stats.total = cells.len();
        out.stats.resolved = out.resolved.len();
        out.stats.unresolved = out.unresolved.len();
        out
    }
}

fn parse_coord(s: &str, what: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("{what} {s:?} is not a number"))
}

fn parse_point(lat: &str, lon: &str) -> Result<GeoPoint, String> {
    let lat = parse_coord(lat, "lat")?;
    let lon = parse_coord(lon, "lon")?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn parse_db_record(record: &csv::StringRecord) -> Result<(CellIdentity, GeoPoint, i64), String> {
    if record.len() != CELL_DB_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            CELL_DB_HEADER.len(),
            record.len()
        ));
    }
    let cell = CellIdentity::parse_fields(&record[0], &record[1], &record[2], &record[3])?;
    let point = parse_point(&record[4], &record[5])?;
    let freshness = match record[6].trim() {
        "" => 0,
        s => s
            .parse::<i64>()
            .map_err(|_| format!("freshness {s:?} is not an integer"))?,
    };
    Ok((cell, point, freshness))
}

fn load_with<R: Read>(
    input: R,
    header: &[&str],
    parse: impl Fn(&csv::StringRecord) -> Result<(CellIdentity, GeoPoint, i64), String>,
) -> Result<CellDatabase, IngestError> {
    let mut reader = ingest::csv_reader(input);
    let mut db = CellDatabase::default();
    if !ingest::expect_header(&mut reader, header)? {
        return Ok(db);
    }
    let mut record = csv::StringRecord::new();
    while let Some(row) = ingest::next_row(&mut reader, &mut record)? {
        match row {
            Row::Record(line) => {
                let (cell, point, freshness) =
                    parse(&record).map_err(|reason| IngestError::MalformedRow { line, reason })?;
                db.insert(cell, point, freshness);
            }
            Row::Broken(line, reason) => return Err(IngestError::MalformedRow { line, reason }),
        }
    }
    Ok(db)
}

/// Load a database in the native cell-DB CSV format.
pub fn load_cell_db<R: Read>(input: R) -> Result<CellDatabase, IngestError> {
    load_with(input, &CELL_DB_HEADER, parse_db_record)
}

/// Load an OpenCellID-style export. `net` maps to mnc, `area` to lac, `cell`
/// to cell_id, and the `updated` timestamp becomes the freshness ordinal.
pub fn load_opencellid<R: Read>(input: R) -> Result<CellDatabase, IngestError> {
    load_with(input, &OPENCELLID_HEADER, |record| {
        if record.len() != OPENCELLID_HEADER.len() {
            return Err(format!(
                "expected {} fields, found {}",
                OPENCELLID_HEADER.len(),
                record.len()
            ));
        }
        let cell = CellIdentity::parse_fields(&record[1], &record[2], &record[3], &record[4])?;
        let point = parse_point(&record[7], &record[6])?;
        let freshness = match record[12].trim() {
            "" => 0,
            s => s
                .parse::<i64>()
                .map_err(|_| format!("updated {s:?} is not an integer"))?,
        };
        Ok((cell, point, freshness))
    })
}

/// Serialize a database in the native format, rows in canonical order.
pub fn write_cell_db<'a>(rows: impl IntoIterator<Item = (&'a CellIdentity, GeoPoint, i64)>) -> Vec<u8> {
    let mut out = CELL_DB_HEADER.join(",");
    out.push('\n');
    for (cell, point, freshness) in rows {
        let code = |c: Option<u16>| c.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            code(cell.mcc),
            code(cell.mnc),
            cell.lac,
            cell.cell_id,
            point.lat(),
            point.lon(),
            freshness
        ));
    }
    out.into_bytes()
}

/// A batch lookup service keyed by full quadruple: one answer per query, in
/// query order, `None` for a miss.
pub trait CellLookup {
    fn lookup_batch(&self, cells: &[CellIdentity]) -> Vec<Option<GeoPoint>>;
}

impl CellLookup for CellDatabase {
    fn lookup_batch(&self, cells: &[CellIdentity]) -> Vec<Option<GeoPoint>> {
        cells.iter().map(|c| self.get(c)).collect()
    }
}

#[derive(Debug, Default)]
struct CacheState {
    entries: HashMap<CellIdentity, Option<GeoPoint>>,
    order: VecDeque<CellIdentity>,
}

/// Bounded FIFO cache in front of a [`CellLookup`]. Misses are cached too.
/// Concurrent callers may both forward the same uncached key; results are
/// still consistent because backends are assumed deterministic.
pub struct CachedLookup<L> {
    inner: L,
    capacity: usize,
    state: Mutex<CacheState>,
}

impl<L: CellLookup> CachedLookup<L> {
    pub fn new(inner: L, capacity: usize) -> Self {
        Self {
            inner,
            capacity,
            state: Mutex::new(CacheState::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }
}

impl<L: CellLookup> CellLookup for CachedLookup<L> {
    fn lookup_batch(&self, cells: &[CellIdentity]) -> Vec<Option<GeoPoint>> {
        let mut answers: Vec<Option<Option<GeoPoint>>> = {
            let state = self.state.lock().expect("cache lock poisoned");
            cells.iter().map(|c| state.entries.get(c).copied()).collect()
        };
        let mut missing: Vec<CellIdentity> = cells
            .iter()
            .zip(&answers)
            .filter(|(_, a)| a.is_none())
            .map(|(c, _)| *c)
            .collect();
        missing.sort_unstable();
        missing.dedup();

        if !missing.is_empty() {
            let fetched = self.inner.lookup_batch(&missing);
            let mut state = self.state.lock().expect("cache lock poisoned");
            for (cell, point) in missing.iter().zip(fetched) {
                if self.capacity > 0 && !state.entries.contains_key(cell) {
                    if state.entries.len() >= self.capacity {
                        if let Some(old) = state.order.pop_front() {
                            state.entries.remove(&old);
                        }
                    }
                    state.order.push_back(*cell);
                    state.entries.insert(*cell, point);
                }
                for (q, a) in cells.iter().zip(answers.iter_mut()) {
                    if q == cell && a.is_none() {
                        *a = Some(point);
                    }
                }
            }
        }
        answers.into_iter().map(|a| a.flatten()).collect()
    }
}
