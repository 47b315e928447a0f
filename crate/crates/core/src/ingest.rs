//! Mobility trace parsing and unique-cell extraction.
//!
//! Trace files are CSV with the header `timestamp,mcc,mnc,lac,cell_id`.
//! `mcc` and `mnc` may be empty (operator codes missing from the capture).

use std::fmt;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_HEADER: [&str; 5] = ["timestamp", "mcc", "mnc", "lac", "cell_id"];
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub const MAX_CODE: u16 = 999;
pub const LAC_MIN: u16 = 1;
pub const LAC_MAX: u16 = 65_533;
/// Upper bound for UMTS-style 28-bit cell identifiers.
pub const CELL_ID_MAX: u32 = (1 << 28) - 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("bad header {found:?}, expected {expected:?}")]
    BadHeader { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub fn line(&self) -> Option<u64> {
        match self {
            IngestError::MalformedRow { line, .. } => Some(*line),
            IngestError::BadHeader { .. } => Some(1),
            IngestError::Io(_) => None,
        }
    }
}

/// Cell Global Identity, possibly missing its operator codes.
///
/// The derived ordering is the canonical one: `(mcc, mnc, lac, cell_id)` with
/// an absent code sorting before any present one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIdentity {
    pub mcc: Option<u16>,
    pub mnc: Option<u16>,
    pub lac: u16,
    pub cell_id: u32,
}

impl CellIdentity {
    pub fn new(mcc: Option<u16>, mnc: Option<u16>, lac: u16, cell_id: u32) -> Result<Self, String> {
        if let Some(v) = mcc.filter(|v| *v > MAX_CODE) {
            return Err(format!("mcc {v} out of range 0-{MAX_CODE}"));
        }
        if let Some(v) = mnc.filter(|v| *v > MAX_CODE) {
            return Err(format!("mnc {v} out of range 0-{MAX_CODE}"));
        }
        if !(LAC_MIN..=LAC_MAX).contains(&lac) {
            return Err(format!("lac {lac} out of range {LAC_MIN}-{LAC_MAX}"));
        }
        if cell_id > CELL_ID_MAX {
            return Err(format!("cell_id {cell_id} out of range 0-{CELL_ID_MAX}"));
        }
        Ok(Self { mcc, mnc, lac, cell_id })
    }

    /// Both operator codes present.
    pub fn is_complete(&self) -> bool {
        self.mcc.is_some() && self.mnc.is_some()
    }

    /// Same identity with the operator codes dropped.
    pub fn without_operator(&self) -> Self {
        Self {
            mcc: None,
            mnc: None,
            ..*self
        }
    }

    /// Parse the four identity fields from their CSV text.
    pub fn parse_fields(mcc: &str, mnc: &str, lac: &str, cell_id: &str) -> Result<Self, String> {
        let mcc = parse_optional(mcc, "mcc")?;
        let mnc = parse_optional(mnc, "mnc")?;
        let lac: u16 = parse_int(lac, "lac")?;
        let cell_id: u32 = parse_int(cell_id, "cell_id")?;
        Self::new(mcc, mnc, lac, cell_id)
    }
}

impl fmt::Display for CellIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = |c: Option<u16>| c.map(|v| v.to_string()).unwrap_or_else(|| "*".into());
        write!(f, "{}-{}-{}-{}", code(self.mcc), code(self.mnc), self.lac, self.cell_id)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    let s = s.trim();
    // reject signs; codes are plain decimal
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("{what} {s:?} is not a decimal integer"));
    }
    s.parse::<T>().map_err(|_| format!("{what} {s:?} out of range"))
}

fn parse_optional(s: &str, what: &str) -> Result<Option<u16>, String> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_int(s, what).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub timestamp: DateTime<Utc>,
    pub cell: CellIdentity,
}

impl TraceEvent {
    pub fn format_timestamp(&self) -> String {
        self.timestamp.format(TIMESTAMP_FORMAT).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedTrace {
    pub events: Vec<TraceEvent>,
    /// Malformed data rows dropped in lenient mode, with their line numbers.
    pub skipped: Vec<u64>,
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .map(|t| t.and_utc())
        .map_err(|e| format!("timestamp {s:?}: {e}"))
}

fn parse_trace_record(record: &csv::StringRecord) -> Result<TraceEvent, String> {
    if record.len() != TRACE_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            TRACE_HEADER.len(),
            record.len()
        ));
    }
    let timestamp = parse_timestamp(&record[0])?;
    let cell = CellIdentity::parse_fields(&record[1], &record[2], &record[3], &record[4])?;
    Ok(TraceEvent { timestamp, cell })
}

/// Build a CSV reader shared by every format in this crate: no implicit
/// header handling, ragged rows allowed so they can be reported per line.
pub(crate) fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Read the header row and check it against `expected`. Returns `false` for
/// completely empty input.
pub(crate) fn expect_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<bool, IngestError> {
    let mut header = csv::StringRecord::new();
    let got = reader.read_record(&mut header).map_err(csv_to_ingest)?;
    if !got {
        return Ok(false);
    }
    let fields: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, f)| if i == 0 { f.trim_start_matches('\u{feff}') } else { f })
        .collect();
    if fields != expected {
        return Err(IngestError::BadHeader {
            found: fields.join(","),
            expected: expected.join(","),
        });
    }
    Ok(true)
}

pub(crate) fn csv_to_ingest(err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        kind => IngestError::MalformedRow {
            line,
            reason: format!("{kind:?}"),
        },
    }
}

/// Outcome of reading one non-blank data row.
pub(crate) enum Row {
    /// Record parsed at the given 1-based line.
    Record(u64),
    /// CSV-level failure (bad UTF-8, broken quoting) at the given line.
    Broken(u64, String),
}

/// Read the next non-blank row into `record`. I/O failures are fatal.
pub(crate) fn next_row<R: Read>(
    reader: &mut csv::Reader<R>,
    record: &mut csv::StringRecord,
) -> Result<Option<Row>, IngestError> {
    loop {
        match reader.read_record(record) {
            Ok(false) => return Ok(None),
            Ok(true) if record.iter().all(str::is_empty) => continue,
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                return Ok(Some(Row::Record(line)));
            }
            Err(e) => {
                return match csv_to_ingest(e) {
                    IngestError::MalformedRow { line, reason } => Ok(Some(Row::Broken(line, reason))),
                    other => Err(other),
                }
            }
        }
    }
}

/// Parse a trace file. Strict mode aborts on the first malformed row;
/// lenient mode skips and records it.
pub fn parse_trace<R: Read>(input: R, strictness: Strictness) -> Result<ParsedTrace, IngestError> {
    let mut reader = csv_reader(input);
    if !expect_header(&mut reader, &TRACE_HEADER)? {
        return Ok(ParsedTrace::default());
    }
    let mut parsed = ParsedTrace::default();
    let mut record = csv::StringRecord::new();
    while let Some(row) = next_row(&mut reader, &mut record)? {
        let (line, outcome) = match row {
            Row::Record(line) => (line, parse_trace_record(&record)),
            Row::Broken(line, reason) => (line, Err(reason)),
        };
        match (outcome, strictness) {
            (Ok(event), _) => parsed.events.push(event),
            (Err(reason), Strictness::Strict) => return Err(IngestError::MalformedRow { line, reason }),
            (Err(_), Strictness::Lenient) => parsed.skipped.push(line),
        }
    }
    Ok(parsed)
}

/// Serialize events in the trace CSV format.
pub fn write_trace(events: &[TraceEvent]) -> Vec<u8> {
    let mut out = String::with_capacity(32 * (events.len() + 1));
    out.push_str(&TRACE_HEADER.join(","));
    out.push('\n');
    for e in events {
        let code = |c: Option<u16>| c.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.format_timestamp(),
            code(e.cell.mcc),
            code(e.cell.mnc),
            e.cell.lac,
            e.cell.cell_id
        ));
    }
    out.into_bytes()
}

/// Distinct cells in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellSet {
    cells: Vec<CellIdentity>,
}

impl CellSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn as_slice(&self) -> &[CellIdentity] {
        &self.cells
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CellIdentity> {
        self.cells.iter()
    }

    pub fn contains(&self, cell: &CellIdentity) -> bool {
        self.cells.binary_search(cell).is_ok()
    }
}

impl FromIterator<CellIdentity> for CellSet {
    fn from_iter<T: IntoIterator<Item = CellIdentity>>(iter: T) -> Self {
        let mut cells: Vec<CellIdentity> = iter.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        CellSet { cells }
    }
}

impl<'a> IntoIterator for &'a CellSet {
    type Item = &'a CellIdentity;
    type IntoIter = std::slice::Iter<'a, CellIdentity>;

    fn into_iter(self) -> Self::IntoIter {
        self.cells.iter()
    }
}

pub fn extract_unique_cells(events: &[TraceEvent]) -> CellSet {
    events.iter().map(|e| e.cell).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp,mcc,mnc,lac,cell_id\n";

    fn cell(mcc: Option<u16>, mnc: Option<u16>, lac: u16, cell_id: u32) -> CellIdentity {
        CellIdentity::new(mcc, mnc, lac, cell_id).unwrap()
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_trace(HEADER.as_bytes(), Strictness::Strict).unwrap();
        assert!(parsed.events.is_empty());
        assert!(parse_trace(&b""[..], Strictness::Strict).unwrap().events.is_empty());
    }

    #[test]
    fn missing_operator_codes() {
        let input = format!("{HEADER}2004-09-01T12:00:00Z,,,24127,51\n");
        let parsed = parse_trace(input.as_bytes(), Strictness::Strict).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let e = parsed.events[0];
        assert_eq!(e.cell, cell(None, None, 24127, 51));
        assert_eq!(e.format_timestamp(), "2004-09-01T12:00:00Z");
    }

    #[test]
    fn zero_lac_is_malformed_in_strict_mode() {
        let input = format!("{HEADER}2004-09-01T12:00:00Z,310,26,24127,51\n2004-09-01T12:01:00Z,310,26,0,51\n");
        match parse_trace(input.as_bytes(), Strictness::Strict) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let lenient = parse_trace(input.as_bytes(), Strictness::Lenient).unwrap();
        assert_eq!(lenient.events.len(), 1);
        assert_eq!(lenient.skipped, vec![3]);
    }

    #[test]
    fn lenient_skips_ragged_and_garbage_rows() {
        let input = format!(
            "{HEADER}garbage\n2004-09-01T12:00:00Z,310,26,24127,51\nnot-a-time,,,5,5\n2004-09-01T12:00:00Z,1000,26,5,5\n"
        );
        let parsed = parse_trace(input.as_bytes(), Strictness::Lenient).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert_eq!(parsed.skipped, vec![2, 4, 5]);
    }

    #[test]
    fn bad_header_is_rejected() {
        let err = parse_trace(&b"time,mcc,mnc,lac,cell\n"[..], Strictness::Lenient).unwrap_err();
        assert!(matches!(err, IngestError::BadHeader { .. }));
    }

    #[test]
    fn crlf_and_missing_trailing_newline() {
        let lf = format!("{HEADER}2004-09-01T12:00:00Z,,,1,2\n2004-09-01T12:00:01Z,310,,3,4\n");
        let crlf = lf.replace('\n', "\r\n");
        let no_trailing = lf.trim_end().to_string();
        let a = parse_trace(lf.as_bytes(), Strictness::Strict).unwrap();
        let b = parse_trace(crlf.as_bytes(), Strictness::Strict).unwrap();
        let c = parse_trace(no_trailing.as_bytes(), Strictness::Strict).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.events[1].cell, cell(Some(310), None, 3, 4));
    }

    #[test]
    fn unique_cells_dedup_and_order() {
        assert!(extract_unique_cells(&[]).is_empty());
        let t = parse_timestamp("2004-09-01T12:00:00Z").unwrap();
        let a = cell(Some(310), Some(26), 10, 1);
        let b = cell(None, None, 10, 2);
        let events: Vec<_> = [a, b, a]
            .iter()
            .map(|&c| TraceEvent { timestamp: t, cell: c })
            .collect();
        let set = extract_unique_cells(&events);
        // absent codes sort first
        assert_eq!(set.as_slice(), &[b, a]);
        assert!(set.contains(&a));
    }

    #[test]
    fn write_then_parse() {
        let t = parse_timestamp("2010-01-02T03:04:05Z").unwrap();
        let events = vec![
            TraceEvent {
                timestamp: t,
                cell: cell(None, Some(7), 9, 268_435_455),
            },
            TraceEvent {
                timestamp: t,
                cell: cell(Some(0), Some(0), 65_533, 0),
            },
        ];
        let bytes = write_trace(&events);
        let parsed = parse_trace(&bytes[..], Strictness::Strict).unwrap();
        assert_eq!(parsed.events, events);
    }

    #[test]
    fn identity_ranges() {
        assert!(CellIdentity::new(None, None, 65_534, 0).is_err());
        assert!(CellIdentity::new(None, None, 1, CELL_ID_MAX + 1).is_err());
        assert!(CellIdentity::new(Some(1000), None, 1, 0).is_err());
        assert!(CellIdentity::parse_fields("", "", "-1", "3").is_err());
    }
}
