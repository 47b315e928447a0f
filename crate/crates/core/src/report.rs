//! Retention accounting, coverage series and result serializers.
//!
//! Coordinates are `(lat, lon)` everywhere in this crate except inside
//! GeoJSON, which uses `[lon, lat]`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cluster::{CleanResult, Role};
use crate::geo::GeoPoint;
use crate::ingest::{self, CellIdentity, IngestError, Row, TraceEvent};
use crate::resolver::ResolvedCell;

pub const RESULT_CSV_HEADER: [&str; 7] = ["mcc", "mnc", "lac", "cell_id", "lat", "lon", "role"];

/// Fill colors, indexed by `lac % 12`.
pub const PALETTE: [&str; 12] = [
    "#1f78b4", "#33a02c", "#e31a1c", "#ff7f00", "#6a3d9a", "#b15928", "#a6cee3", "#b2df8a", "#fb9a99", "#fdbf6f",
    "#cab2d6", "#8c8c00",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error(
        "counts must satisfy retained <= resolved <= total, got total={total} resolved={resolved} retained={retained}"
    )]
    OrderingViolation {
        total: usize,
        resolved: usize,
        retained: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionTable {
    pub total_unique: usize,
    pub resolved: usize,
    pub retained: usize,
    pub resolved_pct: f64,
    pub retained_pct_of_total: f64,
    pub retained_pct_of_resolved: f64,
    pub notes: Vec<String>,
}

/// `100 * part / whole` rounded half-up to one decimal, computed in integers.
pub fn percent_half_up(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    let (part, whole) = (part as u128, whole as u128);
    let tenths = (2000 * part + whole) / (2 * whole);
    tenths as f64 / 10.0
}

pub fn retention_stats(total: usize, resolved: usize, retained: usize) -> Result<RetentionTable, ReportError> {
    if !(retained <= resolved && resolved <= total) {
        return Err(ReportError::OrderingViolation {
            total,
            resolved,
            retained,
        });
    }
    Ok(RetentionTable {
        total_unique: total,
        resolved,
        retained,
        resolved_pct: percent_half_up(resolved, total),
        retained_pct_of_total: percent_half_up(retained, total),
        retained_pct_of_resolved: percent_half_up(retained, resolved),
        notes: vec![
            "percentages are 100*count/total_unique rounded half-up to one decimal".into(),
            "retained_pct_of_resolved is relative to resolved cells instead".into(),
        ],
    })
}

impl RetentionTable {
    /// Record how an externally reported retained percentage compares with
    /// the computed one.
    pub fn note_claimed_retained_pct(&mut self, claimed: f64) {
        let diff = self.retained_pct_of_total - claimed;
        if diff.abs() < 0.05 {
            self.notes
                .push(format!("claimed retained percentage {claimed:.1}% matches"));
        } else {
            self.notes.push(format!(
                "claimed retained percentage {claimed:.1}% differs from computed {:.1}% ({} of {}) by {diff:+.1} points",
                self.retained_pct_of_total, self.retained, self.total_unique
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageBin {
    pub bin: usize,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSeries {
    pub window: usize,
    pub bins: Vec<CoverageBin>,
}

/// Per window of consecutive events: how many hit a resolved cell (before
/// cleaning) and how many hit a retained cell (after).
pub fn coverage_series(
    events: &[TraceEvent],
    resolved: &HashSet<CellIdentity>,
    retained: &HashSet<CellIdentity>,
    window: NonZeroUsize,
) -> CoverageSeries {
    let bins = events
        .chunks(window.get())
        .enumerate()
        .map(|(bin, chunk)| {
            let before = chunk.iter().filter(|e| resolved.contains(&e.cell)).count();
            let after = chunk
                .iter()
                .filter(|e| resolved.contains(&e.cell) && retained.contains(&e.cell))
                .count();
            CoverageBin { bin, before, after }
        })
        .collect();
    CoverageSeries {
        window: window.get(),
        bins,
    }
}

/// One output row: a cell, where it was resolved to, and its role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: CellIdentity,
    pub point: GeoPoint,
    pub role: Role,
}

pub fn result_rows(result: &CleanResult) -> Vec<ResultRow> {
    result
        .cells()
        .map(|(c, role)| ResultRow {
            cell: c.cell,
            point: c.point,
            role,
        })
        .collect()
}

fn code_json(c: Option<u16>) -> Value {
    c.map(Value::from).unwrap_or(Value::Null)
}

pub fn rows_to_geojson(rows: &[ResultRow]) -> Value {
    let features: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [r.point.lon(), r.point.lat()],
                },
                "properties": {
                    "mcc": code_json(r.cell.mcc),
                    "mnc": code_json(r.cell.mnc),
                    "lac": r.cell.lac,
                    "cell_id": r.cell.cell_id,
                    "role": r.role.name(),
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn export_geojson(result: &CleanResult) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&rows_to_geojson(&result_rows(result))).expect("json value");
    out.push(b'\n');
    out
}

/// Structural GeoJSON check for point feature collections: returns the
/// feature count.
pub fn validate_geojson(doc: &Value) -> Result<usize, String> {
    if doc.get("type") != Some(&json!("FeatureCollection")) {
        return Err("top level is not a FeatureCollection".into());
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or("features is not an array")?;
    for (i, f) in features.iter().enumerate() {
        if f.get("type") != Some(&json!("Feature")) {
            return Err(format!("feature {i}: type is not Feature"));
        }
        if !f.get("properties").is_some_and(|p| p.is_object() || p.is_null()) {
            return Err(format!("feature {i}: properties missing"));
        }
        let geom = f.get("geometry").ok_or(format!("feature {i}: no geometry"))?;
        if geom.get("type") != Some(&json!("Point")) {
            return Err(format!("feature {i}: geometry is not a Point"));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or(format!("feature {i}: coordinates not an array"))?;
        let nums: Vec<f64> = coords.iter().filter_map(Value::as_f64).collect();
        if nums.len() != coords.len() || !(2..=3).contains(&nums.len()) {
            return Err(format!("feature {i}: position must hold 2 or 3 numbers"));
        }
        let (lon, lat) = (nums[0], nums[1]);
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(format!(
                "feature {i}: [{lon}, {lat}] is not a valid [lon, lat] position"
            ));
        }
    }
    Ok(features.len())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = RESULT_CSV_HEADER.join(",");
    out.push('\n');
    let code = |c: Option<u16>| c.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            code(r.cell.mcc),
            code(r.cell.mnc),
            r.cell.lac,
            r.cell.cell_id,
            r.point.lat(),
            r.point.lon(),
            r.role.name()
        );
    }
    out.into_bytes()
}

pub fn export_csv(result: &CleanResult) -> Vec<u8> {
    rows_to_csv(&result_rows(result))
}

/// Read back a result CSV written by [`export_csv`].
pub fn parse_result_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, IngestError> {
    let mut reader = ingest::csv_reader(input);
    let mut rows = Vec::new();
    if !ingest::expect_header(&mut reader, &RESULT_CSV_HEADER)? {
        return Ok(rows);
    }
    let mut record = csv::StringRecord::new();
    while let Some(row) = ingest::next_row(&mut reader, &mut record)? {
        let line = match row {
            Row::Record(line) => line,
            Row::Broken(line, reason) => return Err(IngestError::MalformedRow { line, reason }),
        };
        let parsed = (|| {
            if record.len() != RESULT_CSV_HEADER.len() {
                return Err(format!(
                    "expected {} fields, found {}",
                    RESULT_CSV_HEADER.len(),
                    record.len()
                ));
            }
            let cell = CellIdentity::parse_fields(&record[0], &record[1], &record[2], &record[3])?;
            let lat: f64 = record[4].parse().map_err(|_| format!("lat {:?}", &record[4]))?;
            let lon: f64 = record[5].parse().map_err(|_| format!("lon {:?}", &record[5]))?;
            let point = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
            let role = Role::parse(&record[6]).ok_or_else(|| format!("unknown role {:?}", &record[6]))?;
            Ok(ResultRow { cell, point, role })
        })();
        rows.push(parsed.map_err(|reason| IngestError::MalformedRow { line, reason })?);
    }
    Ok(rows)
}

pub const SVG_MAX_SIDE: f64 = 800.0;
const MARKER_RADIUS: f64 = 3.0;

/// Scatter plot of rows: one marker per row colored by `lac % 12`.
/// Representatives are filled circles, outliers open circles and cells of
/// under-populated areas open squares. The viewport is the data's
/// equirectangular bounding box plus a 5% margin on each side.
pub fn render_scatter(rows: &[ResultRow], title: &str) -> String {
    let mut svg = String::new();
    if rows.is_empty() {
        let _ = write!(
            svg,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n<title>{}</title>\n</svg>\n",
            xml_escape(title),
            s = SVG_MAX_SIDE
        );
        return svg;
    }

    let mid_lat = {
        let (lo, hi) = rows.iter().fold((f64::MAX, f64::MIN), |(lo, hi), r| {
            (lo.min(r.point.lat()), hi.max(r.point.lat()))
        });
        (lo + hi) / 2.0
    };
    let x_scale = mid_lat.to_radians().cos().max(1e-6);
    let project = |p: &GeoPoint| (p.lon() * x_scale, p.lat());

    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for r in rows {
        let (x, y) = project(&r.point);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // a lone point or a line still gets a square-ish frame
    let span = (x1 - x0).max(y1 - y0).max(1e-4);
    let (sx, sy) = ((x1 - x0).max(span * 0.05), (y1 - y0).max(span * 0.05));
    let (x0, y1) = (x0 - sx * 0.05, y1 + sy * 0.05);
    let (sx, sy) = (sx * 1.1, sy * 1.1);
    let scale = SVG_MAX_SIDE / sx.max(sy);
    let (width, height) = ((sx * scale).ceil(), (sy * scale).ceil());

    let _ = writeln!(svg, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(svg, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(
        svg,
        "<rect class=\"background\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
    );
    for r in rows {
        let (x, y) = project(&r.point);
        let (cx, cy) = ((x - x0) * scale, (y1 - y) * scale);
        let color = PALETTE[r.cell.lac as usize % PALETTE.len()];
        let _ = match r.role {
            Role::Representative => writeln!(
                svg,
                "<circle class=\"marker representative\" data-lac=\"{}\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{MARKER_RADIUS}\" fill=\"{color}\"/>",
                r.cell.lac
            ),
            Role::Outlier => writeln!(
                svg,
                "<circle class=\"marker outlier\" data-lac=\"{}\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{MARKER_RADIUS}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                r.cell.lac
            ),
            Role::Insufficient => writeln!(
                svg,
                "<rect class=\"marker insufficient\" data-lac=\"{}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                r.cell.lac,
                cx - MARKER_RADIUS,
                cy - MARKER_RADIUS,
                w = 2.0 * MARKER_RADIUS
            ),
        };
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_result_scatter(result: &CleanResult, title: &str) -> String {
    render_scatter(&result_rows(result), title)
}

/// Scatter of resolved cells before cleaning, all drawn as representatives.
pub fn render_resolved_scatter(cells: &[ResolvedCell], title: &str) -> String {
    let mut rows: Vec<ResultRow> = cells
        .iter()
        .map(|c| ResultRow {
            cell: c.cell,
            point: c.point,
            role: Role::Representative,
        })
        .collect();
    rows.sort_by_key(|c| c.cell);
    render_scatter(&rows, title)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Number of marker elements in an SVG produced by [`render_scatter`].
pub fn count_markers(svg: &str) -> usize {
    svg.matches("class=\"marker ").count()
}
