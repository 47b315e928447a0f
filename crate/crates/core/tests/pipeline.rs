mod common;

use std::collections::HashSet;

use lacclust::cluster::{self, group_by_lac, LacStatus};
use lacclust::ingest::{self, Strictness};
use lacclust::report;
use lacclust::resolver::{CellDatabase, MatchPolicy};
use lacclust::synth::{self, Label, TopologyConfig, TraceOptions};
use lacclust::{ClusterParams, Role};

fn world(lacs: usize, cells_per_lac: usize, seed: u64) -> synth::SyntheticWorld {
    let topo = TopologyConfig {
        lac_count: lacs,
        cells_per_lac,
        ..TopologyConfig::default()
    };
    synth::generate_topology(&topo, seed).unwrap()
}

#[test]
fn ten_thousand_events_over_1744_cells() {
    // 16 areas of 109 cells
    let w = world(16, 109, 5);
    assert_eq!(w.cell_count(), 1744);
    let events = synth::generate_trace(&w, 10_000, 6, &TraceOptions::default());
    let bytes = ingest::write_trace(&events);
    let parsed = ingest::parse_trace(&bytes[..], Strictness::Strict).unwrap();
    assert_eq!(parsed.events, events);
    assert_eq!(ingest::extract_unique_cells(&parsed.events).len(), 1744);
}

#[test]
fn database_covering_680_of_1744() {
    let w = world(16, 109, 5);
    let cells = ingest::extract_unique_cells(&synth::generate_trace(&w, 1744, 0, &TraceOptions::default()));
    let mut db = CellDatabase::default();
    for c in w.cells().step_by(2).take(680) {
        db.insert(c.cell, c.stored_point, 0);
    }
    let out = db.resolve_all(&cells, MatchPolicy::AllowWildcard);
    assert_eq!(
        (out.stats.total, out.stats.resolved, out.stats.unresolved),
        (1744, 680, 1064)
    );
    assert_eq!(out.stats.wildcard_ambiguous, 0);
    let r = report::retention_stats(out.stats.total, out.stats.resolved, out.stats.resolved).unwrap();
    assert_eq!(r.resolved_pct, 39.0);
}

#[test]
fn full_coverage_resolves_everything_even_without_operator_codes() {
    let w = world(4, 30, 8);
    let db = lacclust::resolver::load_cell_db(&synth::export_world_db(&w)[..]).unwrap();
    let opts = TraceOptions {
        strip_operator: true,
        ..TraceOptions::default()
    };
    let cells = ingest::extract_unique_cells(&synth::generate_trace(&w, 500, 1, &opts));
    assert_eq!(db.resolve_all(&cells, MatchPolicy::AllowWildcard).stats.unresolved, 0);
    assert_eq!(db.resolve_all(&cells, MatchPolicy::ExactOnly).stats.resolved, 0);
}

#[test]
fn fourteen_areas_sum_to_680() {
    let w = world(14, 50, 3);
    let cells: Vec<_> = common::world_cells(&w).into_iter().take(680).collect();
    let groups = group_by_lac(&cells);
    assert_eq!(groups.len(), 14);
    assert_eq!(groups.iter().map(|g| g.len()).sum::<usize>(), 680);
    assert!(groups.windows(2).all(|p| p[0].lac() < p[1].lac()));
}

#[test]
fn separation_fixture_end_to_end() {
    let w = common::separation_world(21);
    assert_eq!(w.outlier_count(), 28);
    let result = cluster::clean_dataset(&common::world_cells(&w), &ClusterParams::default()).unwrap();
    assert_eq!(result.stats.retained, 280);
    assert_eq!(result.stats.outliers, 28);
    assert!(result
        .lacs
        .iter()
        .all(|l| l.status == LacStatus::Ok && l.representative.len() == 20));

    let truth: HashSet<_> = w
        .cells()
        .filter(|c| c.label == Label::Outlier)
        .map(|c| c.cell)
        .collect();
    let flagged: HashSet<_> = result.outliers().map(|c| c.cell).collect();
    assert_eq!(flagged, truth);
    let score = synth::score_detection(&result, &w).unwrap();
    assert_eq!((score.precision, score.recall), (1.0, 1.0));

    let geojson: serde_json::Value = serde_json::from_slice(&report::export_geojson(&result)).unwrap();
    assert_eq!(report::validate_geojson(&geojson), Ok(308));
    let roles: Vec<&str> = geojson["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["properties"]["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles.iter().filter(|r| **r == "representative").count(), 280);
    assert_eq!(roles.iter().filter(|r| **r == "outlier").count(), 28);
    assert_eq!(
        report::count_markers(&report::render_result_scatter(&result, "after")),
        308
    );
}

#[test]
fn injected_outliers_clear_the_cutoff_from_every_clean_cell() {
    let w = common::separation_world(4);
    for lac in &w.lacs {
        for o in lac.cells.iter().filter(|c| c.label == Label::Outlier) {
            for c in lac.cells.iter().filter(|c| c.label == Label::Clean) {
                assert!(lacclust::geo::equirect_m(&o.stored_point, &c.stored_point) > cluster::DEFAULT_CUTOFF_M);
            }
        }
    }
}

#[test]
fn min_size_boundary() {
    let nine = cluster::clean_dataset(&common::threshold_group(9, 7), &ClusterParams::default()).unwrap();
    assert_eq!(nine.lacs[0].status, LacStatus::InsufficientDensity);
    assert_eq!(nine.stats.insufficient, 12);
    assert!(nine.cells().all(|(_, r)| r == Role::Insufficient));

    let ten = cluster::clean_dataset(&common::threshold_group(10, 7), &ClusterParams::default()).unwrap();
    assert_eq!(ten.lacs[0].status, LacStatus::Ok);
    assert_eq!((ten.stats.retained, ten.stats.outliers), (10, 3));
}

#[test]
fn dense_secondary_cluster_is_discarded_but_listed() {
    let mut cells = common::threshold_group(12, 9);
    let far = lacclust::GeoPoint::new(43.5, -71.09).unwrap();
    for (i, (e, n)) in synth::hex_spiral(10).into_iter().enumerate() {
        cells.push(common::resolved(
            9,
            500 + i as u32,
            lacclust::geo::offset_m(&far, e * 300.0, n * 300.0),
        ));
    }
    let result = cluster::clean_dataset(&cells, &ClusterParams::default()).unwrap();
    let lac = &result.lacs[0];
    assert_eq!(lac.representative.len(), 12);
    assert_eq!(lac.discarded_dense.len(), 1);
    assert_eq!(lac.discarded_dense[0].len(), 10);
    assert_eq!(lac.outliers.len(), 13);
}
