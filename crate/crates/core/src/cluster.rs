//! Per-LAC agglomerative clustering and representative selection.
//!
//! Each location area is clustered independently: build the pairwise
//! proximity matrix over its cells, repeatedly merge the closest pair of
//! clusters while their linkage distance stays within the cutoff, cut the
//! result into flat clusters, and keep the largest flat cluster (if it has at
//! least `min_size` cells) as the area's representative. Every other cell in
//! the area is an outlier.
//!
//! Cluster ids follow the usual dendrogram convention: leaves are `0..n` in
//! canonical member order, and the `i`-th merge creates id `n + i`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geo::{self, DistanceMetric, GeoError, GeoPoint};
use crate::ingest::CellIdentity;
use crate::resolver::ResolvedCell;

/// Largest extent of a rural location area, in meters.
pub const DEFAULT_CUTOFF_M: f64 = 35_000.0;
pub const DEFAULT_MIN_SIZE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("empty group")]
    EmptyGroup,
    #[error("dendrogram has {dendrogram} leaves but the group has {group} members")]
    MismatchedInput { dendrogram: usize, group: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("lac {lac}: {source}")]
    Geometry { lac: u16, source: GeoError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    /// Distance between cluster centroids, recomputed after every merge.
    #[default]
    Centroid,
    Single,
    Complete,
    Average,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Centroid, Linkage::Single, Linkage::Complete, Linkage::Average];

    pub fn name(&self) -> &'static str {
        match self {
            Linkage::Centroid => "centroid",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub linkage: Linkage,
    /// In the metric's units. May be `f64::INFINITY`.
    pub cutoff: f64,
    pub min_size: usize,
    pub metric: DistanceMetric,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            linkage: Linkage::Centroid,
            cutoff: DEFAULT_CUTOFF_M,
            min_size: DEFAULT_MIN_SIZE,
            metric: DistanceMetric::EquirectM,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.cutoff.is_nan() || self.cutoff <= 0.0 {
            return Err(ClusterError::InvalidParams(format!(
                "cutoff must be > 0, got {}",
                self.cutoff
            )));
        }
        if self.min_size == 0 {
            return Err(ClusterError::InvalidParams("min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// The resolved cells of one location area, in canonical identity order.
#[derive(Debug, Clone, PartialEq)]
pub struct LacGroup {
    lac: u16,
    members: Vec<ResolvedCell>,
}

impl LacGroup {
    /// Panics if any member belongs to a different LAC.
    pub fn new(lac: u16, mut members: Vec<ResolvedCell>) -> Self {
        assert!(
            members.iter().all(|m| m.cell.lac == lac),
            "LacGroup members must share lac {lac}"
        );
        members.sort_by_key(|c| c.cell);
        Self { lac, members }
    }

    pub fn lac(&self) -> u16 {
        self.lac
    }

    pub fn members(&self) -> &[ResolvedCell] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.members.iter().map(|m| m.point).collect()
    }
}

pub fn group_by_lac(cells: &[ResolvedCell]) -> Vec<LacGroup> {
    let mut by_lac: BTreeMap<u16, Vec<ResolvedCell>> = BTreeMap::new();
    for c in cells {
        by_lac.entry(c.cell.lac).or_default().push(*c);
    }
    by_lac
        .into_iter()
        .map(|(lac, members)| LacGroup::new(lac, members))
        .collect()
}

/// Dense symmetric distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    n: usize,
    d: Vec<f64>,
}

impl ProximityMatrix {
    pub fn from_points(points: &[GeoPoint], metric: DistanceMetric, exec: Execution) -> Self {
        let n = points.len();
        // upper triangle per row, then mirrored
        let rows: Vec<Vec<f64>> = exec.map_range(n, |i| {
            points[i + 1..]
                .iter()
                .map(|q| geo::distance(&points[i], q, metric))
                .collect()
        });
        let mut d = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }
}

pub fn proximity_matrix(group: &LacGroup, metric: DistanceMetric) -> Result<ProximityMatrix, ClusterError> {
    if group.is_empty() {
        return Err(ClusterError::EmptyGroup);
    }
    Ok(ProximityMatrix::from_points(
        &group.points(),
        metric,
        Execution::Sequential,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// The input cluster whose smallest member index is lower.
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Leaf indices of each flat cluster, each sorted, ordered by smallest
    /// member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut members: Vec<Option<Vec<usize>>> = (0..self.leaves).map(|i| Some(vec![i])).collect();
        for m in &self.merges {
            let mut a = members[m.left].take().expect("cluster merged twice");
            let b = members[m.right].take().expect("cluster merged twice");
            a.extend(b);
            a.sort_unstable();
            debug_assert_eq!(members.len(), m.id);
            members.push(Some(a));
        }
        let mut out: Vec<Vec<usize>> = members.into_iter().flatten().collect();
        out.sort_unstable_by_key(|c| c[0]);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    /// Smallest member index of each side, `lo < hi`.
    key: (usize, usize),
    ids: (usize, usize),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // reversed: BinaryHeap is a max-heap and we want the closest pair
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .distance
            .total_cmp(&self.distance)
            .then_with(|| other.key.cmp(&self.key))
    }
}

#[derive(Debug)]
struct Active {
    id: usize,
    members: Vec<usize>,
    centroid: GeoPoint,
}

/// Agglomerate raw points, treating index order as canonical order.
pub fn agglomerate_points(
    points: &[GeoPoint],
    linkage: Linkage,
    metric: DistanceMetric,
    cutoff: f64,
) -> Result<Dendrogram, GeoError> {
    let matrix = ProximityMatrix::from_points(points, metric, Execution::Sequential);
    agglomerate_matrix(points, &matrix, linkage, metric, cutoff)
}

/// Closest-pair merging driven by a lazy-deletion heap: `O(n^2 log n)` for
/// every linkage. Cluster state lives in "slots"; a merge reuses the slot of
/// the left input.
fn agglomerate_matrix(
    points: &[GeoPoint],
    matrix: &ProximityMatrix,
    linkage: Linkage,
    metric: DistanceMetric,
    cutoff: f64,
) -> Result<Dendrogram, GeoError> {
    let n = points.len();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return Ok(Dendrogram { leaves: n, merges });
    }

    // single/complete: the linkage distance; average: the sum of pair
    // distances; centroid: unused, distances come from the centroids.
    let mut value = matrix.d.clone();
    let mut slots: Vec<Option<Active>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Some(Active {
                id: i,
                members: vec![i],
                centroid: *p,
            })
        })
        .collect();
    let mut slot_of_id: Vec<Option<usize>> = (0..n).map(Some).collect();

    let mut heap = BinaryHeap::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            heap.push(Candidate {
                distance: matrix.get(i, j),
                key: (i, j),
                ids: (i, j),
            });
        }
    }

    let mut remaining = n;
    while remaining > 1 {
        let Some(best) = heap.pop() else { break };
        if best.distance > cutoff {
            break;
        }
        let (Some(sa), Some(sb)) = (slot_of_id[best.ids.0], slot_of_id[best.ids.1]) else {
            continue;
        };

        let b = slots[sb].take().expect("live slot");
        let a = slots[sa].as_mut().expect("live slot");
        let new_id = n + merges.len();
        merges.push(Merge {
            left: a.id,
            right: b.id,
            distance: best.distance,
            id: new_id,
        });
        let (na, nb) = (a.members.len() as f64, b.members.len() as f64);
        slot_of_id[a.id] = None;
        slot_of_id[b.id] = None;
        slot_of_id.push(Some(sa));
        a.id = new_id;
        a.members = merge_sorted(&a.members, &b.members);
        if linkage == Linkage::Centroid {
            a.centroid = geo::centroid(a.members.iter().map(|&i| &points[i]))?;
        }
        remaining -= 1;

        let a = slots[sa].as_ref().expect("live slot");
        let n_new = na + nb;
        for (sk, other) in slots.iter().enumerate() {
            let Some(other) = other else { continue };
            if sk == sa {
                continue;
            }
            let nk = other.members.len() as f64;
            let (va, vb) = (value[sa * n + sk], value[sb * n + sk]);
            let (stored, distance) = match linkage {
                Linkage::Single => {
                    let v = va.min(vb);
                    (v, v)
                }
                Linkage::Complete => {
                    let v = va.max(vb);
                    (v, v)
                }
                Linkage::Average => {
                    let v = va + vb;
                    (v, v / (n_new * nk))
                }
                Linkage::Centroid => {
                    let d = geo::distance(&a.centroid, &other.centroid, metric);
                    (d, d)
                }
            };
            value[sa * n + sk] = stored;
            value[sk * n + sa] = stored;

            let (lo, hi) = if a.members[0] < other.members[0] {
                (a, other)
            } else {
                (other, a)
            };
            heap.push(Candidate {
                distance,
                key: (lo.members[0], hi.members[0]),
                ids: (lo.id, hi.id),
            });
        }
    }

    Ok(Dendrogram { leaves: n, merges })
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

pub fn agglomerate(group: &LacGroup, params: &ClusterParams) -> Result<Dendrogram, ClusterError> {
    agglomerate_with(group, params, Execution::Sequential)
}

fn agglomerate_with(group: &LacGroup, params: &ClusterParams, exec: Execution) -> Result<Dendrogram, ClusterError> {
    params.validate()?;
    if group.is_empty() {
        return Err(ClusterError::EmptyGroup);
    }
    let points = group.points();
    let matrix = ProximityMatrix::from_points(&points, params.metric, exec);
    agglomerate_matrix(&points, &matrix, params.linkage, params.metric, params.cutoff)
        .map_err(|source| ClusterError::Geometry { lac: group.lac, source })
}

pub fn flat_clusters(dend: &Dendrogram, group: &LacGroup) -> Result<Vec<Vec<ResolvedCell>>, ClusterError> {
    if dend.leaves != group.len() {
        return Err(ClusterError::MismatchedInput {
            dendrogram: dend.leaves,
            group: group.len(),
        });
    }
    Ok(dend
        .components()
        .into_iter()
        .map(|c| c.into_iter().map(|i| group.members[i]).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LacStatus {
    Ok,
    InsufficientDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Representative,
    Outlier,
    Insufficient,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Representative => "representative",
            Role::Outlier => "outlier",
            Role::Insufficient => "insufficient",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "representative" => Some(Role::Representative),
            "outlier" => Some(Role::Outlier),
            "insufficient" => Some(Role::Insufficient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LacCleanResult {
    pub lac: u16,
    pub status: LacStatus,
    pub representative: Vec<ResolvedCell>,
    pub outliers: Vec<ResolvedCell>,
    /// Members of an area with no flat cluster of `min_size` cells.
    pub insufficient: Vec<ResolvedCell>,
    /// Non-representative clusters that nonetheless reached `min_size`.
    /// These are still counted as outliers.
    pub discarded_dense: Vec<Vec<CellIdentity>>,
    /// Flat cluster sizes, largest first.
    pub cluster_sizes: Vec<usize>,
}

impl LacCleanResult {
    pub fn members(&self) -> impl Iterator<Item = (&ResolvedCell, Role)> {
        self.representative
            .iter()
            .map(|c| (c, Role::Representative))
            .chain(self.outliers.iter().map(|c| (c, Role::Outlier)))
            .chain(self.insufficient.iter().map(|c| (c, Role::Insufficient)))
    }
}

fn mean_centroid_distance(cluster: &[ResolvedCell], metric: DistanceMetric) -> Result<f64, GeoError> {
    let c = geo::centroid(cluster.iter().map(|m| &m.point))?;
    let sum: f64 = cluster.iter().map(|m| geo::distance(&c, &m.point, metric)).sum();
    Ok(sum / cluster.len() as f64)
}

/// Pick the representative flat cluster of one area. Ties on size go to the
/// tighter cluster (mean member-to-centroid distance), then to the cluster
/// holding the smallest cell identity.
pub fn select_representative(
    lac: u16,
    clusters: Vec<Vec<ResolvedCell>>,
    min_size: usize,
    metric: DistanceMetric,
) -> Result<LacCleanResult, ClusterError> {
    let geometry = |source| ClusterError::Geometry { lac, source };
    let mut cluster_sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    cluster_sizes.sort_unstable_by(|a, b| b.cmp(a));

    let mut ranked = Vec::new();
    for (i, c) in clusters.iter().enumerate() {
        if c.len() >= min_size {
            let spread = mean_centroid_distance(c, metric).map_err(geometry)?;
            let smallest = c.iter().map(|m| m.cell).min().expect("non-empty cluster");
            ranked.push((i, c.len(), spread, smallest));
        }
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));

    let sorted_members = |v: &mut Vec<ResolvedCell>| v.sort_by_key(|c| c.cell);
    let Some(&(winner, ..)) = ranked.first() else {
        let mut insufficient: Vec<ResolvedCell> = clusters.into_iter().flatten().collect();
        sorted_members(&mut insufficient);
        return Ok(LacCleanResult {
            lac,
            status: LacStatus::InsufficientDensity,
            representative: Vec::new(),
            outliers: Vec::new(),
            insufficient,
            discarded_dense: Vec::new(),
            cluster_sizes,
        });
    };

    let discarded_dense = ranked[1..]
        .iter()
        .map(|&(i, ..)| {
            let mut ids: Vec<CellIdentity> = clusters[i].iter().map(|m| m.cell).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    let mut representative = Vec::new();
    let mut outliers = Vec::new();
    for (i, c) in clusters.into_iter().enumerate() {
        if i == winner {
            representative = c;
        } else {
            outliers.extend(c);
        }
    }
    sorted_members(&mut representative);
    sorted_members(&mut outliers);
    Ok(LacCleanResult {
        lac,
        status: LacStatus::Ok,
        representative,
        outliers,
        insufficient: Vec::new(),
        discarded_dense,
        cluster_sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanStats {
    pub input_cells: usize,
    pub lacs: usize,
    pub lacs_ok: usize,
    pub lacs_insufficient: usize,
    pub retained: usize,
    pub outliers: usize,
    pub insufficient: usize,
    pub discarded_dense_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanResult {
    pub params: ClusterParams,
    /// One entry per area, ascending by lac.
    pub lacs: Vec<LacCleanResult>,
    pub stats: CleanStats,
}

impl CleanResult {
    pub fn retained(&self) -> impl Iterator<Item = &ResolvedCell> {
        self.lacs.iter().flat_map(|l| l.representative.iter())
    }

    pub fn outliers(&self) -> impl Iterator<Item = &ResolvedCell> {
        self.lacs.iter().flat_map(|l| l.outliers.iter())
    }

    pub fn insufficient(&self) -> impl Iterator<Item = &ResolvedCell> {
        self.lacs.iter().flat_map(|l| l.insufficient.iter())
    }

    /// Every cell with its role, grouped by area in lac order.
    pub fn cells(&self) -> impl Iterator<Item = (&ResolvedCell, Role)> {
        self.lacs.iter().flat_map(|l| l.members())
    }
}

pub fn clean_group(group: &LacGroup, params: &ClusterParams, exec: Execution) -> Result<LacCleanResult, ClusterError> {
    let dend = agglomerate_with(group, params, exec)?;
    let clusters = flat_clusters(&dend, group)?;
    select_representative(group.lac, clusters, params.min_size, params.metric)
}

pub fn clean_dataset(cells: &[ResolvedCell], params: &ClusterParams) -> Result<CleanResult, ClusterError> {
    clean_dataset_with(cells, params, Execution::default())
}

/// Clean every area, optionally in parallel. The output does not depend on
/// `exec`.
pub fn clean_dataset_with(
    cells: &[ResolvedCell],
    params: &ClusterParams,
    exec: Execution,
) -> Result<CleanResult, ClusterError> {
    params.validate()?;
    let groups = group_by_lac(cells);
    let lacs = exec
        .map(&groups, |g| clean_group(g, params, exec))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut stats = CleanStats {
        input_cells: cells.len(),
        lacs: lacs.len(),
        ..CleanStats::default()
    };
    for l in &lacs {
        match l.status {
            LacStatus::Ok => stats.lacs_ok += 1,
            LacStatus::InsufficientDensity => stats.lacs_insufficient += 1,
        }
        stats.retained += l.representative.len();
        stats.outliers += l.outliers.len();
        stats.insufficient += l.insufficient.len();
        stats.discarded_dense_clusters += l.discarded_dense.len();
    }
    Ok(CleanResult {
        params: *params,
        lacs,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolver::MatchKind;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn resolved(lac: u16, cell_id: u32, point: GeoPoint) -> ResolvedCell {
        ResolvedCell {
            cell: CellIdentity::new(Some(310), Some(26), lac, cell_id).unwrap(),
            point,
            match_kind: MatchKind::Exact,
        }
    }

    /// Points `north_m` meters up the meridian from (42, -71).
    fn meridian(lac: u16, offsets_m: &[f64]) -> LacGroup {
        let origin = p(42.0, -71.0);
        let members = offsets_m
            .iter()
            .enumerate()
            .map(|(i, &m)| resolved(lac, i as u32 + 1, geo::offset_m(&origin, 0.0, m)))
            .collect();
        LacGroup::new(lac, members)
    }

    #[test]
    fn grouping() {
        assert!(group_by_lac(&[]).is_empty());
        let cells = [
            resolved(9, 1, p(0.0, 0.0)),
            resolved(5, 2, p(0.0, 0.0)),
            resolved(5, 1, p(0.0, 0.0)),
        ];
        let groups = group_by_lac(&cells);
        assert_eq!(
            groups.iter().map(|g| (g.lac(), g.len())).collect::<Vec<_>>(),
            [(5, 2), (9, 1)]
        );
        assert_eq!(groups[0].members()[0].cell.cell_id, 1);
    }

    #[test]
    fn proximity_of_coincident_points() {
        let g = LacGroup::new(1, vec![resolved(1, 1, p(1.0, 1.0)), resolved(1, 2, p(1.0, 1.0))]);
        let m = proximity_matrix(&g, DistanceMetric::EquirectM).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.0]);
        assert_eq!(
            proximity_matrix(&LacGroup::new(1, vec![]), DistanceMetric::EquirectM),
            Err(ClusterError::EmptyGroup)
        );
    }

    #[test]
    fn proximity_along_meridian() {
        let g = meridian(1, &[0.0, 1000.0, 3000.0]);
        let m = proximity_matrix(&g, DistanceMetric::EquirectM).unwrap();
        assert!((m.get(0, 1) - 1000.0).abs() < 1.0);
        assert!((m.get(0, 2) - 3000.0).abs() < 1.0);
        assert!((m.get(1, 2) - 2000.0).abs() < 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let h = proximity_matrix(&g, DistanceMetric::HaversineM).unwrap();
        assert!((h.get(0, 2) - m.get(0, 2)).abs() < 0.01);
    }

    #[test]
    fn single_member_has_no_merges() {
        let g = meridian(1, &[0.0]);
        let d = agglomerate(&g, &ClusterParams::default()).unwrap();
        assert!(d.merges().is_empty());
        assert_eq!(flat_clusters(&d, &g).unwrap().len(), 1);
    }

    #[test]
    fn cutoff_halts_centroid_merging() {
        let g = meridian(1, &[0.0, 1000.0, 10_000.0]);
        let params = ClusterParams {
            cutoff: 5000.0,
            ..ClusterParams::default()
        };
        let d = agglomerate(&g, &params).unwrap();
        assert_eq!(d.merges().len(), 1);
        let m = d.merges()[0];
        assert_eq!((m.left, m.right, m.id), (0, 1, 3));
        assert!((m.distance - 1000.0).abs() < 1.0);
        let sizes: Vec<usize> = flat_clusters(&d, &g).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [2, 1]);
    }

    #[test]
    fn complete_merge_gives_one_cluster() {
        let g = meridian(1, &[0.0, 100.0, 250.0, 900.0]);
        for linkage in Linkage::ALL {
            let params = ClusterParams {
                linkage,
                cutoff: f64::INFINITY,
                ..ClusterParams::default()
            };
            let d = agglomerate(&g, &params).unwrap();
            assert_eq!(d.merges().len(), 3);
            assert_eq!(flat_clusters(&d, &g).unwrap(), vec![g.members().to_vec()]);
        }
    }

    #[test]
    fn zero_merges_give_singletons() {
        let g = meridian(1, &[0.0, 10_000.0, 20_000.0]);
        let params = ClusterParams {
            cutoff: 1.0,
            ..ClusterParams::default()
        };
        let d = agglomerate(&g, &params).unwrap();
        assert_eq!(flat_clusters(&d, &g).unwrap().len(), 3);
    }

    #[test]
    fn mismatched_dendrogram() {
        let g = meridian(1, &[0.0, 1.0]);
        let d = agglomerate(&meridian(1, &[0.0]), &ClusterParams::default()).unwrap();
        assert_eq!(
            flat_clusters(&d, &g),
            Err(ClusterError::MismatchedInput {
                dendrogram: 1,
                group: 2
            })
        );
    }

    #[test]
    fn ties_break_on_smallest_members() {
        // four points on a square: every side is a tie
        let g = LacGroup::new(
            1,
            vec![
                resolved(1, 1, p(0.0, 0.0)),
                resolved(1, 2, p(0.0, 0.001)),
                resolved(1, 3, p(0.001, 0.0)),
                resolved(1, 4, p(0.001, 0.001)),
            ],
        );
        let params = ClusterParams {
            linkage: Linkage::Single,
            metric: DistanceMetric::DegreesEuclid,
            cutoff: 1.0,
            ..ClusterParams::default()
        };
        let d = agglomerate(&g, &params).unwrap();
        let pairs: Vec<(usize, usize)> = d.merges().iter().map(|m| (m.left, m.right)).collect();
        // (0,1) and (0,2) tie at 0.001; key (0,1) wins. Then {0,1}-2 keyed (0,2)
        // beats 3 vs anything.
        assert_eq!(pairs, [(0, 1), (4, 2), (5, 3)]);
    }

    #[test]
    fn invalid_params() {
        let g = meridian(1, &[0.0]);
        for params in [
            ClusterParams {
                cutoff: 0.0,
                ..ClusterParams::default()
            },
            ClusterParams {
                cutoff: f64::NAN,
                ..ClusterParams::default()
            },
            ClusterParams {
                min_size: 0,
                ..ClusterParams::default()
            },
        ] {
            assert!(matches!(agglomerate(&g, &params), Err(ClusterError::InvalidParams(_))));
        }
    }

    fn cluster_of(lac: u16, first_id: u32, centre: GeoPoint, n: usize, radius_m: f64) -> Vec<ResolvedCell> {
        (0..n)
            .map(|i| {
                let bearing = 360.0 * i as f64 / n as f64;
                resolved(lac, first_id + i as u32, centre.destination(bearing, radius_m))
            })
            .collect()
    }

    #[test]
    fn representative_is_largest_cluster() {
        let a = cluster_of(7, 100, p(42.0, -71.0), 12, 300.0);
        let b = cluster_of(7, 1, p(42.5, -71.0), 3, 300.0);
        let r = select_representative(7, vec![b, a.clone()], 10, DistanceMetric::EquirectM).unwrap();
        assert_eq!(r.status, LacStatus::Ok);
        assert_eq!(r.representative.len(), 12);
        assert_eq!(r.outliers.len(), 3);
        assert_eq!(r.cluster_sizes, [12, 3]);
        assert!(r.discarded_dense.is_empty());
    }

    #[test]
    fn insufficient_density() {
        let a = cluster_of(7, 100, p(42.0, -71.0), 4, 300.0);
        let b = cluster_of(7, 1, p(42.5, -71.0), 3, 300.0);
        let r = select_representative(7, vec![a, b], 10, DistanceMetric::EquirectM).unwrap();
        assert_eq!(r.status, LacStatus::InsufficientDensity);
        assert!(r.representative.is_empty() && r.outliers.is_empty());
        assert_eq!(r.insufficient.len(), 7);
    }

    #[test]
    fn size_tie_goes_to_tighter_cluster() {
        let loose = cluster_of(7, 1, p(42.0, -71.0), 10, 900.0);
        let tight = cluster_of(7, 100, p(42.5, -71.0), 10, 200.0);
        let r = select_representative(7, vec![loose, tight], 10, DistanceMetric::EquirectM).unwrap();
        assert_eq!(r.representative[0].cell.cell_id, 100);
        assert_eq!(r.discarded_dense.len(), 1);
        assert_eq!(r.outliers.len(), 10);
    }

    #[test]
    fn full_tie_goes_to_smallest_identity() {
        // coincident members: both spreads are exactly zero
        let a: Vec<_> = (0..10).map(|i| resolved(7, 50 + i, p(42.0, -71.0))).collect();
        let b: Vec<_> = (0..10).map(|i| resolved(7, 10 + i, p(43.0, -70.0))).collect();
        let r = select_representative(7, vec![a, b], 10, DistanceMetric::EquirectM).unwrap();
        assert_eq!(r.representative[0].cell.cell_id, 10);
    }

    #[test]
    fn clean_empty_input() {
        let r = clean_dataset(&[], &ClusterParams::default()).unwrap();
        assert!(r.lacs.is_empty());
        assert_eq!(r.stats, CleanStats::default());
    }

    #[test]
    fn clean_separates_displaced_cells() {
        let mut cells = cluster_of(3, 1, p(42.0, -71.0), 20, 800.0);
        cells.push(resolved(3, 500, p(42.0, -71.0).destination(45.0, 50_000.0)));
        cells.push(resolved(3, 501, p(42.0, -71.0).destination(200.0, 55_000.0)));
        for exec in [Execution::Sequential, Execution::Parallel] {
            let r = clean_dataset_with(&cells, &ClusterParams::default(), exec).unwrap();
            assert_eq!(r.stats.retained, 20);
            assert_eq!(r.stats.outliers, 2);
            let ids: Vec<u32> = r.outliers().map(|c| c.cell.cell_id).collect();
            assert_eq!(ids, [500, 501]);
        }
    }
}
