#![allow(dead_code)]

use lacclust::cluster::Merge;
use lacclust::geo::{self, DistanceMetric, GeoPoint};
use lacclust::resolver::{MatchKind, ResolvedCell};
use lacclust::synth::{self, OutlierSpec, SyntheticWorld, TopologyConfig};
use lacclust::{CellIdentity, Linkage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force reference agglomerator: every step recomputes every
/// inter-cluster distance from the raw points. Index order is the canonical
/// order; leaves are ids `0..n` and merge `k` creates id `n + k`.
pub fn naive_agglomerate(points: &[GeoPoint], linkage: Linkage, metric: DistanceMetric, cutoff: f64) -> Vec<Merge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    let d = |i: usize, j: usize| geo::distance(&points[i], &points[j], metric);

    while clusters.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                let (ma, mb) = (&clusters[a].1, &clusters[b].1);
                if ma[0] >= mb[0] {
                    continue;
                }
                let pairs = || ma.iter().flat_map(|&i| mb.iter().map(move |&j| (i, j)));
                let dist = match linkage {
                    Linkage::Single => pairs().map(|(i, j)| d(i, j)).fold(f64::INFINITY, f64::min),
                    Linkage::Complete => pairs().map(|(i, j)| d(i, j)).fold(0.0, f64::max),
                    Linkage::Average => pairs().map(|(i, j)| d(i, j)).sum::<f64>() / (ma.len() * mb.len()) as f64,
                    Linkage::Centroid => {
                        let ca = geo::centroid(ma.iter().map(|&i| &points[i])).unwrap();
                        let cb = geo::centroid(mb.iter().map(|&i| &points[i])).unwrap();
                        geo::distance(&ca, &cb, metric)
                    }
                };
                let key = (ma[0], mb[0]);
                let better = match best {
                    None => true,
                    Some((bd, bk, _, _)) => dist.total_cmp(&bd).then(key.cmp(&bk)).is_lt(),
                };
                if better {
                    best = Some((dist, key, a, b));
                }
            }
        }
        let (dist, _, a, b) = best.unwrap();
        if dist > cutoff {
            break;
        }
        let id = n + merges.len();
        merges.push(Merge {
            left: clusters[a].0,
            right: clusters[b].0,
            distance: dist,
            id,
        });
        let mut members = clusters[a].1.clone();
        members.extend(&clusters[b].1);
        members.sort_unstable();
        let (hi, lo) = (a.max(b), a.min(b));
        clusters.remove(hi);
        clusters.remove(lo);
        clusters.push((id, members));
    }
    merges
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Same pairs, same ids, distances equal to `rel`.
pub fn same_merges(fast: &[Merge], slow: &[Merge], rel: f64) -> Result<(), String> {
    if fast.len() != slow.len() {
        return Err(format!("{} merges vs {} in the oracle", fast.len(), slow.len()));
    }
    for (k, (f, s)) in fast.iter().zip(slow).enumerate() {
        if (f.left, f.right, f.id) != (s.left, s.right, s.id) || !close(f.distance, s.distance, rel) {
            return Err(format!("merge {k}: {f:?} vs oracle {s:?}"));
        }
    }
    Ok(())
}

/// `n` points scattered up to `spread_m` around a random center with
/// |lat| < 60.
pub fn random_group(rng: &mut ChaCha8Rng, n: usize, spread_m: f64) -> Vec<GeoPoint> {
    let center = GeoPoint::new(rng.random_range(-59.0..59.0), rng.random_range(-180.0..180.0)).unwrap();
    (0..n)
        .map(|_| {
            geo::offset_m(
                &center,
                rng.random_range(-spread_m..spread_m),
                rng.random_range(-spread_m..spread_m),
            )
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn resolved(lac: u16, cell_id: u32, point: GeoPoint) -> ResolvedCell {
    ResolvedCell {
        cell: CellIdentity::new(Some(310), Some(26), lac, cell_id).unwrap(),
        point,
        match_kind: MatchKind::Exact,
    }
}

/// Every world cell at its stored (published) coordinate.
pub fn world_cells(world: &SyntheticWorld) -> Vec<ResolvedCell> {
    world
        .cells()
        .map(|c| ResolvedCell {
            cell: c.cell,
            point: c.stored_point,
            match_kind: MatchKind::Exact,
        })
        .collect()
}

/// 14 areas of 20 clean cells plus 2 cells displaced 50-60 km each.
pub fn separation_world(seed: u64) -> SyntheticWorld {
    let topo = TopologyConfig {
        lac_count: 14,
        cells_per_lac: 22,
        ..TopologyConfig::default()
    };
    let world = synth::generate_topology(&topo, seed).unwrap();
    let spec = OutlierSpec {
        rate: 2.0 / 22.0,
        displacement_min_m: 50_000.0,
        displacement_max_m: 60_000.0,
    };
    synth::inject_outliers(&world, &spec, seed + 1).unwrap()
}

/// One area whose densest group has `dense` cells, plus a few far-away
/// singletons.
pub fn threshold_group(dense: usize, lac: u16) -> Vec<ResolvedCell> {
    let center = GeoPoint::new(42.36, -71.09).unwrap();
    let mut cells: Vec<ResolvedCell> = synth::hex_spiral(dense)
        .into_iter()
        .enumerate()
        .map(|(i, (east, north))| resolved(lac, i as u32 + 1, geo::offset_m(&center, east * 300.0, north * 300.0)))
        .collect();
    for (k, bearing) in [0.0, 120.0, 240.0].into_iter().enumerate() {
        cells.push(resolved(lac, 100 + k as u32, center.destination(bearing, 80_000.0)));
    }
    cells
}
