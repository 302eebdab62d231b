//! Density peak clustering on planar points.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_DC_QUANTILE: f64 = 0.02;

/// Beyond this many pairs the cutoff quantile is estimated from a seeded sample.
const MAX_QUANTILE_PAIRS: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DpcClustering {
    /// Index of the centre point of each cluster, in decreasing density order.
    pub centers: Vec<usize>,
    /// Cluster of every input point.
    pub assignment: Vec<usize>,
    /// Member mean of every cluster.
    pub centroids: Vec<(f64, f64)>,
    pub member_counts: Vec<usize>,
    pub cutoff: f64,
    pub density: Vec<f64>,
    pub separation: Vec<f64>,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn distinct_count(points: &[(f64, f64)]) -> usize {
    let mut keys: Vec<(u64, u64)> = points.iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn cutoff_distance(points: &[(f64, f64)], quantile: f64) -> f64 {
    let n = points.len();
    let pairs = n * (n - 1) / 2;
    let mut d: Vec<f64> = if pairs <= MAX_QUANTILE_PAIRS {
        let mut d = Vec::with_capacity(pairs);
        for i in 0..n {
            for j in i + 1..n {
                d.push(dist(points[i], points[j]));
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..MAX_QUANTILE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                dist(points[i], points[j])
            })
            .collect()
    };
    let k = ((quantile * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
    let (_, kth, _) = d.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    let dc = *kth;
    if dc > 0.0 {
        return dc;
    }
    d.into_iter().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min)
}

/// Clusters `points` into `num_stations` groups around density peaks.
///
/// Density uses a Gaussian kernel whose cutoff is the `dc_quantile` quantile
/// of pairwise distances. The densest point is always a centre; the remaining
/// centres maximise density times separation. Ties are ordered by index.
pub fn dpc_cluster(points: &[(f64, f64)], num_stations: usize, dc_quantile: f64) -> Result<DpcClustering> {
    let n = points.len();
    if num_stations == 0 {
        return invalid("num_stations must be positive");
    }
    if !(dc_quantile > 0.0 && dc_quantile < 1.0) {
        return invalid(format!("dc_quantile must lie in (0, 1), got {dc_quantile}"));
    }
    if n < num_stations {
        return invalid(format!("{n} points cannot form {num_stations} stations"));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return invalid("points must be finite");
    }
    let distinct = distinct_count(points);
    if distinct < num_stations {
        return invalid(format!("only {distinct} distinct locations for {num_stations} stations"));
    }
    if n == 1 {
        return Ok(DpcClustering {
            centers: vec![0],
            assignment: vec![0],
            centroids: vec![points[0]],
            member_counts: vec![1],
            cutoff: 0.0,
            density: vec![0.0],
            separation: vec![0.0],
        });
    }

    let dc = cutoff_distance(points, dc_quantile);
    if !dc.is_finite() {
        return Err(Error::Numerical("no positive pairwise distance for the cutoff".into()));
    }
    let mut density = vec![0.0; n];
    let mut max_pair = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(points[i], points[j]);
            max_pair = max_pair.max(d);
            let w = (-(d / dc).powi(2)).exp();
            density[i] += w;
            density[j] += w;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density[b].total_cmp(&density[a]).then(a.cmp(&b)));

    let mut separation = vec![0.0; n];
    let mut parent = vec![usize::MAX; n];
    separation[order[0]] = max_pair;
    for r in 1..n {
        let i = order[r];
        let (mut best, mut arg) = (f64::INFINITY, order[0]);
        for &j in &order[..r] {
            let d = dist(points[i], points[j]);
            if d < best {
                best = d;
                arg = j;
            }
        }
        separation[i] = best;
        parent[i] = arg;
    }

    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut by_gamma: Vec<usize> = order[1..].to_vec();
    by_gamma.sort_by(|&a, &b| {
        let (ga, gb) = (density[a] * separation[a], density[b] * separation[b]);
        gb.partial_cmp(&ga).unwrap_or(Ordering::Equal).then(rank[a].cmp(&rank[b]))
    });
    let mut is_center = vec![false; n];
    is_center[order[0]] = true;
    for &i in by_gamma.iter().take(num_stations - 1) {
        is_center[i] = true;
    }

    let mut centers = Vec::with_capacity(num_stations);
    let mut assignment = vec![usize::MAX; n];
    for &i in &order {
        if is_center[i] {
            assignment[i] = centers.len();
            centers.push(i);
        } else {
            assignment[i] = assignment[parent[i]];
        }
    }

    let mut sums = vec![(0.0, 0.0); num_stations];
    let mut member_counts = vec![0usize; num_stations];
    for (p, &c) in points.iter().zip(&assignment) {
        sums[c].0 += p.0;
        sums[c].1 += p.1;
        member_counts[c] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&member_counts)
        .map(|(s, &m)| (s.0 / m as f64, s.1 / m as f64))
        .collect();
    Ok(DpcClustering { centers, assignment, centroids, member_counts, cutoff: dc, density, separation })
}
