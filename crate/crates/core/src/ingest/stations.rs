use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dpc::dpc_cluster;
use super::records::TripRecord;
use crate::error::{invalid, Error, Result};
use crate::geo::{haversine_km, project_km, unproject_km, LonLat};

pub const DEFAULT_CLUSTER_SAMPLE: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    DockBased,
    Virtual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: usize,
    pub centroid: LonLat,
    pub member_count: usize,
    /// Source dock identifier; `None` for virtual stations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationSet {
    pub kind: StationKind,
    pub stations: Vec<Station>,
}

impl StationSet {
    pub fn new(kind: StationKind, stations: Vec<Station>) -> Result<Self> {
        if stations.is_empty() {
            return invalid("station set is empty");
        }
        for (i, s) in stations.iter().enumerate() {
            if s.id != i {
                return invalid(format!("station ids must be 0..N-1, found {} at position {i}", s.id));
            }
            if kind == StationKind::DockBased && s.key.is_none() {
                return invalid(format!("dock station {i} has no source key"));
            }
        }
        let mut seen: Vec<(u64, u64)> = stations.iter().map(|s| (s.centroid.lon.to_bits(), s.centroid.lat.to_bits())).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return invalid("station centroids must be distinct");
        }
        Ok(Self { kind, stations })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn centroids(&self) -> Vec<LonLat> {
        self.stations.iter().map(|s| s.centroid).collect()
    }

    /// Index of the station whose centroid is closest to `p`; ties go to the lower id.
    pub fn nearest(&self, p: LonLat) -> usize {
        let mut best = (f64::INFINITY, 0);
        for s in &self.stations {
            let d = haversine_km(p, s.centroid);
            if d < best.0 {
                best = (d, s.id);
            }
        }
        best.1
    }

    pub(crate) fn key_index(&self) -> HashMap<&str, usize> {
        self.stations.iter().filter_map(|s| s.key.as_deref().map(|k| (k, s.id))).collect()
    }
}

/// Orders dock keys numerically when they all parse as integers.
fn sort_keys(keys: &mut [String]) {
    if keys.iter().all(|k| k.parse::<i64>().is_ok()) {
        keys.sort_by_key(|k| k.parse::<i64>().unwrap());
    } else {
        keys.sort();
    }
}

/// Collects every dock seen at either trip end. Centroids are the mean of the
/// coordinates reported for that dock and member counts are trip ends.
pub fn dock_stations(records: &[TripRecord]) -> Result<StationSet> {
    let mut acc: BTreeMap<&str, (f64, f64, usize, usize)> = BTreeMap::new();
    for end in records.iter().flat_map(|r| [&r.pickup, &r.dropoff]) {
        let Some(key) = end.station.as_deref() else { continue };
        let e = acc.entry(key).or_default();
        e.3 += 1;
        if let Some(p) = end.location {
            e.0 += p.lon;
            e.1 += p.lat;
            e.2 += 1;
        }
    }
    if acc.is_empty() {
        return Err(Error::Schema("no station ids present in the trip records".into()));
    }
    let mut keys: Vec<String> = acc.keys().map(|k| k.to_string()).collect();
    sort_keys(&mut keys);
    let stations = keys
        .into_iter()
        .enumerate()
        .map(|(id, key)| {
            let (lon, lat, located, ends) = acc[key.as_str()];
            if located == 0 {
                return Err(Error::Schema(format!("dock `{key}` has no coordinates")));
            }
            Ok(Station {
                id,
                centroid: LonLat::new(lon / located as f64, lat / located as f64),
                member_count: ends,
                key: Some(key),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StationSet::new(StationKind::DockBased, stations)
}

/// Keeps the `keep` docks with the most orders (pick-ups plus drop-offs),
/// ties broken by original id. Survivors are re-indexed from zero in their
/// original order, so keeping every dock is the identity.
pub fn select_top_stations(records: &[TripRecord], docks: &StationSet, keep: usize) -> Result<StationSet> {
    if keep == 0 || keep > docks.len() {
        return invalid(format!("cannot keep {keep} of {} docks", docks.len()));
    }
    let index = docks.key_index();
    let mut orders = vec![0usize; docks.len()];
    for end in records.iter().flat_map(|r| [&r.pickup, &r.dropoff]) {
        if let Some(&i) = end.station.as_deref().and_then(|k| index.get(k)) {
            orders[i] += 1;
        }
    }
    let mut ranked: Vec<usize> = (0..docks.len()).collect();
    ranked.sort_by(|&a, &b| orders[b].cmp(&orders[a]).then(a.cmp(&b)));
    ranked.truncate(keep);
    ranked.sort_unstable();
    let stations = ranked
        .into_iter()
        .enumerate()
        .map(|(id, old)| Station { id, member_count: orders[old], ..docks.stations[old].clone() })
        .collect();
    StationSet::new(docks.kind, stations)
}

/// Discovers virtual stations by density peak clustering of pick-up points.
///
/// Clustering runs on a seeded uniform subsample of at most `sample_size`
/// points, projected to planar kilometres around their mean.
pub fn virtual_stations(
    records: &[TripRecord],
    num_stations: usize,
    dc_quantile: f64,
    sample_size: usize,
    seed: u64,
) -> Result<StationSet> {
    let points: Vec<LonLat> = records.iter().filter_map(|r| r.pickup.location).collect();
    if points.is_empty() {
        return Err(Error::Schema("virtual stations need pick-up coordinates".into()));
    }
    let chosen: Vec<LonLat> = if points.len() > sample_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, points.len(), sample_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points
    };
    let n = chosen.len() as f64;
    let origin = LonLat::new(
        chosen.iter().map(|p| p.lon).sum::<f64>() / n,
        chosen.iter().map(|p| p.lat).sum::<f64>() / n,
    );
    let planar: Vec<(f64, f64)> = chosen.iter().map(|&p| project_km(p, origin)).collect();
    let clusters = dpc_cluster(&planar, num_stations, dc_quantile)?;
    let stations = clusters
        .centroids
        .iter()
        .zip(&clusters.member_counts)
        .enumerate()
        .map(|(id, (&c, &m))| Station { id, centroid: unproject_km(c, origin), member_count: m, key: None })
        .collect();
    StationSet::new(StationKind::Virtual, stations)
}
