//! On-disk demand blob, sidecar metadata and station table.

use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::binning::{DemandSeries, TimeSpan};
use super::stations::{Station, StationKind, StationSet};
use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::tensor::Tensor;

pub const DEMAND_MAGIC: &[u8; 4] = b"DMD1";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Writes `magic, dims as u64 LE, values as f64 LE` in row-major order.
pub fn write_tensor_blob<W: Write>(mut w: W, magic: &[u8; 4], t: &Tensor<f64>) -> Result<()> {
    w.write_all(magic)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor_blob<R: Read>(mut r: R, magic: &[u8; 4], rank: usize) -> Result<Tensor<f64>> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    if &head != magic {
        return Err(Error::Format(format!("bad magic {head:?}, expected {magic:?}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut word = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut word)?;
        shape.push(usize::try_from(u64::from_le_bytes(word)).map_err(|_| Error::Format("dimension overflows usize".into()))?);
    }
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("blob too large".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Format(format!("blob holds {} bytes of values, shape {shape:?} needs {}", bytes.len(), len * 8)));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn write_demand_blob<W: Write>(w: W, values: &Tensor<f64>) -> Result<()> {
    write_tensor_blob(w, DEMAND_MAGIC, values)
}

pub fn read_demand_blob<R: Read>(r: R) -> Result<Tensor<f64>> {
    read_tensor_blob(r, DEMAND_MAGIC, 3)
}

/// Sidecar describing a demand blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub bin_start: String,
    pub bin_minutes: i64,
    pub num_bins: usize,
    pub num_stations: usize,
    pub channels: Vec<String>,
    pub stations: StationSet,
}

impl SeriesMetadata {
    pub fn describe(series: &DemandSeries, stations: &StationSet) -> Self {
        Self {
            bin_start: series.span.start.format(TIME_FORMAT).to_string(),
            bin_minutes: series.span.bin_minutes,
            num_bins: series.num_bins(),
            num_stations: series.num_stations(),
            channels: vec!["pickup".into(), "dropoff".into()],
            stations: stations.clone(),
        }
    }

    pub fn span(&self) -> Result<TimeSpan> {
        let start = NaiveDateTime::parse_from_str(&self.bin_start, TIME_FORMAT)
            .map_err(|e| Error::Format(format!("bin_start `{}`: {e}", self.bin_start)))?;
        Ok(TimeSpan { start, bin_minutes: self.bin_minutes, bins: self.num_bins })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuilds the series from its blob values, checking the recorded shape.
    pub fn attach(&self, values: Tensor<f64>) -> Result<DemandSeries> {
        let want = [self.num_bins, self.num_stations, self.channels.len()];
        if values.shape() != want {
            return Err(Error::Format(format!("blob shape {:?} disagrees with metadata {want:?}", values.shape())));
        }
        DemandSeries::new(values, self.span()?)
    }
}

#[derive(Serialize, Deserialize)]
struct StationRow {
    id: usize,
    lon: f64,
    lat: f64,
    member_count: usize,
}

pub fn write_stations_csv<W: Write>(w: W, stations: &StationSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in &stations.stations {
        out.serialize(StationRow { id: s.id, lon: s.centroid.lon, lat: s.centroid.lat, member_count: s.member_count })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a station table. Dock keys are not part of the CSV, so the result
/// is a virtual set; use the sidecar metadata for dock-based sets.
pub fn read_stations_csv<R: Read>(r: R) -> Result<StationSet> {
    let mut reader = csv::Reader::from_reader(r);
    let stations = reader
        .deserialize::<StationRow>()
        .map(|row| {
            let row = row?;
            Ok(Station { id: row.id, centroid: LonLat::new(row.lon, row.lat), member_count: row.member_count, key: None })
        })
        .collect::<Result<Vec<_>>>()?;
    StationSet::new(StationKind::Virtual, stations)
}
