use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use super::records::{TripEnd, TripRecord};
use super::stations::{StationKind, StationSet};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const DEMAND_CHANNELS: usize = 2;

/// Half-open range of whole time bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: NaiveDateTime,
    pub bin_minutes: i64,
    pub bins: usize,
}

impl TimeSpan {
    /// Bins from `start` up to `end` (exclusive), rounding a partial last bin up.
    pub fn between(start: NaiveDateTime, end: NaiveDateTime, bin_minutes: i64) -> Result<Self> {
        if bin_minutes <= 0 {
            return invalid("bin width must be positive");
        }
        if end <= start {
            return invalid("time span end must follow its start");
        }
        let minutes = (end - start).num_seconds() as f64 / 60.0;
        let bins = (minutes / bin_minutes as f64).ceil() as usize;
        Ok(Self { start, bin_minutes, bins })
    }

    /// Smallest span of whole bins, aligned to midnight of the first day,
    /// containing every pick-up and drop-off.
    pub fn covering(records: &[TripRecord], bin_minutes: i64) -> Result<Self> {
        if bin_minutes <= 0 {
            return invalid("bin width must be positive");
        }
        let times = records.iter().flat_map(|r| [r.pickup.time, r.dropoff.time]);
        let (Some(first), Some(last)) = (times.clone().min(), times.max()) else {
            return invalid("no records to cover");
        };
        let midnight = first.date().and_time(NaiveTime::MIN);
        let offset = (first - midnight).num_minutes() / bin_minutes;
        let start = midnight + Duration::minutes(offset * bin_minutes);
        let span = Self { start, bin_minutes, bins: 0 };
        let last_bin = span.bin_of(last).expect("last record follows start") as usize;
        Ok(Self { bins: last_bin + 1, ..span })
    }

    pub fn width(&self) -> Duration {
        Duration::minutes(self.bin_minutes)
    }

    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::minutes(self.bin_minutes * self.bins as i64)
    }

    pub fn bin_start(&self, bin: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.bin_minutes * bin as i64)
    }

    /// Bin index of `t`, which may fall outside the span.
    fn bin_of(&self, t: NaiveDateTime) -> Option<i64> {
        let secs = (t - self.start).num_seconds();
        if secs < 0 {
            return None;
        }
        Some(secs / (self.bin_minutes * 60))
    }

    pub fn bin(&self, t: NaiveDateTime) -> Option<usize> {
        self.bin_of(t).filter(|&b| (b as usize) < self.bins).map(|b| b as usize)
    }
}

/// Binned pick-up (channel 0) and drop-off (channel 1) counts, `[T, N, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandSeries {
    pub values: Tensor<f64>,
    pub span: TimeSpan,
}

impl DemandSeries {
    pub fn new(values: Tensor<f64>, span: TimeSpan) -> Result<Self> {
        if values.rank() != 3 || values.shape()[0] != span.bins {
            return invalid(format!("demand of shape {:?} does not match {} bins", values.shape(), span.bins));
        }
        Ok(Self { values, span })
    }

    pub fn num_bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_stations(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Trip ends that could not be binned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinTally {
    pub pickups: usize,
    pub dropoffs: usize,
    pub outside_span: usize,
    pub unknown_station: usize,
}

fn station_of(end: &TripEnd, stations: &StationSet, keys: &std::collections::HashMap<&str, usize>) -> Option<usize> {
    match stations.kind {
        StationKind::DockBased => end.station.as_deref().and_then(|k| keys.get(k).copied()),
        StationKind::Virtual => end.location.map(|p| stations.nearest(p)),
    }
}

/// Counts pick-ups and drop-offs per (bin, station). Docks match by id and
/// virtual stations by nearest centroid. Each trip end is binned on its own.
pub fn build_demand_tensor(records: &[TripRecord], stations: &StationSet, span: TimeSpan) -> Result<(DemandSeries, BinTally)> {
    if stations.is_empty() {
        return invalid("station set is empty");
    }
    let n = stations.len();
    let mut values = Tensor::zeros([span.bins, n, DEMAND_CHANNELS]);
    let keys = stations.key_index();
    let mut tally = BinTally::default();
    for rec in records {
        for (channel, end) in [(0, &rec.pickup), (1, &rec.dropoff)] {
            let Some(bin) = span.bin(end.time) else {
                tally.outside_span += 1;
                continue;
            };
            let Some(station) = station_of(end, stations, &keys) else {
                tally.unknown_station += 1;
                continue;
            };
            values.data_mut()[(bin * n + station) * DEMAND_CHANNELS + channel] += 1.0;
            if channel == 0 {
                tally.pickups += 1;
            } else {
                tally.dropoffs += 1;
            }
        }
    }
    Ok((DemandSeries::new(values, span)?, tally))
}
