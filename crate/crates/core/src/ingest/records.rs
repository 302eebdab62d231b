use std::collections::HashMap;
use std::io::Read;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LonLat, Rectangle};

pub const DEFAULT_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Column names of a trip CSV.
///
/// Times are mandatory. Each trip end needs either coordinates or a station
/// id; dock-based data normally carries both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub pickup_time: String,
    pub dropoff_time: String,
    pub pickup_lon: Option<String>,
    pub pickup_lat: Option<String>,
    pub dropoff_lon: Option<String>,
    pub dropoff_lat: Option<String>,
    pub pickup_station: Option<String>,
    pub dropoff_station: Option<String>,
    pub time_format: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            pickup_time: "pickup_time".into(),
            dropoff_time: "dropoff_time".into(),
            pickup_lon: Some("pickup_lon".into()),
            pickup_lat: Some("pickup_lat".into()),
            dropoff_lon: Some("dropoff_lon".into()),
            dropoff_lat: Some("dropoff_lat".into()),
            pickup_station: None,
            dropoff_station: None,
            time_format: DEFAULT_TIME_FORMAT.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripEnd {
    pub time: NaiveDateTime,
    pub location: Option<LonLat>,
    pub station: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripRecord {
    pub pickup: TripEnd,
    pub dropoff: TripEnd,
}

/// Rows rejected while parsing, by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTally {
    pub accepted: usize,
    pub malformed: usize,
    pub bad_timestamp: usize,
    pub time_reversed: usize,
    pub out_of_region: usize,
}

impl ParseTally {
    pub fn skipped(&self) -> usize {
        self.malformed + self.bad_timestamp + self.time_reversed + self.out_of_region
    }
}

struct Columns {
    pickup_time: usize,
    dropoff_time: usize,
    pickup_coords: Option<(usize, usize)>,
    dropoff_coords: Option<(usize, usize)>,
    pickup_station: Option<usize>,
    dropoff_station: Option<usize>,
}

fn resolve(schema: &CsvSchema, header: &csv::StringRecord) -> Result<Columns> {
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let need = |name: &str| index.get(name).copied().ok_or_else(|| Error::Schema(format!("missing column `{name}`")));
    let optional = |name: &Option<String>| -> Result<Option<usize>> { name.as_deref().map(need).transpose() };
    let pair = |a: &Option<String>, b: &Option<String>| -> Result<Option<(usize, usize)>> {
        Ok(match (optional(a)?, optional(b)?) {
            (Some(x), Some(y)) => Some((x, y)),
            _ => None,
        })
    };
    let cols = Columns {
        pickup_time: need(&schema.pickup_time)?,
        dropoff_time: need(&schema.dropoff_time)?,
        pickup_coords: pair(&schema.pickup_lon, &schema.pickup_lat)?,
        dropoff_coords: pair(&schema.dropoff_lon, &schema.dropoff_lat)?,
        pickup_station: optional(&schema.pickup_station)?,
        dropoff_station: optional(&schema.dropoff_station)?,
    };
    if cols.pickup_coords.is_none() && cols.pickup_station.is_none() {
        return Err(Error::Schema("pick-up needs coordinate or station columns".into()));
    }
    if cols.dropoff_coords.is_none() && cols.dropoff_station.is_none() {
        return Err(Error::Schema("drop-off needs coordinate or station columns".into()));
    }
    Ok(cols)
}

enum RowError {
    Malformed,
    Timestamp,
}

fn parse_time(raw: &str, format: &str) -> std::result::Result<NaiveDateTime, RowError> {
    let raw = raw.trim();
    NaiveDateTime::parse_from_str(raw, format)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f"))
        .map_err(|_| RowError::Timestamp)
}

fn parse_coords(row: &csv::StringRecord, cols: Option<(usize, usize)>) -> std::result::Result<Option<LonLat>, RowError> {
    let Some((lon, lat)) = cols else { return Ok(None) };
    let get = |i: usize| row.get(i).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
    match (get(lon), get(lat)) {
        (Some(lon), Some(lat)) => Ok(Some(LonLat::new(lon, lat))),
        _ => Err(RowError::Malformed),
    }
}

fn parse_station(row: &csv::StringRecord, col: Option<usize>) -> std::result::Result<Option<String>, RowError> {
    let Some(i) = col else { return Ok(None) };
    match row.get(i).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(Some(s.to_string())),
        _ => Err(RowError::Malformed),
    }
}

/// Reads trip records from CSV. Rows that cannot be used are tallied and
/// skipped; the result is sorted by pick-up time (stable for ties).
pub fn parse_trip_records<R: Read>(source: R, schema: &CsvSchema, region: Option<&Rectangle>) -> Result<(Vec<TripRecord>, ParseTally)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    let cols = resolve(schema, &header)?;
    let mut tally = ParseTally::default();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                tally.malformed += 1;
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<TripRecord, RowError> {
            let pt = parse_time(row.get(cols.pickup_time).ok_or(RowError::Malformed)?, &schema.time_format)?;
            let dt = parse_time(row.get(cols.dropoff_time).ok_or(RowError::Malformed)?, &schema.time_format)?;
            Ok(TripRecord {
                pickup: TripEnd { time: pt, location: parse_coords(&row, cols.pickup_coords)?, station: parse_station(&row, cols.pickup_station)? },
                dropoff: TripEnd { time: dt, location: parse_coords(&row, cols.dropoff_coords)?, station: parse_station(&row, cols.dropoff_station)? },
            })
        })();
        let rec = match parsed {
            Ok(r) => r,
            Err(RowError::Malformed) => {
                tally.malformed += 1;
                continue;
            }
            Err(RowError::Timestamp) => {
                tally.bad_timestamp += 1;
                continue;
            }
        };
        if rec.dropoff.time < rec.pickup.time {
            tally.time_reversed += 1;
            continue;
        }
        if let Some(rect) = region {
            let inside = |e: &TripEnd| e.location.is_none_or(|p| rect.contains(p));
            if !inside(&rec.pickup) || !inside(&rec.dropoff) {
                tally.out_of_region += 1;
                continue;
            }
        }
        records.push(rec);
    }
    records.sort_by_key(|r| r.pickup.time);
    tally.accepted = records.len();
    Ok((records, tally))
}
