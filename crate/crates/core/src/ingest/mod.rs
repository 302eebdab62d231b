//! Trip records to station sets and binned demand tensors.

mod binning;
mod dpc;
mod format;
mod guard;
mod records;
mod scaler;
mod split;
mod stations;


pub use binning::{build_demand_tensor, BinTally, DemandSeries, TimeSpan, DEMAND_CHANNELS};
pub use dpc::{dpc_cluster, DpcClustering, DEFAULT_DC_QUANTILE};
pub use format::{
    read_demand_blob, read_stations_csv, read_tensor_blob, write_demand_blob, write_stations_csv, write_tensor_blob,
    SeriesMetadata, DEMAND_MAGIC,
};
pub use guard::GuardedSeries;
pub use records::{parse_trip_records, CsvSchema, ParseTally, TripEnd, TripRecord, DEFAULT_TIME_FORMAT};
pub use scaler::{fit_scaler, Scaler};
pub use split::{split_dataset, weeks_to_bins, DatasetSplit, MINUTES_PER_WEEK};
pub use stations::{dock_stations, select_top_stations, virtual_stations, Station, StationKind, StationSet, DEFAULT_CLUSTER_SAMPLE};
