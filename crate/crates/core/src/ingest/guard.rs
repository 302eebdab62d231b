use std::cell::Cell;
use std::ops::Range;

use super::binning::DemandSeries;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Read-only view of a demand series that refuses bins past `limit` and
/// remembers the furthest bin read.
pub struct GuardedSeries<'a> {
    series: &'a DemandSeries,
    limit: usize,
    high_water: Cell<usize>,
}

impl<'a> GuardedSeries<'a> {
    pub fn new(series: &'a DemandSeries, limit: usize) -> Self {
        Self { series, limit: limit.min(series.num_bins()), high_water: Cell::new(0) }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn bins(&self, range: Range<usize>) -> Result<Tensor<f64>> {
        if range.end > self.limit {
            return invalid(format!("read of bins {range:?} crosses the guard at {}", self.limit));
        }
        self.high_water.set(self.high_water.get().max(range.end));
        self.series.values.slice_axis(0, range)
    }

    /// One past the largest bin index read so far.
    pub fn high_water(&self) -> usize {
        self.high_water.get()
    }
}
