use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const MINUTES_PER_WEEK: i64 = 7 * 24 * 60;

pub fn weeks_to_bins(weeks: usize, bin_minutes: i64) -> usize {
    (weeks as i64 * MINUTES_PER_WEEK / bin_minutes) as usize
}

/// Train, validation and test bin ranges plus the window geometry.
///
/// The last non-empty held-out range also holds the `history` bins that lead
/// into its first target, so its targets are exactly its requested bins.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub history: usize,
    pub horizon: usize,
}

impl DatasetSplit {
    pub fn window_len(&self) -> usize {
        self.history + self.horizon
    }

    /// Start bins of every window lying entirely inside `range`.
    pub fn windows(&self, range: &Range<usize>) -> Range<usize> {
        let w = self.window_len();
        if range.len() < w {
            return range.start..range.start;
        }
        range.start..range.end - w + 1
    }

    pub fn total_bins(&self) -> usize {
        self.test.end
    }
}

/// Splits `total_bins` into train < validation < test.
pub fn split_dataset(total_bins: usize, history: usize, horizon: usize, val_bins: usize, test_bins: usize) -> Result<DatasetSplit> {
    if history == 0 || horizon == 0 {
        return invalid("history and horizon must be positive");
    }
    let w = history + horizon;
    let held = val_bins + test_bins;
    let lead = if held > 0 { history } else { 0 };
    let required = held + lead + w;
    if total_bins < required {
        return invalid(format!(
            "{total_bins} bins are {} short of the {required} needed for the held-out ranges plus one training window",
            required - total_bins
        ));
    }
    let (val_lead, test_lead) = if test_bins > 0 { (0, lead) } else { (lead, 0) };
    let test = total_bins - test_bins - test_lead..total_bins;
    let val = test.start - val_bins - val_lead..test.start;
    let train = 0..val.start;
    let split = DatasetSplit { train, val, test, history, horizon };
    for (name, r, wanted) in [("validation", &split.val, val_bins), ("test", &split.test, test_bins)] {
        if wanted > 0 && split.windows(r).is_empty() {
            return invalid(format!(
                "{name} range of {} bins is {} short of one {w}-bin window",
                r.len(),
                w - r.len()
            ));
        }
    }
    Ok(split)
}
