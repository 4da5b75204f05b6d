//! Robust per-instance depth statistics.
//!
//! Raw monocular depth is noisy inside a mask (boundary bleed, occluders), so
//! values outside the interquartile interval [Q1, Q3] are discarded before
//! averaging. Masks with fewer than four foreground pixels keep all values —
//! quartiles carry no information there.

use serde::{Deserialize, Serialize};

use crate::dataset::{DepthRaster, InstanceMask};
use crate::error::{Error, Result};

/// Minimum foreground pixel count for interquartile filtering to apply.
pub const MIN_PIXELS_FOR_FILTERING: usize = 4;

/// Filtered depth statistics for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    /// Mean of retained depth values; 0 when invalid.
    pub mean: f64,
    /// Median of retained depth values; 0 when invalid.
    pub median: f64,
    /// Retained values after filtering.
    pub pixel_count: usize,
    /// Mask foreground pixel count before filtering.
    pub raw_pixel_count: usize,
    /// False when the mask has no foreground pixels.
    pub valid: bool,
}

impl DepthStats {
    pub fn invalid() -> DepthStats {
        DepthStats {
            mean: 0.0,
            median: 0.0,
            pixel_count: 0,
            raw_pixel_count: 0,
            valid: false,
        }
    }
}

/// Linear-interpolation percentile at fraction `p` in [0, 1]: the value at
/// rank `p * (n - 1)` on the sorted data, interpolating between the closest
/// ranks.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of empty input".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "percentile fraction {p} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Depth statistics over a mask's foreground, with interquartile filtering.
///
/// Retains values `v` with `Q1 <= v <= Q3` (boundary ties kept), then takes
/// the mean and median of the retained set. An empty mask yields an invalid
/// result rather than an error.
pub fn masked_depth_stats(depth: &DepthRaster, mask: &InstanceMask) -> Result<DepthStats> {
    if depth.height != mask.height || depth.width != mask.width {
        return Err(Error::Dimension(format!(
            "depth raster {}x{} vs mask {}x{}",
            depth.height, depth.width, mask.height, mask.width
        )));
    }
    mask.validate()?;
    let mut values: Vec<f64> = Vec::with_capacity(mask.foreground_count() as usize);
    let mut offset = 0usize;
    for (i, &run) in mask.runs.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 {
            for idx in offset..offset + run {
                values.push(f64::from(depth.values[idx]));
            }
        }
        offset += run;
    }
    Ok(stats_from_values(values))
}

fn stats_from_values(mut values: Vec<f64>) -> DepthStats {
    let raw = values.len();
    if raw == 0 {
        return DepthStats::invalid();
    }
    values.sort_by(f64::total_cmp);
    let retained: &[f64] = if raw < MIN_PIXELS_FOR_FILTERING {
        &values
    } else {
        let q1 = percentile_sorted(&values, 0.25);
        let q3 = percentile_sorted(&values, 0.75);
        let start = values.partition_point(|&v| v < q1);
        let end = values.partition_point(|&v| v <= q3);
        &values[start..end]
    };
    debug_assert!(!retained.is_empty());
    let mean = retained.iter().sum::<f64>() / retained.len() as f64;
    let median = percentile_sorted(retained, 0.5);
    DepthStats {
        mean,
        median,
        pixel_count: retained.len(),
        raw_pixel_count: raw,
        valid: true,
    }
}
