//! Run-length mask operations: encode/decode, foreground bounds, and IoU.
//!
//! Runs are row-major and begin with a background count, so `[0, n]` is an
//! all-foreground mask. IoU walks the two run streams directly without
//! decoding to pixels.

use crate::error::{Error, Result};

use super::InstanceMask;

/// Encodes a row-major binary grid into run-length counts.
pub fn encode_mask(grid: &[bool], height: u32, width: u32) -> Result<InstanceMask> {
    let expected = height as usize * width as usize;
    if grid.len() != expected {
        return Err(Error::Dimension(format!(
            "grid holds {} pixels, expected {height}x{width} = {expected}",
            grid.len()
        )));
    }
    let mut runs = Vec::new();
    let mut current = false;
    let mut count: u32 = 0;
    for &v in grid {
        if v == current {
            count += 1;
        } else {
            runs.push(count);
            current = v;
            count = 1;
        }
    }
    runs.push(count);
    if runs.is_empty() {
        runs.push(0);
    }
    Ok(InstanceMask {
        height,
        width,
        runs,
    })
}

/// Decodes run-length counts back into a row-major binary grid.
pub fn decode_mask(mask: &InstanceMask) -> Result<Vec<bool>> {
    mask.validate()?;
    let mut grid = vec![false; mask.pixel_count() as usize];
    let mut idx = 0usize;
    let mut value = false;
    for &run in &mask.runs {
        let end = idx + run as usize;
        if value {
            grid[idx..end].iter_mut().for_each(|p| *p = true);
        }
        idx = end;
        value = !value;
    }
    Ok(grid)
}

/// Row/column bounds of the foreground, `(min_row, min_col, max_row, max_col)`
/// inclusive, or `None` for an empty mask.
pub fn mask_foreground_bounds(mask: &InstanceMask) -> Option<(u32, u32, u32, u32)> {
    let width = u64::from(mask.width);
    if width == 0 {
        return None;
    }
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    let mut offset: u64 = 0;
    for (i, &run) in mask.runs.iter().enumerate() {
        let run = u64::from(run);
        if i % 2 == 1 && run > 0 {
            let first = offset;
            let last = offset + run - 1;
            let r0 = (first / width) as u32;
            let r1 = (last / width) as u32;
            // A run spanning multiple rows covers full width in between.
            let (c0, c1) = if r0 == r1 {
                ((first % width) as u32, (last % width) as u32)
            } else {
                (0, mask.width - 1)
            };
            bounds = Some(match bounds {
                None => (r0, c0, r1, c1),
                Some((mr0, mc0, mr1, mc1)) => {
                    (mr0.min(r0), mc0.min(c0), mr1.max(r1), mc1.max(c1))
                }
            });
        }
        offset += run;
    }
    bounds
}

/// Intersection-over-union of two masks of equal dimensions. Defined as 0
/// when both masks are empty.
pub fn mask_iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Dimension(format!(
            "mask dimensions {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    a.validate()?;
    b.validate()?;
    let intersection = run_intersection(a, b);
    let area_a = a.foreground_count();
    let area_b = b.foreground_count();
    let union = area_a + area_b - intersection;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// Foreground overlap via a two-pointer walk over both run streams.
fn run_intersection(a: &InstanceMask, b: &InstanceMask) -> u64 {
    let total = a.pixel_count();
    let mut count = 0u64;
    let (mut ai, mut bi) = (0usize, 0usize);
    let (mut ra, mut rb) = (0u64, 0u64);
    let (mut va, mut vb) = (false, false);
    let mut consumed = 0u64;
    while consumed < total {
        while ra == 0 && ai < a.runs.len() {
            ra = u64::from(a.runs[ai]);
            va = ai % 2 == 1;
            ai += 1;
        }
        while rb == 0 && bi < b.runs.len() {
            rb = u64::from(b.runs[bi]);
            vb = bi % 2 == 1;
            bi += 1;
        }
        if ra == 0 || rb == 0 {
            break;
        }
        let step = ra.min(rb);
        if va && vb {
            count += step;
        }
        ra -= step;
        rb -= step;
        consumed += step;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(grid: &[u8], h: u32, w: u32) -> InstanceMask {
        let bits: Vec<bool> = grid.iter().map(|&v| v != 0).collect();
        encode_mask(&bits, h, w).unwrap()
    }

    #[test]
    fn single_background_run_decodes_empty() {
        let mask = InstanceMask {
            height: 2,
            width: 3,
            runs: vec![6],
        };
        assert_eq!(decode_mask(&mask).unwrap(), vec![false; 6]);
        assert_eq!(mask.foreground_count(), 0);
    }

    #[test]
    fn zero_length_leading_run_decodes_full() {
        let mask = InstanceMask {
            height: 2,
            width: 3,
            runs: vec![0, 6],
        };
        assert_eq!(decode_mask(&mask).unwrap(), vec![true; 6]);
        assert_eq!(mask.foreground_count(), 6);
    }

    #[test]
    fn run_sum_mismatch_is_rejected() {
        let mask = InstanceMask {
            height: 2,
            width: 3,
            runs: vec![5],
        };
        assert!(decode_mask(&mask).is_err());
    }

    #[test]
    fn iou_identical_nonempty_is_one() {
        let a = mask_from(&[1, 0, 1, 1], 2, 2);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = mask_from(&[1, 1, 0, 0], 2, 2);
        let b = mask_from(&[0, 0, 1, 1], 2, 2);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_left_column_vs_top_row() {
        // A = left column {(0,0),(1,0)}, B = top row {(0,0),(0,1)} on 2x2:
        // intersection {(0,0)} = 1, union = 3.
        let a = mask_from(&[1, 0, 1, 0], 2, 2);
        let b = mask_from(&[1, 1, 0, 0], 2, 2);
        let iou = mask_iou(&a, &b).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15, "{iou}");
    }

    #[test]
    fn iou_both_empty_is_zero() {
        let a = mask_from(&[0, 0, 0, 0], 2, 2);
        assert_eq!(mask_iou(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn iou_dimension_mismatch_errors() {
        let a = mask_from(&[1, 0], 1, 2);
        let b = mask_from(&[1, 0], 2, 1);
        assert!(mask_iou(&a, &b).is_err());
    }

    #[test]
    fn foreground_bounds_spanning_rows() {
        // 3x3 grid with a run crossing a row boundary: pixels 4..7.
        let mask = InstanceMask {
            height: 3,
            width: 3,
            runs: vec![4, 3, 2],
        };
        assert_eq!(mask_foreground_bounds(&mask), Some((1, 0, 2, 2)));
    }

    /// Oracle: count-based IoU over decoded grids.
    fn grid_iou(a: &[bool], b: &[bool]) -> f64 {
        let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(grid in proptest::collection::vec(any::<bool>(), 64)) {
            let mask = encode_mask(&grid, 8, 8).unwrap();
            prop_assert_eq!(decode_mask(&mask).unwrap(), grid);
        }

        #[test]
        fn decoded_foreground_matches_odd_runs(grid in proptest::collection::vec(any::<bool>(), 48)) {
            let mask = encode_mask(&grid, 6, 8).unwrap();
            let expected = grid.iter().filter(|&&v| v).count() as u64;
            prop_assert_eq!(mask.foreground_count(), expected);
        }

        #[test]
        fn iou_matches_grid_oracle_and_is_symmetric(
            a in proptest::collection::vec(any::<bool>(), 36),
            b in proptest::collection::vec(any::<bool>(), 36),
        ) {
            let ma = encode_mask(&a, 6, 6).unwrap();
            let mb = encode_mask(&b, 6, 6).unwrap();
            let iou = mask_iou(&ma, &mb).unwrap();
            prop_assert!((iou - grid_iou(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(iou, mask_iou(&mb, &ma).unwrap());
            // 1 iff identical and nonempty.
            if iou == 1.0 {
                prop_assert_eq!(&a, &b);
                prop_assert!(a.iter().any(|&v| v));
            }
            if a == b && a.iter().any(|&v| v) {
                prop_assert_eq!(iou, 1.0);
            }
        }

        #[test]
        fn iou_invariant_under_shared_padding(
            a in proptest::collection::vec(any::<bool>(), 20),
            b in proptest::collection::vec(any::<bool>(), 20),
            pad_rows in 0u32..3,
        ) {
            let (h, w) = (4u32, 5u32);
            let ma = encode_mask(&a, h, w).unwrap();
            let mb = encode_mask(&b, h, w).unwrap();
            let pad = vec![false; (pad_rows * w) as usize];
            let mut ap = a.clone();
            ap.extend_from_slice(&pad);
            let mut bp = b.clone();
            bp.extend_from_slice(&pad);
            let map = encode_mask(&ap, h + pad_rows, w).unwrap();
            let mbp = encode_mask(&bp, h + pad_rows, w).unwrap();
            let base = mask_iou(&ma, &mb).unwrap();
            let padded = mask_iou(&map, &mbp).unwrap();
            prop_assert!((base - padded).abs() < 1e-15);
        }
    }
}
