//! Fixed-width integer binning shared by length statistics and the
//! length-difference histogram.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: i64,
    pub upper: i64,
    pub count: usize,
}

/// Bin signed values into [k*w, (k+1)*w) intervals. Only non-empty bins in
/// the covered range are returned; counts always sum to `values.len()`.
pub fn bin_signed(values: &[i64], bin_width: u32) -> Vec<HistogramBin> {
    assert!(bin_width >= 1, "bin_width must be >= 1");
    if values.is_empty() {
        return Vec::new();
    }
    let w = bin_width as i64;
    let idx = |v: i64| v.div_euclid(w);
    let lo = values.iter().copied().map(idx).min().unwrap();
    let hi = values.iter().copied().map(idx).max().unwrap();
    let mut bins: Vec<HistogramBin> = (lo..=hi)
        .map(|k| HistogramBin {
            lower: k * w,
            upper: (k + 1) * w,
            count: 0,
        })
        .collect();
    for &v in values {
        bins[(idx(v) - lo) as usize].count += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_diffs_fill_a_single_bin() {
        let bins = bin_signed(&[0, 0, 0, 0], 5);
        assert_eq!(bins.len(), 1);
        assert_eq!(
            bins[0],
            HistogramBin {
                lower: 0,
                upper: 5,
                count: 4
            }
        );
    }

    #[test]
    fn symmetric_diffs_make_symmetric_bins() {
        let bins = bin_signed(&[-5, 5], 10);
        assert_eq!(
            bins,
            vec![
                HistogramBin {
                    lower: -10,
                    upper: 0,
                    count: 1
                },
                HistogramBin {
                    lower: 0,
                    upper: 10,
                    count: 1
                },
            ]
        );
    }

    #[test]
    fn counts_sum_to_n_with_gaps_covered() {
        let values = [-7, -1, 0, 3, 14];
        let bins = bin_signed(&values, 4);
        let total: usize = bins.iter().map(|b| b.count).sum();
        assert_eq!(total, values.len());
        for pair in bins.windows(2) {
            assert_eq!(pair[0].upper, pair[1].lower);
        }
    }
}
