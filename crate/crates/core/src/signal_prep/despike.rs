//! Running median / MAD outlier compression.

use crate::error::{invalid, Result};

/// Consistency constant relating the MAD to a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.4826;
pub const MAD_FLOOR: f64 = 1e-8;

/// Median of a sorted slice.
fn sorted_median(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median of `|s[i] - m|` for sorted `s`, by merging the two monotone
/// distance sequences that fan out from `m`.
fn sorted_mad(s: &[f64], m: f64) -> f64 {
    let n = s.len();
    let split = s.partition_point(|v| *v < m);
    let (mut l, mut r) = (split, split);
    let want = n / 2;
    let mut prev = 0.0;
    let mut cur = 0.0;
    for _ in 0..=want {
        prev = cur;
        let dl = if l > 0 { m - s[l - 1] } else { f64::INFINITY };
        let dr = if r < n { s[r] - m } else { f64::INFINITY };
        if dl <= dr {
            cur = dl;
            l -= 1;
        } else {
            cur = dr;
            r += 1;
        }
    }
    if n % 2 == 1 {
        cur
    } else {
        0.5 * (prev + cur)
    }
}

/// Running median and scaled MAD over a centered window truncated at the
/// signal edges.
pub fn running_median_mad(x: &[f64], window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window < 3 || window.is_multiple_of(2) {
        return invalid("soft_despike", format!("window {window} must be odd and at least 3"));
    }
    let half = window / 2;
    let n = x.len();
    let mut medians = Vec::with_capacity(n);
    let mut mads = Vec::with_capacity(n);
    let mut sorted: Vec<f64> = Vec::with_capacity(window);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + half + 1).min(n);
        while hi < want_hi {
            let v = x[hi];
            let pos = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.insert(pos, v);
            hi += 1;
        }
        while lo < want_lo {
            let v = x[lo];
            let pos = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.remove(pos);
            lo += 1;
        }
        let m = sorted_median(&sorted);
        medians.push(m);
        mads.push(sorted_mad(&sorted, m).max(MAD_FLOOR));
    }
    Ok((medians, mads))
}

/// Compresses samples whose robust z-score exceeds `z_threshold` to
/// `m ± MAD_SCALE·s·(z_threshold + tanh(z − z_threshold))`. Samples within
/// the threshold are returned bit-identical.
pub fn soft_despike(x: &[f64], window: usize, z_threshold: f64) -> Result<Vec<f64>> {
    if !(z_threshold > 0.0) {
        return invalid("soft_despike", format!("threshold {z_threshold} must be positive"));
    }
    let (medians, mads) = running_median_mad(x, window)?;
    Ok(x.iter()
        .zip(medians.iter().zip(&mads))
        .map(|(&v, (&m, &s))| {
            let scale = MAD_SCALE * s;
            let dev = v - m;
            let z = dev.abs() / scale;
            if z <= z_threshold {
                v
            } else {
                m + dev.signum() * scale * (z_threshold + (z - z_threshold).tanh())
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(x: &[f64], window: usize) -> (Vec<f64>, Vec<f64>) {
        let half = window / 2;
        let mut meds = Vec::new();
        let mut mads = Vec::new();
        for i in 0..x.len() {
            let mut w: Vec<f64> = x[i.saturating_sub(half)..(i + half + 1).min(x.len())].to_vec();
            w.sort_by(f64::total_cmp);
            let m = sorted_median(&w);
            let mut d: Vec<f64> = w.iter().map(|v| (v - m).abs()).collect();
            d.sort_by(f64::total_cmp);
            meds.push(m);
            mads.push(sorted_median(&d).max(MAD_FLOOR));
        }
        (meds, mads)
    }

    #[test]
    fn sliding_statistics_match_brute_force() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 - 50.0) * 0.1 + (i as f64 * 0.3).sin()).collect();
        for window in [3, 5, 11, 101] {
            let (m, s) = running_median_mad(&x, window).unwrap();
            let (bm, bs) = brute(&x, window);
            assert_eq!(m, bm);
            for (a, b) in s.iter().zip(&bs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_values_in_window() {
        let x = [1.0, 1.0, 2.0, 2.0, 2.0, 1.0, 3.0, 3.0];
        let (m, s) = running_median_mad(&x, 5).unwrap();
        let (bm, bs) = brute(&x, 5);
        assert_eq!(m, bm);
        assert_eq!(s, bs);
    }

    #[test]
    fn even_window_is_rejected() {
        assert!(soft_despike(&[0.0; 10], 4, 5.0).is_err());
        assert!(soft_despike(&[0.0; 10], 1, 5.0).is_err());
    }

    #[test]
    fn compressed_samples_land_between_threshold_and_threshold_plus_one() {
        let mut x: Vec<f64> = (0..301).map(|i| (i as f64 * 0.7).sin()).collect();
        x[150] = 40.0;
        x[30] = -25.0;
        let (m, s) = running_median_mad(&x, 51).unwrap();
        let y = soft_despike(&x, 51, 5.0).unwrap();
        for i in [30, 150] {
            let z_out = (y[i] - m[i]).abs() / (MAD_SCALE * s[i]);
            assert!(z_out > 5.0 && z_out <= 6.0 + 1e-9, "z {z_out}");
            assert_eq!((y[i] - m[i]).signum(), (x[i] - m[i]).signum());
        }
    }
}
