//! Kaiser-windowed sinc sample-rate conversion.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

pub const KAISER_BETA: f64 = 8.6;
pub const ZERO_CROSSINGS: usize = 64;
/// Largest phase count for which a coefficient table is precomputed.
const MAX_TABLE_PHASES: u64 = 8192;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Output length for `n` input samples: `round(n · to / from)`.
pub fn resampled_len(n: usize, from_rate_hz: f64, to_rate_hz: f64) -> usize {
    (n as f64 * to_rate_hz / from_rate_hz).round() as usize
}

#[derive(Clone, Debug)]
struct Table {
    /// Interpolation factor L of the rational ratio L / M.
    up: u64,
    down: u64,
    taps: usize,
    coeffs: Vec<f64>,
}

/// A fixed-ratio resampler. Construct once and reuse across channels.
#[derive(Clone, Debug)]
pub struct Resampler {
    from: f64,
    to: f64,
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
    table: Option<Table>,
}

impl Resampler {
    pub fn new(from_rate_hz: f64, to_rate_hz: f64) -> Result<Self> {
        if !(from_rate_hz > 0.0) || !(to_rate_hz > 0.0) || !from_rate_hz.is_finite() || !to_rate_hz.is_finite() {
            return invalid("resample", format!("rates must be positive, got {from_rate_hz} -> {to_rate_hz}"));
        }
        let cutoff = from_rate_hz.min(to_rate_hz) / 2.0 / from_rate_hz;
        let half_width = ZERO_CROSSINGS as f64 / (2.0 * cutoff);
        let mut r = Resampler {
            from: from_rate_hz,
            to: to_rate_hz,
            cutoff,
            half_width,
            i0_beta: bessel_i0(KAISER_BETA),
            table: None,
        };
        if from_rate_hz.fract() == 0.0 && to_rate_hz.fract() == 0.0 && from_rate_hz != to_rate_hz {
            let (f, t) = (from_rate_hz as u64, to_rate_hz as u64);
            let g = gcd(f, t);
            let (up, down) = (t / g, f / g);
            if up <= MAX_TABLE_PHASES {
                let reach = half_width.ceil() as usize;
                let taps = 2 * reach + 2;
                let mut coeffs = Vec::with_capacity(up as usize * taps);
                for p in 0..up {
                    let frac = p as f64 / up as f64;
                    for j in 0..taps {
                        coeffs.push(r.kernel(frac - (j as f64 - reach as f64)));
                    }
                }
                r.table = Some(Table { up, down, taps, coeffs });
            }
        }
        Ok(r)
    }

    /// Windowed-sinc impulse response at offset `u` input samples.
    fn kernel(&self, u: f64) -> f64 {
        let r = u / self.half_width;
        if r.abs() > 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.cutoff * sinc(2.0 * self.cutoff * u) * window
    }

    pub fn process(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return invalid("resample", "empty input");
        }
        if self.from == self.to {
            return Ok(x.to_vec());
        }
        let n_out = resampled_len(x.len(), self.from, self.to);
        let n = x.len() as i64;
        let mut y = Vec::with_capacity(n_out);
        match &self.table {
            Some(t) => {
                let reach = ((t.taps - 2) / 2) as i64;
                for k in 0..n_out as u64 {
                    let pos = k * t.down;
                    let base = (pos / t.up) as i64;
                    let phase = (pos % t.up) as usize;
                    let row = &t.coeffs[phase * t.taps..(phase + 1) * t.taps];
                    let first = base - reach;
                    let lo = (-first).max(0) as usize;
                    let hi = ((n - first).max(0) as usize).min(t.taps);
                    let mut acc = 0.0;
                    for j in lo..hi {
                        acc += row[j] * x[(first + j as i64) as usize];
                    }
                    y.push(acc);
                }
            }
            None => {
                let step = self.from / self.to;
                let reach = self.half_width.ceil() as i64;
                for k in 0..n_out {
                    let pos = k as f64 * step;
                    let base = pos.floor() as i64;
                    let mut acc = 0.0;
                    for i in (base - reach).max(0)..=(base + reach + 1).min(n - 1) {
                        acc += self.kernel(pos - i as f64) * x[i as usize];
                    }
                    y.push(acc);
                }
            }
        }
        Ok(y)
    }
}

/// One-shot convenience wrapper around [`Resampler`].
pub fn resample(x: &[f64], from_rate_hz: f64, to_rate_hz: f64) -> Result<Vec<f64>> {
    Resampler::new(from_rate_hz, to_rate_hz)?.process(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
        assert!((bessel_i0(8.6) - 760.0).abs() < 10.0);
    }

    #[test]
    fn table_and_direct_paths_agree() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.31).cos()).collect();
        let fast = Resampler::new(1000.0, 689.0).unwrap();
        assert!(fast.table.is_some());
        let mut slow = fast.clone();
        slow.table = None;
        let a = fast.process(&x).unwrap();
        let b = slow.process(&x).unwrap();
        assert_eq!(a.len(), 345);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_symmetric_and_vanishes_at_the_edge() {
        let r = Resampler::new(1000.0, 689.0).unwrap();
        for u in [0.3, 1.7, 20.0, 90.0] {
            assert_eq!(r.kernel(u), r.kernel(-u));
        }
        assert_eq!(r.kernel(r.half_width + 0.5), 0.0);
    }

    #[test]
    fn dc_passes_with_unit_gain_in_the_interior() {
        let x = vec![1.0; 3000];
        let y = resample(&x, 1000.0, 689.0).unwrap();
        for v in &y[200..y.len() - 200] {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn upsampling_length() {
        let y = resample(&[1.0; 100], 50.0, 86.0).unwrap();
        assert_eq!(y.len(), 172);
    }
}
