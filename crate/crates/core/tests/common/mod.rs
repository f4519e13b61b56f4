#![allow(dead_code)]

pub mod corpus;

use std::f64::consts::PI;

/// Amplitude of the `freq_hz` component of `x` via a Hann-windowed
/// single-bin discrete Fourier transform.
pub fn tone_amplitude(x: &[f64], rate_hz: f64, freq_hz: f64) -> f64 {
    let n = x.len();
    let (mut re, mut im, mut wsum) = (0.0, 0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
        let ph = 2.0 * PI * freq_hz * i as f64 / rate_hz;
        re += w * v * ph.cos();
        im -= w * v * ph.sin();
        wsum += w;
    }
    2.0 * re.hypot(im) / wsum
}

pub fn tone(freq_hz: f64, rate_hz: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq_hz * i as f64 / rate_hz).sin()).collect()
}

pub fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}
