//! Second-order IIR sections and zero-phase application.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// One normalized biquad, `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq_hz / rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        let d2 = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d2, (num.1 * den.0 - num.0 * den.1) / d2)
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Direct form II transposed, starting from the state a constant input
    /// `x[0]` would have settled into.
    fn run(&self, x: &mut [f64]) {
        let Some(&u) = x.first() else { return };
        let y = self.dc_gain() * u;
        let mut z2 = self.b[2] * u - self.a[1] * y;
        let mut z1 = y - self.b[0] * u;
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// A cascade of biquads applied in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
}

impl Cascade {
    /// Runs every section in order. Each section starts in steady state for
    /// its own first input sample, so a constant signal passes through
    /// without an onset transient.
    pub fn apply(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Forward pass, time reversal, second pass, reversal back. The phase
    /// cancels and the magnitude response is squared.
    pub fn filtfilt(&self, x: &mut [f64]) {
        self.apply(x);
        x.reverse();
        self.apply(x);
        x.reverse();
    }

    /// Single-pass magnitude at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(freq_hz, rate_hz);
                re.hypot(im)
            })
            .product()
    }
}

/// Notch biquads at `freq_hz * k` for `k = 1..=n_harmonics`, skipping any
/// harmonic at or above Nyquist.
pub fn design_notch(rate_hz: f64, freq_hz: f64, q: f64, n_harmonics: usize) -> Result<Cascade> {
    if !(rate_hz > 0.0) {
        return invalid("notch_filter", format!("rate {rate_hz} must be positive"));
    }
    if !(freq_hz > 0.0) || freq_hz >= rate_hz / 2.0 {
        return invalid("notch_filter", format!("frequency {freq_hz} Hz outside (0, {})", rate_hz / 2.0));
    }
    if !(q > 0.0) {
        return invalid("notch_filter", format!("q {q} must be positive"));
    }
    let sections = (1..=n_harmonics)
        .map(|k| freq_hz * k as f64)
        .take_while(|f| *f < rate_hz / 2.0)
        .map(|f| {
            let w0 = 2.0 * PI * f / rate_hz;
            let alpha = w0.sin() / (2.0 * q);
            let c = -2.0 * w0.cos();
            Biquad::normalized([1.0, c, 1.0], [1.0 + alpha, c, 1.0 - alpha])
        })
        .collect();
    Ok(Cascade { sections })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Lowpass,
    Highpass,
}

/// Butterworth filter via the bilinear transform with prewarped cutoff.
pub fn design_butterworth(band: Band, order: usize, cutoff_hz: f64, rate_hz: f64) -> Result<Cascade> {
    if order == 0 {
        return invalid("butterworth", "order must be at least 1");
    }
    if !(cutoff_hz > 0.0) || !(cutoff_hz < rate_hz / 2.0) {
        return invalid("butterworth", format!("cutoff {cutoff_hz} Hz outside (0, {})", rate_hz / 2.0));
    }
    let k = 2.0 * rate_hz;
    let wc = k * (PI * cutoff_hz / rate_hz).tan();
    let mut sections = Vec::with_capacity(order.div_ceil(2));

    for i in 1..=order / 2 {
        let theta = PI * (2 * i + order - 1) as f64 / (2 * order) as f64;
        // Prototype pole is (cos θ, sin θ) on the unit circle, left half plane.
        // Highpass maps it to wc / p, lowpass to wc * p; both have |q| = wc
        // and Re(q) = wc cos θ.
        let re = wc * theta.cos();
        let mag2 = wc * wc;
        let a = [k * k - 2.0 * re * k + mag2, 2.0 * mag2 - 2.0 * k * k, k * k + 2.0 * re * k + mag2];
        let b = match band {
            Band::Highpass => [k * k, -2.0 * k * k, k * k],
            Band::Lowpass => [mag2, 2.0 * mag2, mag2],
        };
        sections.push(Biquad::normalized(b, a));
    }
    if order % 2 == 1 {
        let q = -wc;
        let a = [k - q, -k - q, 0.0];
        let b = match band {
            Band::Highpass => [k, -k, 0.0],
            Band::Lowpass => [-q, -q, 0.0],
        };
        sections.push(Biquad::normalized(b, a));
    }
    Ok(Cascade { sections })
}
