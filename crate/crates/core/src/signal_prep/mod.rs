//! EMG preprocessing: powerline notch, drift high-pass, soft de-spiking
//! and rational-rate resampling, in that order.

mod despike;
mod filters;
mod resample;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

pub use despike::{running_median_mad, soft_despike, MAD_FLOOR, MAD_SCALE};
pub use filters::{design_butterworth, design_notch, Band, Biquad, Cascade};
pub use resample::{resample, resampled_len, Resampler, KAISER_BETA, ZERO_CROSSINGS};

pub const EMG_CHANNELS: usize = 8;
pub const RAW_RATE_HZ: f64 = 1000.0;
pub const PREP_RATE_HZ: f64 = 689.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RawEmgRecording {
    pub utterance_id: String,
    pub sample_rate_hz: f64,
    /// One sequence per channel, all of equal length.
    pub samples: Vec<Vec<f32>>,
}

impl RawEmgRecording {
    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return invalid("recording", "no channels");
        }
        if !(self.sample_rate_hz > 0.0) {
            return invalid("recording", format!("sample rate {} must be positive", self.sample_rate_hz));
        }
        let n = self.n_samples();
        if n == 0 || self.samples.iter().any(|c| c.len() != n) {
            return invalid("recording", "channels must share a nonzero length");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub notch_freq_hz: f64,
    pub notch_harmonics: usize,
    pub notch_q: f64,
    pub hp_cutoff_hz: f64,
    pub hp_order: usize,
    pub despike_window: usize,
    pub despike_z_threshold: f64,
    pub target_rate_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            notch_freq_hz: 60.0,
            notch_harmonics: 5,
            notch_q: 30.0,
            hp_cutoff_hz: 2.0,
            hp_order: 4,
            despike_window: 101,
            despike_z_threshold: 5.0,
            target_rate_hz: PREP_RATE_HZ,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.despike_window < 3 || self.despike_window.is_multiple_of(2) {
            return invalid("preprocess", format!("despike_window {} must be odd and >= 3", self.despike_window));
        }
        if !(self.target_rate_hz > 0.0) || self.target_rate_hz > sample_rate_hz {
            return invalid(
                "preprocess",
                format!("target rate {} must lie in (0, {sample_rate_hz}]", self.target_rate_hz),
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedEmg {
    pub source_id: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f32>>,
}

fn nonempty(signal: &[f64], op: &'static str) -> Result<()> {
    if signal.is_empty() {
        return invalid(op, "empty signal");
    }
    Ok(())
}

/// Zero-phase cascade of notches at `freq_hz` and its harmonics.
pub fn notch_filter(signal: &[f64], rate_hz: f64, freq_hz: f64, q: f64, n_harmonics: usize) -> Result<Vec<f64>> {
    nonempty(signal, "notch_filter")?;
    let cascade = design_notch(rate_hz, freq_hz, q, n_harmonics)?;
    let mut y = signal.to_vec();
    cascade.filtfilt(&mut y);
    Ok(y)
}

/// Zero-phase Butterworth high-pass.
pub fn highpass_filter(signal: &[f64], rate_hz: f64, cutoff_hz: f64, order: usize) -> Result<Vec<f64>> {
    nonempty(signal, "highpass_filter")?;
    let cascade = design_butterworth(Band::Highpass, order, cutoff_hz, rate_hz)?;
    let mut y = signal.to_vec();
    cascade.filtfilt(&mut y);
    Ok(y)
}

/// Runs notch, high-pass, de-spike and resample on every channel.
pub fn preprocess_recording(rec: &RawEmgRecording, cfg: &PreprocessConfig) -> Result<PreprocessedEmg> {
    rec.validate()?;
    cfg.validate(rec.sample_rate_hz)?;
    let rate = rec.sample_rate_hz;
    let notch = design_notch(rate, cfg.notch_freq_hz, cfg.notch_q, cfg.notch_harmonics)?;
    let hp = design_butterworth(Band::Highpass, cfg.hp_order, cfg.hp_cutoff_hz, rate)?;
    let resampler = Resampler::new(rate, cfg.target_rate_hz)?;

    let samples = rec
        .samples
        .iter()
        .enumerate()
        .map(|(channel, raw)| {
            let run = || -> Result<Vec<f32>> {
                let mut x: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
                if x.iter().any(|v| !v.is_finite()) {
                    return invalid("preprocess", "non-finite sample");
                }
                notch.filtfilt(&mut x);
                hp.filtfilt(&mut x);
                let x = soft_despike(&x, cfg.despike_window, cfg.despike_z_threshold)?;
                let x = resampler.process(&x)?;
                Ok(x.into_iter().map(|v| v as f32).collect())
            };
            run().map_err(|e| CoreError::Channel {
                channel,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PreprocessedEmg {
        source_id: rec.utterance_id.clone(),
        sample_rate_hz: cfg.target_rate_hz,
        samples,
    })
}
