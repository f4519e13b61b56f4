//! Articulatory target streams, pitch normalization and frame-rate
//! conversion.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Rate of the upstream articulatory estimates.
pub const SOURCE_FRAME_RATE_HZ: f64 = 50.0;
/// Rate the targets are brought to so they line up with encoder frames.
pub const TARGET_FRAME_RATE_HZ: f64 = 86.16;
pub const PITCH_CENTER_HZ: f64 = 130.0;
pub const PITCH_SCALE_HZ: f64 = 70.0;
pub const EMA_DIMS: usize = 12;
/// EMA dims, then normalized pitch, then loudness.
pub const TARGET_DIMS: usize = 14;
pub const PITCH_DIM: usize = 12;
pub const LOUDNESS_DIM: usize = 13;
pub const DEFAULT_PHONEME_VOCAB: usize = 41;
pub const SILENCE_ID: u32 = 0;
/// Largest tolerated disagreement between predicted and target frame counts.
pub const MAX_LENGTH_GAP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmaSensor {
    UL,
    LL,
    LI,
    TT,
    TB,
    TD,
}

impl EmaSensor {
    pub const ALL: [EmaSensor; 6] = [
        EmaSensor::UL,
        EmaSensor::LL,
        EmaSensor::LI,
        EmaSensor::TT,
        EmaSensor::TB,
        EmaSensor::TD,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EmaSensor::UL => "UL",
            EmaSensor::LL => "LL",
            EmaSensor::LI => "LI",
            EmaSensor::TT => "TT",
            EmaSensor::TB => "TB",
            EmaSensor::TD => "TD",
        }
    }

    /// The two EMA dimensions (x, y) of this sensor.
    pub fn dims(self) -> [usize; 2] {
        [EmaLayout::dim(self, Axis::X), EmaLayout::dim(self, Axis::Y)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X = 0,
    Y = 1,
}

/// Fixed layout of the 12 EMA dimensions.
pub struct EmaLayout;

impl EmaLayout {
    pub fn dim(sensor: EmaSensor, axis: Axis) -> usize {
        2 * sensor.index() + axis as usize
    }

    pub fn sensor_of(dim: usize) -> Option<EmaSensor> {
        EmaSensor::ALL.get(dim / 2).copied().filter(|_| dim < EMA_DIMS)
    }

    pub fn dim_name(dim: usize) -> Option<String> {
        let sensor = Self::sensor_of(dim)?;
        Some(format!("{}_{}", sensor.name(), if dim.is_multiple_of(2) { "x" } else { "y" }))
    }
}

pub fn normalize_pitch(f0_hz: f64) -> f64 {
    (f0_hz - PITCH_CENTER_HZ) / PITCH_SCALE_HZ
}

pub fn denormalize_pitch(v: f64) -> f64 {
    v * PITCH_SCALE_HZ + PITCH_CENTER_HZ
}

/// Continuous targets at a common frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ArticulatoryTrack {
    pub utterance_id: String,
    pub frame_rate_hz: f64,
    /// 12 streams in [`EmaLayout`] order.
    pub ema: Vec<Vec<f32>>,
    /// Normalized pitch.
    pub pitch: Vec<f32>,
    pub loudness: Vec<f32>,
}

impl ArticulatoryTrack {
    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || self.ema.len() != EMA_DIMS || self.ema.iter().any(|s| s.len() != n) || self.loudness.len() != n {
            return invalid("articulatory track", "streams must be 12 EMA + pitch + loudness of one nonzero length");
        }
        Ok(())
    }

    /// Frame-major rows of [`TARGET_DIMS`] values.
    pub fn to_rows(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.len() * TARGET_DIMS);
        for t in 0..self.len() {
            out.extend(self.ema.iter().map(|s| s[t]));
            out.push(self.pitch[t]);
            out.push(self.loudness[t]);
        }
        out
    }

    pub fn from_rows(utterance_id: &str, frame_rate_hz: f64, rows: &[f32]) -> Result<Self> {
        if rows.is_empty() || !rows.len().is_multiple_of(TARGET_DIMS) {
            return invalid("articulatory track", format!("{} values is not a whole number of rows", rows.len()));
        }
        let column = |d: usize| rows.iter().skip(d).step_by(TARGET_DIMS).copied().collect::<Vec<f32>>();
        Ok(ArticulatoryTrack {
            utterance_id: utterance_id.to_string(),
            frame_rate_hz,
            ema: (0..EMA_DIMS).map(column).collect(),
            pitch: column(PITCH_DIM),
            loudness: column(LOUDNESS_DIM),
        })
    }

    /// Stream `d` in [`TARGET_DIMS`] order.
    pub fn stream(&self, d: usize) -> &[f32] {
        match d {
            PITCH_DIM => &self.pitch,
            LOUDNESS_DIM => &self.loudness,
            _ => &self.ema[d],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhonemeTrack {
    pub vocab_size: u32,
    pub ids: Vec<u32>,
}

impl PhonemeTrack {
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.ids.iter().find(|&&id| id >= self.vocab_size) {
            return invalid("phoneme track", format!("id {bad} outside vocabulary of {}", self.vocab_size));
        }
        Ok(())
    }
}

/// Number of frames after converting `n` frames between rates.
pub fn resampled_frames(n: usize, from_rate_hz: f64, to_rate_hz: f64) -> usize {
    (n as f64 * to_rate_hz / from_rate_hz).round() as usize
}

fn check_rates(from_rate_hz: f64, to_rate_hz: f64) -> Result<()> {
    if !(from_rate_hz > 0.0) || !(to_rate_hz > 0.0) {
        return invalid("resample_track", format!("rates must be positive, got {from_rate_hz} -> {to_rate_hz}"));
    }
    Ok(())
}

/// Linear interpolation at output times `k / to_rate`. Times past the last
/// input frame hold its value.
pub fn interpolate_linear(x: &[f32], from_rate_hz: f64, to_rate_hz: f64) -> Result<Vec<f32>> {
    check_rates(from_rate_hz, to_rate_hz)?;
    if x.len() < 2 {
        return invalid("resample_track", "linear interpolation needs at least 2 frames");
    }
    if from_rate_hz == to_rate_hz {
        return Ok(x.to_vec());
    }
    let n_out = resampled_frames(x.len(), from_rate_hz, to_rate_hz);
    let last = (x.len() - 1) as f64;
    Ok((0..n_out)
        .map(|k| {
            let pos = (k as f64 * from_rate_hz / to_rate_hz).min(last);
            let i = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - i as f64;
            (f64::from(x[i]) * (1.0 - frac) + f64::from(x[i + 1]) * frac) as f32
        })
        .collect())
}

/// Nearest-frame selection at output times `k / to_rate`.
pub fn resample_nearest<T: Copy>(x: &[T], from_rate_hz: f64, to_rate_hz: f64) -> Result<Vec<T>> {
    check_rates(from_rate_hz, to_rate_hz)?;
    if x.is_empty() {
        return invalid("resample_track", "empty track");
    }
    let n_out = resampled_frames(x.len(), from_rate_hz, to_rate_hz);
    Ok((0..n_out)
        .map(|k| {
            let pos = (k as f64 * from_rate_hz / to_rate_hz).round() as usize;
            x[pos.min(x.len() - 1)]
        })
        .collect())
}

pub fn resample_track(track: &ArticulatoryTrack, to_rate_hz: f64) -> Result<ArticulatoryTrack> {
    track.validate()?;
    let from = track.frame_rate_hz;
    Ok(ArticulatoryTrack {
        utterance_id: track.utterance_id.clone(),
        frame_rate_hz: to_rate_hz,
        ema: track
            .ema
            .iter()
            .map(|s| interpolate_linear(s, from, to_rate_hz))
            .collect::<Result<_>>()?,
        pitch: interpolate_linear(&track.pitch, from, to_rate_hz)?,
        loudness: interpolate_linear(&track.loudness, from, to_rate_hz)?,
    })
}

pub fn resample_phonemes(track: &PhonemeTrack, from_rate_hz: f64, to_rate_hz: f64) -> Result<PhonemeTrack> {
    track.validate()?;
    Ok(PhonemeTrack {
        vocab_size: track.vocab_size,
        ids: resample_nearest(&track.ids, from_rate_hz, to_rate_hz)?,
    })
}

/// Common usable length of a prediction and its target.
pub fn align_lengths(pred_len: usize, target_len: usize) -> Result<usize> {
    if pred_len == 0 || target_len == 0 || pred_len.abs_diff(target_len) > MAX_LENGTH_GAP {
        return Err(CoreError::LengthGap {
            pred: pred_len,
            target: target_len,
        });
    }
    Ok(pred_len.min(target_len))
}
