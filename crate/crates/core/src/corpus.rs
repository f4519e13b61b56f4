//! On-disk corpus layout.
//!
//! ```text
//! <corpus>/ground_truth.json
//! <corpus>/<split>/<utterance>/emg.f32          channel-major f32 LE
//!                              meta.json
//!                              targets.f32      frame-major rows of 14
//!                              phonemes.json
//!                              emg_prep.f32     written by preprocessing
//!                              meta_prep.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::feature_targets::{
    resample_nearest, resample_track, ArticulatoryTrack, PhonemeTrack, TARGET_DIMS, TARGET_FRAME_RATE_HZ,
};
use crate::signal_prep::{PreprocessedEmg, RawEmgRecording};

pub const EMG_FILE: &str = "emg.f32";
pub const META_FILE: &str = "meta.json";
pub const TARGETS_FILE: &str = "targets.f32";
pub const PHONEMES_FILE: &str = "phonemes.json";
pub const EMG_PREP_FILE: &str = "emg_prep.f32";
pub const META_PREP_FILE: &str = "meta_prep.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceMeta {
    pub utterance_id: String,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_frame_rate_hz: Option<f64>,
}

fn io_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corpus_err(path: &Path, detail: impl Into<String>) -> CoreError {
    CoreError::Corpus {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CoreError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| CoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(corpus_err(path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_channels(path: &Path, n_channels: usize, n_samples: usize) -> Result<Vec<Vec<f32>>> {
    let flat = read_f32(path)?;
    if n_channels == 0 || n_samples == 0 || flat.len() != n_channels * n_samples {
        return Err(corpus_err(
            path,
            format!("{} values, expected {n_channels} x {n_samples}", flat.len()),
        ));
    }
    Ok(flat.chunks_exact(n_samples).map(<[f32]>::to_vec).collect())
}

pub fn split_dir(corpus: &Path, split: Split) -> PathBuf {
    corpus.join(split.dir_name())
}

/// Utterance directories of one split, sorted by name.
pub fn list_utterances(corpus: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let dir = split_dir(corpus, split);
    let entries = fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(&dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_raw(dir: &Path, rec: &RawEmgRecording, targets: &ArticulatoryTrack, phonemes: &PhonemeTrack) -> Result<()> {
    rec.validate()?;
    targets.validate()?;
    phonemes.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let flat: Vec<f32> = rec.samples.concat();
    write_f32(&dir.join(EMG_FILE), &flat)?;
    write_json(
        &dir.join(META_FILE),
        &UtteranceMeta {
            utterance_id: rec.utterance_id.clone(),
            n_channels: rec.n_channels(),
            sample_rate_hz: rec.sample_rate_hz,
            n_samples: rec.n_samples(),
            target_frame_rate_hz: Some(targets.frame_rate_hz),
        },
    )?;
    write_f32(&dir.join(TARGETS_FILE), &targets.to_rows())?;
    write_json(&dir.join(PHONEMES_FILE), phonemes)
}

pub fn read_meta(dir: &Path) -> Result<UtteranceMeta> {
    read_json(&dir.join(META_FILE))
}

pub fn read_raw(dir: &Path) -> Result<RawEmgRecording> {
    let meta = read_meta(dir)?;
    let rec = RawEmgRecording {
        samples: read_channels(&dir.join(EMG_FILE), meta.n_channels, meta.n_samples)?,
        utterance_id: meta.utterance_id,
        sample_rate_hz: meta.sample_rate_hz,
    };
    rec.validate().map_err(|e| corpus_err(dir, e.to_string()))?;
    Ok(rec)
}

pub fn is_preprocessed(dir: &Path) -> bool {
    dir.join(EMG_PREP_FILE).is_file() && dir.join(META_PREP_FILE).is_file()
}

pub fn write_prep(dir: &Path, prep: &PreprocessedEmg) -> Result<()> {
    let meta = read_meta(dir)?;
    let n_samples = prep.samples.first().map_or(0, Vec::len);
    write_f32(&dir.join(EMG_PREP_FILE), &prep.samples.concat())?;
    write_json(
        &dir.join(META_PREP_FILE),
        &UtteranceMeta {
            utterance_id: prep.source_id.clone(),
            n_channels: prep.samples.len(),
            sample_rate_hz: prep.sample_rate_hz,
            n_samples,
            target_frame_rate_hz: meta.target_frame_rate_hz,
        },
    )
}

pub fn read_prep(dir: &Path) -> Result<PreprocessedEmg> {
    let meta: UtteranceMeta = read_json(&dir.join(META_PREP_FILE))?;
    Ok(PreprocessedEmg {
        samples: read_channels(&dir.join(EMG_PREP_FILE), meta.n_channels, meta.n_samples)?,
        source_id: meta.utterance_id,
        sample_rate_hz: meta.sample_rate_hz,
    })
}

pub fn read_targets(dir: &Path) -> Result<(ArticulatoryTrack, PhonemeTrack)> {
    let meta = read_meta(dir)?;
    let rate = meta
        .target_frame_rate_hz
        .ok_or_else(|| corpus_err(dir, "meta.json lacks target_frame_rate_hz"))?;
    let track = ArticulatoryTrack::from_rows(&meta.utterance_id, rate, &read_f32(&dir.join(TARGETS_FILE))?)?;
    let phonemes: PhonemeTrack = read_json(&dir.join(PHONEMES_FILE))?;
    phonemes.validate()?;
    if phonemes.ids.len() != track.len() {
        return Err(corpus_err(dir, "phoneme and target frame counts differ"));
    }
    Ok((track, phonemes))
}

/// Checks that a raw utterance directory is complete and self-consistent.
pub fn validate_utterance(dir: &Path) -> Result<()> {
    read_raw(dir)?;
    read_targets(dir)?;
    Ok(())
}

/// A preprocessed utterance paired with targets at the encoder frame rate,
/// laid out for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub n_channels: usize,
    /// Frame-major `[emg_len, n_channels]`.
    pub emg: Vec<f64>,
    pub emg_len: usize,
    /// Frame-major `[n_frames, TARGET_DIMS]`.
    pub targets: Vec<f64>,
    pub n_frames: usize,
    pub phonemes: Vec<usize>,
}

impl Utterance {
    pub fn from_parts(prep: &PreprocessedEmg, track: &ArticulatoryTrack, phonemes: &PhonemeTrack) -> Result<Self> {
        let ids = resample_nearest(&phonemes.ids, track.frame_rate_hz, TARGET_FRAME_RATE_HZ)?;
        let track = resample_track(track, TARGET_FRAME_RATE_HZ)?;
        let n_channels = prep.samples.len();
        let emg_len = prep.samples.first().map_or(0, Vec::len);
        let mut emg = Vec::with_capacity(emg_len * n_channels);
        for t in 0..emg_len {
            emg.extend(prep.samples.iter().map(|c| f64::from(c[t])));
        }
        let n_frames = track.len();
        let targets = track.to_rows().into_iter().map(f64::from).collect();
        Ok(Utterance {
            id: prep.source_id.clone(),
            n_channels,
            emg,
            emg_len,
            targets,
            n_frames,
            phonemes: ids.into_iter().map(|v| v as usize).collect(),
        })
    }

    /// Keeps only the given zero-based channels, in the order listed.
    pub fn select_channels(&self, channels: &[usize]) -> Utterance {
        let mut emg = Vec::with_capacity(self.emg_len * channels.len());
        for t in 0..self.emg_len {
            let row = &self.emg[t * self.n_channels..(t + 1) * self.n_channels];
            emg.extend(channels.iter().map(|&c| row[c]));
        }
        Utterance {
            n_channels: channels.len(),
            emg,
            ..self.clone()
        }
    }

    /// Loads every preprocessed utterance of a split, in name order.
    pub fn load_split(corpus: &Path, split: Split) -> Result<Vec<Utterance>> {
        list_utterances(corpus, split)?
            .iter()
            .map(|dir| {
                if !is_preprocessed(dir) {
                    return Err(corpus_err(dir, "not preprocessed"));
                }
                let prep = read_prep(dir)?;
                let (track, phonemes) = read_targets(dir)?;
                Utterance::from_parts(&prep, &track, &phonemes)
            })
            .collect()
    }

    pub fn target(&self, frame: usize, dim: usize) -> f64 {
        self.targets[frame * TARGET_DIMS + dim]
    }
}
