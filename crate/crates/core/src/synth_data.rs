//! Synthetic EMG / articulatory corpus with a known channel-to-feature
//! dependency matrix.
//!
//! Every target dimension is driven by a standardized latent `z_f(t)`, a sum
//! of random sinusoids. Latents within one articulator group (upper lip,
//! lower lip and jaw, tongue, pitch, loudness) share a common source with
//! correlation `group_correlation`. EMG channel `c` is a band-limited noise
//! carrier whose amplitude envelope is
//!
//! ```text
//! env_c(t) = Σ_f W[c, f] · g(z_f(t)) + nuisance_gain · g(u_c(t)),   g(z) = softplus(z + 1)
//! ```
//!
//! where `u_c` is a channel-private latent unrelated to any target.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use emg2artic_nn::{derive_seed, seeded_rng, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{split_dir, write_json, write_raw, Split};
use crate::error::{invalid, CoreError, Result};
use crate::feature_targets::{
    ArticulatoryTrack, EmaLayout, PhonemeTrack, DEFAULT_PHONEME_VOCAB, EMA_DIMS, LOUDNESS_DIM, PITCH_DIM,
    SILENCE_ID, TARGET_DIMS,
};
use crate::signal_prep::{design_butterworth, Band, RawEmgRecording, EMG_CHANNELS};

pub const SINUSOIDS_PER_STREAM: usize = 6;
pub const MIN_FREQ_HZ: f64 = 0.5;
pub const MAX_FREQ_HZ: f64 = 8.0;
pub const CARRIER_LOW_HZ: f64 = 20.0;
pub const CARRIER_HIGH_HZ: f64 = 450.0;
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
/// Standardized loudness below this level is labelled silence.
const SILENCE_LEVEL: f64 = -1.0;

/// Articulator groups sharing a latent source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    UpperLip,
    LowerLipJaw,
    Tongue,
    Pitch,
    Loudness,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::UpperLip,
        FeatureGroup::LowerLipJaw,
        FeatureGroup::Tongue,
        FeatureGroup::Pitch,
        FeatureGroup::Loudness,
    ];

    pub fn of_dim(dim: usize) -> FeatureGroup {
        match dim {
            0 | 1 => FeatureGroup::UpperLip,
            2..=5 => FeatureGroup::LowerLipJaw,
            6..=11 => FeatureGroup::Tongue,
            PITCH_DIM => FeatureGroup::Pitch,
            _ => FeatureGroup::Loudness,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

pub fn target_dim_name(dim: usize) -> String {
    match dim {
        PITCH_DIM => "pitch".to_string(),
        LOUDNESS_DIM => "loudness".to_string(),
        d => EmaLayout::dim_name(d).unwrap_or_default(),
    }
}

/// Non-negative channel-to-target weights, one row per EMG channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DependencyMatrix {
    pub weights: Vec<[f64; TARGET_DIMS]>,
}

impl DependencyMatrix {
    pub fn n_channels(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return invalid("dependency", "no channels");
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("dependency", "weights must be finite and non-negative");
        }
        for d in 0..TARGET_DIMS {
            if self.weights.iter().all(|row| row[d] == 0.0) {
                return invalid("dependency", format!("target {} has no driving channel", target_dim_name(d)));
            }
        }
        Ok(())
    }

    /// Zero-based channel with the largest weight on target `dim`; ties go
    /// to the lower channel.
    pub fn driving_channel(&self, dim: usize) -> usize {
        let mut best = 0;
        for (c, row) in self.weights.iter().enumerate() {
            if row[dim] > self.weights[best][dim] {
                best = c;
            }
        }
        best
    }
}

/// Block-structured defaults. Channel ids below are one-based.
///
/// - channel 2: tongue (TT, TB, TD), plus lower lip and jaw at 0.4
/// - channel 3: tongue at 0.25
/// - channel 4: pitch and loudness
/// - channel 6: lower lip and jaw
/// - channel 7: upper lip
/// - channels 1, 5, 8: background 0.05 on everything
pub fn default_dependency() -> DependencyMatrix {
    let mut w = vec![[0.0; TARGET_DIMS]; EMG_CHANNELS];
    for d in 6..12 {
        w[1][d] = 1.0;
        w[2][d] = 0.25;
    }
    for d in 2..6 {
        w[1][d] = 0.4;
        w[5][d] = 1.0;
    }
    for d in 0..2 {
        w[6][d] = 1.5;
    }
    w[3][PITCH_DIM] = 1.0;
    w[3][LOUDNESS_DIM] = 4.0;
    for c in [0, 4, 7] {
        w[c] = [0.05; TARGET_DIMS];
    }
    DependencyMatrix { weights: w }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub emg_rate_hz: f64,
    pub target_rate_hz: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub dependency: DependencyMatrix,
    /// Correlation between each latent and its group source.
    pub group_correlation: f64,
    /// Gain of the channel-private envelope term.
    pub nuisance_gain: f64,
    pub phoneme_vocab: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 200,
            n_val: 20,
            n_test: 20,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            emg_rate_hz: 1000.0,
            target_rate_hz: 50.0,
            noise_std: 0.05,
            seed: 0,
            dependency: default_dependency(),
            group_correlation: 0.95,
            nuisance_gain: 1.0,
            phoneme_vocab: DEFAULT_PHONEME_VOCAB,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return invalid("synth", "every split needs at least one utterance");
        }
        if !(self.min_duration_s > 0.0) || self.max_duration_s < self.min_duration_s {
            return invalid("synth", "durations must be positive with min <= max");
        }
        if !(self.emg_rate_hz > 2.0 * CARRIER_HIGH_HZ) || !(self.target_rate_hz > 0.0) {
            return invalid("synth", format!("EMG rate must exceed {} Hz", 2.0 * CARRIER_HIGH_HZ));
        }
        if !(self.noise_std >= 0.0) || !(self.nuisance_gain >= 0.0) {
            return invalid("synth", "noise_std and nuisance_gain must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.group_correlation) {
            return invalid("synth", "group_correlation must lie in [0, 1]");
        }
        if self.phoneme_vocab < 2 {
            return invalid("synth", "phoneme vocabulary needs silence plus at least one class");
        }
        self.dependency.validate()
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn envelope_shape(z: f64) -> f64 {
    softplus(z + 1.0)
}

/// Pitch target in normalized units, within (-1, 1.5).
pub fn pitch_from_latent(z: f64) -> f64 {
    0.25 + 1.25 * (z / 2.0).tanh()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidSum {
    pub freqs_hz: Vec<f64>,
    pub phases: Vec<f64>,
    pub amps: Vec<f64>,
}

impl SinusoidSum {
    pub fn random(rng: &mut Rng) -> Self {
        let mut s = SinusoidSum {
            freqs_hz: Vec::with_capacity(SINUSOIDS_PER_STREAM),
            phases: Vec::with_capacity(SINUSOIDS_PER_STREAM),
            amps: Vec::with_capacity(SINUSOIDS_PER_STREAM),
        };
        for _ in 0..SINUSOIDS_PER_STREAM {
            s.freqs_hz.push(rng.random_range(MIN_FREQ_HZ..MAX_FREQ_HZ));
            s.phases.push(rng.random_range(0.0..2.0 * PI));
            s.amps.push(rng.random_range(0.5..1.5));
        }
        s
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.freqs_hz
            .iter()
            .zip(&self.phases)
            .zip(&self.amps)
            .map(|((f, p), a)| a * (2.0 * PI * f * t + p).sin())
            .sum()
    }
}

/// Analytic latent streams for one utterance, evaluable at any time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub group_sources: Vec<SinusoidSum>,
    pub own: Vec<SinusoidSum>,
    pub group_correlation: f64,
    /// Standardization constants measured on the target-rate grid.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentModel {
    fn raw(&self, dim: usize, t: f64) -> f64 {
        let rho = self.group_correlation;
        let source = &self.group_sources[FeatureGroup::of_dim(dim).index()];
        rho * source.eval(t) + (1.0 - rho * rho).sqrt() * self.own[dim].eval(t)
    }

    /// Standardized latent `dim` at time `t` seconds.
    pub fn z(&self, dim: usize, t: f64) -> f64 {
        (self.raw(dim, t) - self.mean[dim]) / self.std[dim]
    }
}

/// Latents sampled on the target grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectories {
    pub model: LatentModel,
    pub rate_hz: f64,
    /// Standardized latents, `[TARGET_DIMS][n]`.
    pub z: Vec<Vec<f64>>,
    /// Target streams: EMA = z, pitch through [`pitch_from_latent`],
    /// loudness through softplus.
    pub streams: Vec<Vec<f64>>,
}

impl LatentTrajectories {
    pub fn len(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean and population standard deviation.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn gen_latent_trajectories(duration_s: f64, rate_hz: f64, group_correlation: f64, seed: u64) -> Result<LatentTrajectories> {
    if !(duration_s > 0.0) || !(rate_hz > 0.0) {
        return invalid("gen_latent_trajectories", "duration and rate must be positive");
    }
    let n = (duration_s * rate_hz).round() as usize;
    if n < 2 {
        return invalid("gen_latent_trajectories", "fewer than two frames");
    }
    let mut rng = seeded_rng(seed);
    let group_sources: Vec<SinusoidSum> = FeatureGroup::ALL.iter().map(|_| SinusoidSum::random(&mut rng)).collect();
    let own: Vec<SinusoidSum> = (0..TARGET_DIMS).map(|_| SinusoidSum::random(&mut rng)).collect();
    let mut model = LatentModel {
        group_sources,
        own,
        group_correlation,
        mean: vec![0.0; TARGET_DIMS],
        std: vec![1.0; TARGET_DIMS],
    };
    let times: Vec<f64> = (0..n).map(|k| k as f64 / rate_hz).collect();
    for d in 0..TARGET_DIMS {
        let raw: Vec<f64> = times.iter().map(|&t| model.raw(d, t)).collect();
        let (m, s) = moments(&raw);
        model.mean[d] = m;
        model.std[d] = s.max(1e-12);
    }
    let z: Vec<Vec<f64>> = (0..TARGET_DIMS)
        .map(|d| times.iter().map(|&t| model.z(d, t)).collect())
        .collect();
    let streams = z
        .iter()
        .enumerate()
        .map(|(d, zs)| match d {
            PITCH_DIM => zs.iter().map(|&v| pitch_from_latent(v)).collect(),
            LOUDNESS_DIM => zs.iter().map(|&v| softplus(v)).collect(),
            _ => zs.clone(),
        })
        .collect();
    Ok(LatentTrajectories {
        model,
        rate_hz,
        z,
        streams,
    })
}

/// Unit-variance Gaussian noise band-limited to the EMG carrier band.
pub fn band_limited_noise(n: usize, rate_hz: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    design_butterworth(Band::Highpass, 4, CARRIER_LOW_HZ, rate_hz)?.filtfilt(&mut x);
    design_butterworth(Band::Lowpass, 4, CARRIER_HIGH_HZ, rate_hz)?.filtfilt(&mut x);
    let (_, sd) = moments(&x);
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v /= sd);
    }
    Ok(x)
}

/// Amplitude-modulated carriers, one row per dependency channel.
pub fn gen_emg_from_latent(
    latents: &LatentTrajectories,
    dependency: &DependencyMatrix,
    emg_rate_hz: f64,
    noise_std: f64,
    nuisance_gain: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    dependency.validate()?;
    let m = (latents.len() as f64 * emg_rate_hz / latents.rate_hz).round() as usize;
    let times: Vec<f64> = (0..m).map(|k| k as f64 / emg_rate_hz).collect();
    let g: Vec<Vec<f64>> = (0..TARGET_DIMS)
        .map(|d| times.iter().map(|&t| envelope_shape(latents.model.z(d, t))).collect())
        .collect();
    let mut rng = seeded_rng(seed);
    let mut channels = Vec::with_capacity(dependency.n_channels());
    for row in &dependency.weights {
        let private = SinusoidSum::random(&mut rng);
        let u: Vec<f64> = times.iter().map(|&t| private.eval(t)).collect();
        let (um, us) = moments(&u);
        let carrier = band_limited_noise(m, emg_rate_hz, &mut rng)?;
        let mut x = Vec::with_capacity(m);
        for k in 0..m {
            let mut env = nuisance_gain * envelope_shape((u[k] - um) / us.max(1e-12));
            for (d, w) in row.iter().enumerate() {
                if *w != 0.0 {
                    env += w * g[d][k];
                }
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            x.push(env * carrier[k] + noise_std * noise);
        }
        channels.push(x);
    }
    Ok(channels)
}

/// Frame labels: silence where loudness is low, otherwise the tongue-tip
/// latent quantized into `vocab - 1` bins over [-2.5, 2.5].
pub fn phonemes_from_latent(latents: &LatentTrajectories, vocab: usize) -> Vec<u32> {
    let bins = (vocab - 1) as f64;
    let tongue = &latents.z[EmaLayout::dim(crate::feature_targets::EmaSensor::TT, crate::feature_targets::Axis::X)];
    latents.z[LOUDNESS_DIM]
        .iter()
        .zip(tongue)
        .map(|(&loud, &z)| {
            if loud < SILENCE_LEVEL {
                SILENCE_ID
            } else {
                let b = ((z + 2.5) / 5.0 * bins).floor().clamp(0.0, bins - 1.0);
                1 + b as u32
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub recording: RawEmgRecording,
    pub targets: ArticulatoryTrack,
    pub phonemes: PhonemeTrack,
    pub record: UtteranceRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub n_target_frames: usize,
    pub latents: LatentModel,
}

pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

pub fn gen_utterance(cfg: &SynthConfig, split: Split, index: usize) -> Result<SynthUtterance> {
    let seed = utterance_seed(cfg.seed, index);
    let mut rng = seeded_rng(seed);
    let duration_s = if cfg.max_duration_s > cfg.min_duration_s {
        rng.random_range(cfg.min_duration_s..cfg.max_duration_s)
    } else {
        cfg.min_duration_s
    };
    let latents = gen_latent_trajectories(
        duration_s,
        cfg.target_rate_hz,
        cfg.group_correlation,
        derive_seed(seed, "latent"),
    )?;
    let emg = gen_emg_from_latent(
        &latents,
        &cfg.dependency,
        cfg.emg_rate_hz,
        cfg.noise_std,
        cfg.nuisance_gain,
        derive_seed(seed, "emg"),
    )?;
    let utterance_id = format!("{}_{index:04}", split.dir_name());
    let to_f32 = |s: &Vec<f64>| s.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    let targets = ArticulatoryTrack {
        utterance_id: utterance_id.clone(),
        frame_rate_hz: cfg.target_rate_hz,
        ema: latents.streams[..EMA_DIMS].iter().map(to_f32).collect(),
        pitch: to_f32(&latents.streams[PITCH_DIM]),
        loudness: to_f32(&latents.streams[LOUDNESS_DIM]),
    };
    let phonemes = PhonemeTrack {
        vocab_size: cfg.phoneme_vocab as u32,
        ids: phonemes_from_latent(&latents, cfg.phoneme_vocab),
    };
    let record = UtteranceRecord {
        utterance_id: utterance_id.clone(),
        split,
        index,
        seed,
        duration_s,
        n_target_frames: latents.len(),
        latents: latents.model.clone(),
    };
    Ok(SynthUtterance {
        recording: RawEmgRecording {
            utterance_id,
            sample_rate_hz: cfg.emg_rate_hz,
            samples: emg.iter().map(to_f32).collect(),
        },
        targets,
        phonemes,
        record,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: SynthConfig,
    pub target_names: Vec<String>,
    /// One-based channel id driving each target dimension.
    pub driving_channel: Vec<usize>,
    pub envelope: String,
    pub utterances: Vec<UtteranceRecord>,
}

impl GroundTruth {
    pub fn load(corpus: &Path) -> Result<GroundTruth> {
        crate::corpus::read_json(&corpus.join(GROUND_TRUTH_FILE))
    }

    /// One-based driving channel of target `dim`.
    pub fn driver(&self, dim: usize) -> usize {
        self.driving_channel[dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub counts: [usize; 3],
    pub total_duration_s: f64,
}

/// Splits in order train, val, test with global utterance indices.
pub fn split_plan(cfg: &SynthConfig) -> Vec<(Split, usize)> {
    let mut plan = Vec::with_capacity(cfg.n_total());
    let mut index = 0;
    for (split, count) in [(Split::Train, cfg.n_train), (Split::Val, cfg.n_val), (Split::Test, cfg.n_test)] {
        for _ in 0..count {
            plan.push((split, index));
            index += 1;
        }
    }
    plan
}

/// Writes the three splits and `ground_truth.json` under `out_dir`. The
/// parent of `out_dir` must exist.
pub fn gen_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<CorpusSummary> {
    cfg.validate()?;
    if !out_dir.is_dir() {
        fs::create_dir(out_dir).map_err(|source| CoreError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
    }
    let mut records = Vec::with_capacity(cfg.n_total());
    let mut summary = CorpusSummary {
        counts: [0; 3],
        total_duration_s: 0.0,
    };
    for (split, index) in split_plan(cfg) {
        let utt = gen_utterance(cfg, split, index)?;
        let dir = split_dir(out_dir, split).join(&utt.record.utterance_id);
        write_raw(&dir, &utt.recording, &utt.targets, &utt.phonemes)?;
        summary.counts[split as usize] += 1;
        summary.total_duration_s += utt.recording.n_samples() as f64 / cfg.emg_rate_hz;
        log::debug!("wrote {}", dir.display());
        records.push(utt.record);
    }
    let truth = GroundTruth {
        seed: cfg.seed,
        config: cfg.clone(),
        target_names: (0..TARGET_DIMS).map(target_dim_name).collect(),
        driving_channel: (0..TARGET_DIMS).map(|d| cfg.dependency.driving_channel(d) + 1).collect(),
        envelope: "softplus(z + 1)".to_string(),
        utterances: records,
    };
    write_json(&out_dir.join(GROUND_TRUTH_FILE), &truth)?;
    Ok(summary)
}
