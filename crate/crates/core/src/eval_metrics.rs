//! Pearson correlation between predicted and reference articulatory
//! features, percentile-bootstrap intervals and correlation drop rates.

use std::fmt::Write as _;
use std::path::Path;

use emg2artic_nn::{derive_seed, seeded_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, Utterance};
use crate::error::{invalid, CoreError, Result};
use crate::feature_targets::{align_lengths, EmaLayout, EmaSensor, EMA_DIMS, LOUDNESS_DIM, PITCH_DIM, TARGET_DIMS};
use crate::model::{Model, ModelOutput};

pub const CI_LEVEL: f64 = 0.95;
pub const N_RESAMPLES: usize = 1000;
pub const REPORT_JSON: &str = "correlation_report.json";
pub const REPORT_CSV: &str = "correlation_report.csv";
pub const CSV_HEADER: &str = "name,r,ci_low,ci_high,n";

pub const EMA_MEAN_ROW: &str = "EMA";
pub const LOUDNESS_ROW: &str = "loudness";
pub const PITCH_ROW: &str = "pitch";

/// Product-moment correlation in binary64.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return invalid("pearson", format!("length mismatch {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return invalid("pearson", "need at least two samples");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `(r_full − r_cond) / r_full`, unclamped.
pub fn drop_rate(r_full: f64, r_cond: f64) -> Result<f64> {
    if r_full == 0.0 || !r_full.is_finite() || !r_cond.is_finite() {
        return invalid("drop_rate", format!("r_full={r_full}, r_cond={r_cond}"));
    }
    Ok((r_full - r_cond) / r_full)
}

/// Mean taken around the first value, exact for constant input.
fn mean(v: &[f64]) -> f64 {
    let a = v[0];
    a + v.iter().map(|x| x - a).sum::<f64>() / v.len() as f64
}

/// Percentile bootstrap of the mean over `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return invalid("bootstrap_ci", "need at least two values");
    }
    if !(level > 0.0 && level < 1.0) || n_resamples == 0 {
        return invalid("bootstrap_ci", format!("level {level}, {n_resamples} resamples"));
    }
    let mut rng = seeded_rng(seed);
    let n = values.len();
    let mut sample = vec![0.0; n];
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = values[rng.random_range(0..n)];
            }
            mean(&sample)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * n_resamples as f64).floor() as usize).min(n_resamples - 1)];
    Ok((at(tail), at(1.0 - tail)))
}

/// Row names in report order: 12 EMA dims, 6 sensor means, EMA mean,
/// loudness, pitch.
pub fn row_names() -> Vec<String> {
    let mut names: Vec<String> = (0..EMA_DIMS).filter_map(EmaLayout::dim_name).collect();
    names.extend(EmaSensor::ALL.iter().map(|s| s.name().to_string()));
    names.extend([EMA_MEAN_ROW, LOUDNESS_ROW, PITCH_ROW].map(String::from));
    names
}

/// Per-dimension correlation for one utterance; `None` where undefined.
pub fn utterance_correlations(out: &ModelOutput, utt: &Utterance) -> Result<[Option<f64>; TARGET_DIMS]> {
    let n = align_lengths(out.n_frames, utt.n_frames)?;
    let mut r = [None; TARGET_DIMS];
    for (d, slot) in r.iter_mut().enumerate() {
        let pred: Vec<f64> = (0..n).map(|f| out.value(f, d)).collect();
        let target: Vec<f64> = (0..n).map(|f| utt.target(f, d)).collect();
        *slot = match pearson(&pred, &target) {
            Ok(v) => Some(v),
            Err(CoreError::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(r)
}

/// Per-utterance values for every report row.
fn row_values(per_dim: &[Option<f64>; TARGET_DIMS]) -> Vec<Option<f64>> {
    let mut rows: Vec<Option<f64>> = per_dim[..EMA_DIMS].to_vec();
    let all = |dims: &[usize]| -> Option<f64> {
        let v: Option<Vec<f64>> = dims.iter().map(|&d| per_dim[d]).collect();
        v.map(|v| mean(&v))
    };
    for s in EmaSensor::ALL {
        rows.push(all(&s.dims()));
    }
    rows.push(all(&(0..EMA_DIMS).collect::<Vec<_>>()));
    rows.push(per_dim[LOUDNESS_DIM]);
    rows.push(per_dim[PITCH_DIM]);
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub name: String,
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Utterances with a defined correlation.
    pub n: usize,
    /// Utterances skipped because a signal was constant.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationReport {
    pub n_utterances: usize,
    pub ci_level: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl CorrelationReport {
    pub fn get(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn r(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |row| row.r)
    }

    pub fn ema_mean(&self) -> f64 {
        self.r(EMA_MEAN_ROW)
    }

    pub fn loudness(&self) -> f64 {
        self.r(LOUDNESS_ROW)
    }

    pub fn pitch(&self) -> f64 {
        self.r(PITCH_ROW)
    }

    pub fn sensor(&self, s: EmaSensor) -> f64 {
        self.r(s.name())
    }

    /// Aggregates per-utterance correlation vectors.
    pub fn from_utterances(per_utt: &[[Option<f64>; TARGET_DIMS]], seed: u64) -> Result<Self> {
        if per_utt.is_empty() {
            return invalid("evaluate", "no utterances");
        }
        let values: Vec<Vec<Option<f64>>> = per_utt.iter().map(row_values).collect();
        let rows = row_names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let defined: Vec<f64> = values.iter().filter_map(|v| v[i]).collect();
                if defined.is_empty() {
                    return invalid("evaluate", format!("no defined correlation for {name}"));
                }
                let r = mean(&defined);
                let (ci_low, ci_high) = if defined.len() < 2 {
                    (r, r)
                } else {
                    bootstrap_ci(&defined, CI_LEVEL, N_RESAMPLES, derive_seed(seed, &name))?
                };
                Ok(ReportRow {
                    r,
                    ci_low,
                    ci_high,
                    n: defined.len(),
                    skipped: per_utt.len() - defined.len(),
                    name,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CorrelationReport {
            n_utterances: per_utt.len(),
            ci_level: CI_LEVEL,
            n_resamples: N_RESAMPLES,
            seed,
            rows,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for row in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", row.name, row.r, row.ci_low, row.ci_high, row.n);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes both report files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        self.write_json(&dir.join(REPORT_JSON))?;
        self.write_csv(&dir.join(REPORT_CSV))
    }
}

/// Correlation report for arbitrary per-utterance predictions.
pub fn evaluate_with<F>(utts: &[Utterance], seed: u64, mut predict: F) -> Result<CorrelationReport>
where
    F: FnMut(&Utterance) -> Result<ModelOutput>,
{
    let per_utt = utts
        .iter()
        .map(|u| utterance_correlations(&predict(u)?, u))
        .collect::<Result<Vec<_>>>()?;
    CorrelationReport::from_utterances(&per_utt, seed)
}

pub fn evaluate(model: &Model, utts: &[Utterance], seed: u64) -> Result<CorrelationReport> {
    evaluate_with(utts, seed, |u| model.predict(u))
}

/// Predictions equal to the reference targets.
pub fn oracle_output(utt: &Utterance) -> ModelOutput {
    let n = utt.n_frames;
    ModelOutput {
        n_frames: n,
        ema: (0..n).flat_map(|f| (0..EMA_DIMS).map(move |d| utt.target(f, d))).collect(),
        pitch: (0..n).map(|f| utt.target(f, PITCH_DIM)).collect(),
        loudness: (0..n).map(|f| utt.target(f, LOUDNESS_DIM)).collect(),
        phoneme_logits: Vec::new(),
        vocab: 0,
    }
}
