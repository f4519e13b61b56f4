//! Electrode-contribution sweeps: remove-one, use-only-one and fixed
//! subsets, each retrained from a condition-specific seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use emg2artic_nn::derive_seed;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_json, Utterance};
use crate::error::{invalid, CoreError, Result};
use crate::eval_metrics::{drop_rate, evaluate, CorrelationReport, LOUDNESS_ROW, PITCH_ROW};
use crate::feature_targets::EmaSensor;
use crate::model::{EncoderConfig, LossWeights};
use crate::trainer::{train, write_run, TrainConfig};

pub const N_ELECTRODES: usize = 8;
pub const REPORT_FILE: &str = "ablation_report.json";
pub const DEFAULT_SUBSET_SIZE: usize = 4;

/// Sorted, duplicate-free 1-based electrode ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ElectrodeSet(Vec<usize>);

impl ElectrodeSet {
    pub fn new(ids: &[usize], n_channels: usize) -> Result<Self> {
        if ids.is_empty() {
            return invalid("electrode set", "empty set");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i == 0 || i > n_channels) {
            return invalid("electrode set", format!("electrode {bad} outside 1..={n_channels}"));
        }
        let mut v = ids.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.len() != ids.len() {
            return invalid("electrode set", "duplicate electrode id");
        }
        Ok(ElectrodeSet(v))
    }

    pub fn all(n_channels: usize) -> Self {
        ElectrodeSet((1..=n_channels).collect())
    }

    /// Parses `"2,4,6"`.
    pub fn parse(s: &str, n_channels: usize) -> Result<Self> {
        let ids = s
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| CoreError::InvalidArgument {
                    op: "electrode set",
                    detail: format!("not an electrode id: {p:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ElectrodeSet::new(&ids, n_channels)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based channel indices.
    pub fn channels(&self) -> Vec<usize> {
        self.0.iter().map(|i| i - 1).collect()
    }
}

impl TryFrom<Vec<usize>> for ElectrodeSet {
    type Error = CoreError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        ElectrodeSet::new(&v, N_ELECTRODES)
    }
}

impl From<ElectrodeSet> for Vec<usize> {
    fn from(s: ElectrodeSet) -> Self {
        s.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Remove,
    UseOnly,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Remove => "remove",
            Family::UseOnly => "useonly",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationCondition {
    Full,
    RemoveOne(usize),
    UseOnlyOne(usize),
    Subset(ElectrodeSet),
}

impl AblationCondition {
    pub fn electrodes(&self, n_channels: usize) -> Result<ElectrodeSet> {
        match self {
            AblationCondition::Full => Ok(ElectrodeSet::all(n_channels)),
            AblationCondition::RemoveOne(id) => {
                ElectrodeSet::new(&[*id], n_channels)?;
                ElectrodeSet::new(&(1..=n_channels).filter(|i| i != id).collect::<Vec<_>>(), n_channels)
            }
            AblationCondition::UseOnlyOne(id) => ElectrodeSet::new(&[*id], n_channels),
            AblationCondition::Subset(set) => ElectrodeSet::new(set.ids(), n_channels),
        }
    }

    /// Stable identifier, also the seed tag and directory name.
    pub fn tag(&self) -> String {
        match self {
            AblationCondition::Full => "full".into(),
            AblationCondition::RemoveOne(i) => format!("remove-{i}"),
            AblationCondition::UseOnlyOne(i) => format!("useonly-{i}"),
            AblationCondition::Subset(s) => {
                let ids: Vec<String> = s.ids().iter().map(usize::to_string).collect();
                format!("subset-{}", ids.join("-"))
            }
        }
    }

    pub fn family_dir(&self) -> &'static str {
        match self {
            AblationCondition::Full => "full",
            AblationCondition::RemoveOne(_) => Family::Remove.name(),
            AblationCondition::UseOnlyOne(_) => Family::UseOnly.name(),
            AblationCondition::Subset(_) => "subset",
        }
    }

    /// `seed ⊕ hash(tag)`.
    pub fn seed(&self, seed: u64) -> u64 {
        derive_seed(seed, &self.tag())
    }
}

/// Channel view keeping only the members of `set`, in ascending id order.
pub fn mask_electrodes(utts: &[Utterance], set: &ElectrodeSet) -> Result<Vec<Utterance>> {
    utts.iter()
        .map(|u| {
            if set.ids().last().is_some_and(|&m| m > u.n_channels) {
                return invalid("mask_electrodes", format!("{} has {} channels", u.id, u.n_channels));
            }
            Ok(u.select_channels(&set.channels()))
        })
        .collect()
}

pub struct CorpusSplits {
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl CorpusSplits {
    pub fn n_channels(&self) -> usize {
        self.train.first().map_or(0, |u| u.n_channels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: AblationCondition,
    pub tag: String,
    pub electrodes: ElectrodeSet,
    pub seed: u64,
    pub best_epoch: usize,
    pub report: CorrelationReport,
}

/// Trains a fresh model on the masked corpus and evaluates its best
/// checkpoint on the masked test split. With `out_dir`, the run is also
/// written to `out_dir/<family>/<tag>/`.
pub fn run_condition(
    splits: &CorpusSplits,
    condition: &AblationCondition,
    model_cfg: &EncoderConfig,
    weights: &LossWeights,
    train_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<ConditionResult> {
    let set = condition.electrodes(splits.n_channels())?;
    let seed = condition.seed(train_cfg.seed);
    let tr = mask_electrodes(&splits.train, &set)?;
    let va = mask_electrodes(&splits.val, &set)?;
    let te = mask_electrodes(&splits.test, &set)?;
    let cfg = EncoderConfig {
        n_emg_channels: set.len(),
        ..model_cfg.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let outcome = train(&tr, &va, &cfg, weights, &tcfg)?;
    let report = evaluate(&outcome.best_model, &te, seed)?;
    if let Some(dir) = out_dir {
        let dir = condition_dir(dir, condition);
        write_run(&dir, &outcome, weights, &tcfg)?;
        report.write_to(&dir)?;
    }
    Ok(ConditionResult {
        tag: condition.tag(),
        condition: condition.clone(),
        electrodes: set,
        seed,
        best_epoch: outcome.best_epoch,
        report,
    })
}

pub fn condition_dir(root: &Path, condition: &AblationCondition) -> PathBuf {
    root.join(condition.family_dir()).join(condition.tag())
}

/// Runs every condition on up to `workers` threads; results keep the
/// input order.
pub fn run_conditions(
    splits: &CorpusSplits,
    conditions: &[AblationCondition],
    model_cfg: &EncoderConfig,
    weights: &LossWeights,
    train_cfg: &TrainConfig,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<ConditionResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ConditionResult>>>> = Mutex::new((0..conditions.len()).map(|_| None).collect());
    let workers = workers.clamp(1, conditions.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cond) = conditions.get(i) else { break };
                log::info!("run {}/{}: {}", i + 1, conditions.len(), cond.tag());
                let res = run_condition(splits, cond, model_cfg, weights, train_cfg, out_dir);
                if let Ok(r) = &res {
                    log::info!(
                        "{}: EMA {:.3} loudness {:.3} pitch {:.3}",
                        r.tag,
                        r.report.ema_mean(),
                        r.report.loudness(),
                        r.report.pitch()
                    );
                }
                slots.lock().expect("result slots")[i] = Some(res);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every condition ran"))
        .collect()
}

/// Drop rates of one condition family relative to the full set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub family: Family,
    pub electrodes: Vec<usize>,
    pub sensors: Vec<String>,
    /// `drop[e][s]` for electrode `electrodes[e]` and sensor `sensors[s]`.
    pub drop: Vec<[f64; 6]>,
    pub pitch: Vec<f64>,
    pub loudness: Vec<f64>,
}

/// Per-electrode condition of `family`.
fn family_condition(family: Family, id: usize) -> AblationCondition {
    match family {
        Family::Remove => AblationCondition::RemoveOne(id),
        Family::UseOnly => AblationCondition::UseOnlyOne(id),
    }
}

impl Heatmap {
    /// Association strength: a large drop when an electrode is removed,
    /// or a small drop when it is used alone.
    pub fn association(&self, value: f64) -> f64 {
        match self.family {
            Family::Remove => value,
            Family::UseOnly => -value,
        }
    }

    fn argmax(&self, column: impl Fn(usize) -> f64) -> usize {
        let mut best = 0;
        for e in 1..self.electrodes.len() {
            if self.association(column(e)) > self.association(column(best)) {
                best = e;
            }
        }
        self.electrodes[best]
    }

    /// Electrode with the strongest association to `sensor`.
    pub fn strongest_for_sensor(&self, sensor: EmaSensor) -> usize {
        self.argmax(|e| self.drop[e][sensor.index()])
    }

    pub fn strongest_for_loudness(&self) -> usize {
        self.argmax(|e| self.loudness[e])
    }

    pub fn strongest_for_pitch(&self) -> usize {
        self.argmax(|e| self.pitch[e])
    }

    /// Drop rates as CSV: header of sensor names, one row per electrode.
    pub fn to_csv(&self) -> String {
        let mut s = self.sensors.join(",");
        s.push('\n');
        for row in &self.drop {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

pub fn build_heatmap(full: &CorrelationReport, family: Family, results: &[ConditionResult]) -> Result<Heatmap> {
    let mut drop = Vec::with_capacity(N_ELECTRODES);
    let mut pitch = Vec::with_capacity(N_ELECTRODES);
    let mut loudness = Vec::with_capacity(N_ELECTRODES);
    for id in 1..=N_ELECTRODES {
        let want = family_condition(family, id);
        let Some(r) = results.iter().find(|r| r.condition == want) else {
            return invalid("build_heatmap", format!("missing condition {}", want.tag()));
        };
        let mut row = [0.0; 6];
        for (cell, s) in row.iter_mut().zip(EmaSensor::ALL) {
            *cell = drop_rate(full.sensor(s), r.report.sensor(s))?;
        }
        drop.push(row);
        pitch.push(drop_rate(full.pitch(), r.report.pitch())?);
        loudness.push(drop_rate(full.loudness(), r.report.loudness())?);
    }
    Ok(Heatmap {
        family,
        electrodes: (1..=N_ELECTRODES).collect(),
        sensors: EmaSensor::ALL.iter().map(|s| s.name().to_string()).collect(),
        drop,
        pitch,
        loudness,
    })
}

/// Feature groups used for subset selection: six sensors, pitch, loudness.
pub fn feature_groups() -> Vec<String> {
    let mut g: Vec<String> = EmaSensor::ALL.iter().map(|s| s.name().to_string()).collect();
    g.push(PITCH_ROW.into());
    g.push(LOUDNESS_ROW.into());
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetPick {
    pub electrode: usize,
    /// Feature groups this pick is the top-scoring remaining electrode for.
    pub covers: Vec<String>,
    /// Maximum use-only-one correlation over feature groups.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub k: usize,
    pub set: ElectrodeSet,
    pub picks: Vec<SubsetPick>,
}

/// Greedy coverage selection from use-only-one reports.
///
/// Each pick is the top remaining electrode for at least one uncovered
/// feature group; among such candidates the one covering the most groups
/// wins, then the higher mean score, then the lower id. Coverage resets
/// once every group is covered.
pub fn select_subset(results: &[ConditionResult], k: usize) -> Result<SubsetSelection> {
    if k == 0 || k > N_ELECTRODES {
        return invalid("select_subset", format!("k={k} outside 1..={N_ELECTRODES}"));
    }
    let groups = feature_groups();
    let mut scores = Vec::with_capacity(N_ELECTRODES);
    for id in 1..=N_ELECTRODES {
        let want = AblationCondition::UseOnlyOne(id);
        let Some(r) = results.iter().find(|r| r.condition == want) else {
            return invalid("select_subset", format!("missing condition {}", want.tag()));
        };
        scores.push(groups.iter().map(|g| r.report.r(g)).collect::<Vec<f64>>());
    }
    let mean_score = |e: usize| scores[e].iter().sum::<f64>() / groups.len() as f64;
    let max_score = |e: usize| scores[e].iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut remaining: Vec<usize> = (0..N_ELECTRODES).collect();
    let mut uncovered: Vec<usize> = (0..groups.len()).collect();
    let mut picks = Vec::with_capacity(k);
    while picks.len() < k {
        if uncovered.is_empty() {
            uncovered = (0..groups.len()).collect();
        }
        let mut tops: Vec<(usize, Vec<usize>)> = Vec::new();
        for &g in &uncovered {
            let top = remaining
                .iter()
                .copied()
                .fold(None, |best: Option<usize>, e| match best {
                    Some(b) if scores[b][g] >= scores[e][g] => Some(b),
                    _ => Some(e),
                })
                .expect("electrodes remain");
            match tops.iter_mut().find(|(e, _)| *e == top) {
                Some((_, gs)) => gs.push(g),
                None => tops.push((top, vec![g])),
            }
        }
        tops.sort_by(|(a, ga), (b, gb)| {
            gb.len()
                .cmp(&ga.len())
                .then(mean_score(*b).total_cmp(&mean_score(*a)))
                .then(a.cmp(b))
        });
        let (e, covered) = tops.swap_remove(0);
        uncovered.retain(|g| !covered.contains(g));
        remaining.retain(|&r| r != e);
        picks.push(SubsetPick {
            electrode: e + 1,
            covers: covered.iter().map(|&g| groups[g].clone()).collect(),
            score: max_score(e),
        });
    }
    let ids: Vec<usize> = picks.iter().map(|p| p.electrode).collect();
    Ok(SubsetSelection {
        k,
        set: ElectrodeSet::new(&ids, N_ELECTRODES)?,
        picks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub model: EncoderConfig,
    pub loss_weights: LossWeights,
    pub train: TrainConfig,
    pub conditions: Vec<ConditionResult>,
    pub heatmaps: Vec<Heatmap>,
    pub subset: Option<SubsetSelection>,
}

impl AblationReport {
    pub fn heatmap(&self, family: Family) -> Option<&Heatmap> {
        self.heatmaps.iter().find(|h| h.family == family)
    }

    pub fn condition(&self, tag: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.tag == tag)
    }
}

/// Sweep plan: the full set, every requested family, then explicit subsets.
pub fn plan_conditions(families: &[Family], subsets: &[ElectrodeSet]) -> Vec<AblationCondition> {
    let mut plan = Vec::new();
    if !families.is_empty() {
        plan.push(AblationCondition::Full);
    }
    for &f in families {
        plan.extend((1..=N_ELECTRODES).map(|id| family_condition(f, id)));
    }
    plan.extend(subsets.iter().cloned().map(AblationCondition::Subset));
    plan
}

/// Runs the planned conditions and assembles heatmaps and, when the
/// use-only family ran, a subset selection of `subset_k` electrodes.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    splits: &CorpusSplits,
    families: &[Family],
    subsets: &[ElectrodeSet],
    model_cfg: &EncoderConfig,
    weights: &LossWeights,
    train_cfg: &TrainConfig,
    workers: usize,
    subset_k: usize,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if splits.n_channels() != N_ELECTRODES {
        return invalid(
            "ablation",
            format!("corpus has {} channels, sweeps need {N_ELECTRODES}", splits.n_channels()),
        );
    }
    let plan = plan_conditions(families, subsets);
    if plan.is_empty() {
        return invalid("ablation", "nothing to run");
    }
    let conditions = run_conditions(splits, &plan, model_cfg, weights, train_cfg, workers, out_dir)?;
    let mut heatmaps = Vec::new();
    if let Some(full) = conditions.iter().find(|c| c.condition == AblationCondition::Full) {
        for &f in families {
            heatmaps.push(build_heatmap(&full.report, f, &conditions)?);
        }
    }
    let subset = if families.contains(&Family::UseOnly) {
        Some(select_subset(&conditions, subset_k)?)
    } else {
        None
    };
    Ok(AblationReport {
        seed: train_cfg.seed,
        model: model_cfg.clone(),
        loss_weights: *weights,
        train: train_cfg.clone(),
        conditions,
        heatmaps,
        subset,
    })
}

/// Writes `ablation_report.json` and `heatmap_<family>.csv`/`.svg`.
pub fn write_report(dir: &Path, report: &AblationReport) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)?;
    for h in &report.heatmaps {
        let stem = dir.join(format!("heatmap_{}", h.family.name()));
        write_text(&stem.with_extension("csv"), &h.to_csv())?;
        write_text(&stem.with_extension("svg"), &crate::figures::heatmap_svg(h))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}
