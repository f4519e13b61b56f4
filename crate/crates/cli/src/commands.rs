use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emg2artic_core::ablation::{self, CorpusSplits, ElectrodeSet, Family, N_ELECTRODES};
use emg2artic_core::corpus::{self, Split, Utterance};
use emg2artic_core::eval_metrics::{evaluate, evaluate_with, oracle_output, CorrelationReport};
use emg2artic_core::model::Model;
use emg2artic_core::signal_prep::preprocess_recording;
use emg2artic_core::synth_data::gen_corpus;
use emg2artic_core::trainer::{self, BEST_DIR, FINAL_DIR};

use crate::config::ConfigFile;
use crate::manifest::Recorder;
use crate::{CheckpointArg, Cli, Command, FamilyArg, SplitArg};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth => synth(cli, &cfg),
        Command::Preprocess { corpus } => preprocess(cli, &cfg, corpus),
        Command::Train {
            corpus,
            epochs,
            batch_size,
        } => train(cli, &cfg, corpus, *epochs, *batch_size),
        Command::Eval {
            run,
            corpus,
            split,
            checkpoint,
            oracle,
        } => eval(cli, corpus, run.as_deref(), *split, *checkpoint, *oracle),
        Command::Ablate { corpus, family, subset } => ablate(cli, &cfg, corpus, *family, subset),
        Command::Report { dir } => crate::report::report(dir),
    }
}

/// `--out`, whose parent must already exist.
fn out_dir(cli: &Cli) -> Result<&Path> {
    let out = cli.out.as_deref().ok_or_else(|| anyhow!("--out is required"))?;
    check_parent(out)?;
    Ok(out)
}

fn check_parent(out: &Path) -> Result<()> {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            bail!("parent directory {} of {} does not exist", p.display(), out.display())
        }
        _ => Ok(()),
    }
}

fn synth(cli: &Cli, cfg: &ConfigFile) -> Result<()> {
    let out = out_dir(cli)?;
    let mut synth = cfg.synth();
    if let Some(seed) = cli.seed {
        synth.seed = seed;
    }
    let mut rec = Recorder::new("synth", cli.config.as_deref(), None);
    rec.seed(synth.seed);
    let summary = rec
        .stage("generate", || gen_corpus(&synth, out))
        .with_context(|| format!("generating corpus in {}", out.display()))?;
    let [tr, va, te] = summary.counts;
    println!(
        "wrote {} utterances to {} (train {tr}, val {va}, test {te}); total duration {:.1} s",
        tr + va + te,
        out.display(),
        summary.total_duration_s
    );
    rec.write(out)
}

fn preprocess(cli: &Cli, cfg: &ConfigFile, corpus_dir: &Path) -> Result<()> {
    let prep = cfg.preprocess();
    let mut rec = Recorder::new("preprocess", cli.config.as_deref(), Some(corpus_dir));
    let (mut done, mut skipped) = (0usize, 0usize);
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    rec.stage("preprocess", || -> Result<()> {
        for split in Split::ALL {
            for dir in corpus::list_utterances(corpus_dir, split)? {
                if corpus::is_preprocessed(&dir) && !cli.force {
                    skipped += 1;
                    continue;
                }
                let res = corpus::read_raw(&dir)
                    .and_then(|raw| preprocess_recording(&raw, &prep))
                    .and_then(|p| corpus::write_prep(&dir, &p));
                match res {
                    Ok(()) => done += 1,
                    Err(e) => failures.push((dir, e.to_string())),
                }
            }
        }
        Ok(())
    })?;
    println!("preprocessed {done}, skipped {skipped}, failed {}", failures.len());
    for (dir, e) in &failures {
        eprintln!("failed: {}: {e}", dir.display());
    }
    rec.write(corpus_dir)?;
    if !failures.is_empty() {
        bail!("{} utterance(s) failed preprocessing", failures.len());
    }
    Ok(())
}

fn load_split(corpus_dir: &Path, split: Split) -> Result<Vec<Utterance>> {
    let utts = Utterance::load_split(corpus_dir, split)
        .with_context(|| format!("loading {} split of {}", split.dir_name(), corpus_dir.display()))?;
    if utts.is_empty() {
        bail!("{} split of {} is empty", split.dir_name(), corpus_dir.display());
    }
    Ok(utts)
}

fn train(cli: &Cli, cfg: &ConfigFile, corpus_dir: &Path, epochs: Option<usize>, batch: Option<usize>) -> Result<()> {
    let out = out_dir(cli)?;
    let mut tcfg = cfg.train();
    if let Some(seed) = cli.seed {
        tcfg.seed = seed;
    }
    if let Some(e) = epochs {
        tcfg.n_epochs = e;
    }
    if let Some(b) = batch {
        tcfg.batch_size = b;
    }
    let mut rec = Recorder::new("train", cli.config.as_deref(), Some(corpus_dir));
    rec.seed(tcfg.seed);
    let (tr, va) = rec.stage("load", || -> Result<_> {
        Ok((load_split(corpus_dir, Split::Train)?, load_split(corpus_dir, Split::Val)?))
    })?;
    let model_cfg = cfg.model(tr[0].n_channels);
    let weights = cfg.loss_weights();
    let outcome = rec.stage("train", || trainer::train(&tr, &va, &model_cfg, &weights, &tcfg))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    rec.stage("write", || trainer::write_run(out, &outcome, &weights, &tcfg))?;
    match outcome.history.records.last() {
        Some(last) => println!(
            "trained {} epochs; final val loss {:.4}; best epoch {}",
            last.epoch, last.val.total, outcome.best_epoch
        ),
        None => println!("0 epochs: wrote the initial checkpoint"),
    }
    rec.write(out)
}

fn split_of(arg: SplitArg) -> Split {
    match arg {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn eval(
    cli: &Cli,
    corpus_dir: &Path,
    run: Option<&Path>,
    split: SplitArg,
    checkpoint: CheckpointArg,
    oracle: bool,
) -> Result<()> {
    let out = match (cli.out.as_deref(), run) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(r)) => r.to_path_buf(),
        (None, None) => bail!("eval needs --run or --out"),
    };
    check_parent(&out)?;
    let seed = cli.seed.unwrap_or(0);
    let mut rec = Recorder::new("eval", cli.config.as_deref(), Some(corpus_dir));
    rec.seed(seed);
    let utts = rec.stage("load", || load_split(corpus_dir, split_of(split)))?;
    let report = if oracle {
        rec.stage("evaluate", || evaluate_with(&utts, seed, |u| Ok(oracle_output(u))))?
    } else {
        let run = run.ok_or_else(|| anyhow!("eval needs --run unless --oracle is given"))?;
        let dir = run.join(match checkpoint {
            CheckpointArg::Best => BEST_DIR,
            CheckpointArg::Final => FINAL_DIR,
        });
        if !dir.join("weights.bin").exists() {
            bail!("missing checkpoint {}", dir.display());
        }
        let (model, _) = Model::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
        rec.stage("evaluate", || evaluate(&model, &utts, seed))?
    };
    std::fs::create_dir_all(&out)?;
    report.write_to(&out)?;
    print_report(&report);
    rec.write(&out)
}

pub fn print_report(report: &CorrelationReport) {
    println!("{:<10} {:>7} {:>7} {:>7} {:>4}", "feature", "r", "ci_low", "ci_high", "n");
    for row in &report.rows {
        println!(
            "{:<10} {:>7.3} {:>7.3} {:>7.3} {:>4}",
            row.name, row.r, row.ci_low, row.ci_high, row.n
        );
    }
}

fn ablate(cli: &Cli, cfg: &ConfigFile, corpus_dir: &Path, family: Option<FamilyArg>, subsets: &[String]) -> Result<()> {
    let out = out_dir(cli)?;
    let subsets = subsets
        .iter()
        .map(|s| ElectrodeSet::parse(s, N_ELECTRODES).with_context(|| format!("invalid --subset {s}")))
        .collect::<Result<Vec<_>>>()?;
    let family = family.or(if subsets.is_empty() { Some(FamilyArg::Both) } else { None });
    let families: Vec<Family> = match family {
        None => vec![],
        Some(FamilyArg::Remove) => vec![Family::Remove],
        Some(FamilyArg::Useonly) => vec![Family::UseOnly],
        Some(FamilyArg::Both) => vec![Family::Remove, Family::UseOnly],
    };
    let mut tcfg = cfg.train();
    if let Some(seed) = cli.seed {
        tcfg.seed = seed;
    }
    let mut rec = Recorder::new("ablate", cli.config.as_deref(), Some(corpus_dir));
    rec.seed(tcfg.seed);
    let splits = rec.stage("load", || -> Result<_> {
        Ok(CorpusSplits {
            train: load_split(corpus_dir, Split::Train)?,
            val: load_split(corpus_dir, Split::Val)?,
            test: load_split(corpus_dir, Split::Test)?,
        })
    })?;
    let model_cfg = cfg.model(splits.n_channels());
    let n_runs = ablation::plan_conditions(&families, &subsets).len();
    println!("running {n_runs} training runs on {} worker(s)", cli.workers);
    std::fs::create_dir_all(out)?;
    let runs_dir = out.join("ablation");
    let report = rec.stage("sweep", || {
        ablation::run_sweep(
            &splits,
            &families,
            &subsets,
            &model_cfg,
            &cfg.loss_weights(),
            &tcfg,
            cli.workers,
            cfg.ablation().subset_k,
            Some(&runs_dir),
        )
    })?;
    ablation::write_report(out, &report)?;
    crate::report::print_ablation(&report);
    println!("{n_runs} runs logged");
    rec.write(out)
}
