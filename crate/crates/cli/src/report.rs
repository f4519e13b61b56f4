use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emg2artic_core::ablation::{AblationReport, REPORT_FILE};
use emg2artic_core::eval_metrics::{CorrelationReport, REPORT_JSON};
use emg2artic_core::figures::{correlation_svg, heatmap_svg};
use emg2artic_core::trainer::HISTORY_FILE;

use crate::commands::print_report;

pub fn print_ablation(report: &AblationReport) {
    println!("{:<14} {:>7} {:>7} {:>7}", "condition", "EMA", "loud", "pitch");
    for c in &report.conditions {
        println!(
            "{:<14} {:>7.3} {:>7.3} {:>7.3}",
            c.tag,
            c.report.ema_mean(),
            c.report.loudness(),
            c.report.pitch()
        );
    }
    for h in &report.heatmaps {
        let sensors: Vec<String> = emg2artic_core::feature_targets::EmaSensor::ALL
            .iter()
            .map(|&s| format!("{}:{}", s.name(), h.strongest_for_sensor(s)))
            .collect();
        println!(
            "{} heatmap strongest electrode: {} pitch:{} loudness:{}",
            h.family.name(),
            sensors.join(" "),
            h.strongest_for_pitch(),
            h.strongest_for_loudness()
        );
    }
    if let Some(sel) = &report.subset {
        println!("selected {} electrodes: {:?}", sel.k, sel.set.ids());
        for p in &sel.picks {
            println!("  ch.{} covers {}", p.electrode, p.covers.join(", "));
        }
    }
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Renders whatever reports `dir` holds.
pub fn report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut written = Vec::new();
    let mut recognized = false;

    if dir.join(HISTORY_FILE).exists() {
        recognized = true;
        let text = std::fs::read_to_string(dir.join(HISTORY_FILE))?;
        let rows: Vec<&str> = text.lines().skip(1).collect();
        match rows.last() {
            Some(last) => println!("training history: {} epochs; last row {last}", rows.len()),
            None => println!("training history: no epochs"),
        }
    }
    if dir.join(REPORT_JSON).exists() {
        recognized = true;
        let report = CorrelationReport::read_json(&dir.join(REPORT_JSON))?;
        print_report(&report);
        write(
            dir.join("correlation.svg"),
            &correlation_svg(&report, "Pearson correlation with 95% interval"),
            &mut written,
        )?;
    }
    if dir.join(REPORT_FILE).exists() {
        recognized = true;
        let text = std::fs::read_to_string(dir.join(REPORT_FILE))?;
        let report: AblationReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", dir.join(REPORT_FILE).display()))?;
        print_ablation(&report);
        for h in &report.heatmaps {
            write(dir.join(format!("heatmap_{}.svg", h.family.name())), &heatmap_svg(h), &mut written)?;
        }
        if let Some(full) = report.condition("full") {
            write(
                dir.join("correlation_full.svg"),
                &correlation_svg(&full.report, "All electrodes: Pearson correlation"),
                &mut written,
            )?;
        }
    }
    if !recognized {
        bail!(
            "unrecognized directory layout in {}: expected {HISTORY_FILE}, {REPORT_JSON} or {REPORT_FILE}",
            dir.display()
        );
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
