//! The `report` and `filter` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    correctness_stats, histogram, level_contributions, render_speedup_table, samples_of,
    speedup_stats, transition_matrix_of, variability_filter, CorrectnessStats, HistogramBucket,
    LevelContribution, SpeedupStats, TransitionMatrix,
};
use crate::config::RunConfig;
use crate::model::LevelSet;
use crate::session::PortfolioResult;
use crate::trace::{read_trace, Trace};

/// One optimization run found on disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub mode: String,
    pub speedup: Option<f64>,
    pub traces: Vec<Trace>,
}

fn mode_of(dir: &Path) -> String {
    fs::read_to_string(dir.join("config.toml"))
        .ok()
        .and_then(|t| RunConfig::from_toml(&t).ok())
        .map(|c| c.mode.as_str().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn load_trace(dir: &Path, warnings: &mut Vec<String>) -> Option<Trace> {
    let path = dir.join("trace.jsonl");
    match read_trace(&path) {
        Ok(t) => Some(t),
        Err(e) => {
            let w = format!("skipping {}: {e}", path.display());
            log::warn!("{w}");
            warnings.push(w);
            None
        }
    }
}

/// Reads a run directory written by `optimize` or `portfolio`.
pub fn load_run(dir: &Path, warnings: &mut Vec<String>) -> Option<RunRecord> {
    let portfolio = dir.join("portfolio.json");
    if portfolio.exists() {
        let parsed: Option<PortfolioResult> = fs::read_to_string(&portfolio)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let Some(p) = parsed else {
            warnings.push(format!("skipping {}: unreadable portfolio.json", dir.display()));
            return None;
        };
        let traces = p
            .sessions
            .iter()
            .filter(|s| !s.skipped)
            .filter_map(|s| load_trace(&dir.join(s.level.to_lowercase()), warnings))
            .collect();
        return Some(RunRecord {
            dir: dir.to_path_buf(),
            mode: "portfolio".into(),
            speedup: Some(p.speedup),
            traces,
        });
    }
    let trace = load_trace(dir, warnings)?;
    let speedup = trace.result.as_ref().map(|r| r.speedup);
    Some(RunRecord {
        dir: dir.to_path_buf(),
        mode: mode_of(dir),
        speedup,
        traces: vec![trace],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub runs: usize,
    pub warnings: Vec<String>,
    pub speedups: BTreeMap<String, SpeedupStats>,
    pub correctness: Option<CorrectnessStats>,
    pub transitions: TransitionMatrix,
    pub contributions: BTreeMap<String, LevelContribution>,
    pub histograms: BTreeMap<String, Vec<HistogramBucket>>,
}

pub fn build_report(runs: &[RunRecord], warnings: Vec<String>, bucket_width: f64) -> ReportDoc {
    let mut by_mode: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        if let Some(s) = r.speedup.filter(|s| *s > 0.0) {
            by_mode.entry(r.mode.clone()).or_default().push(s);
        }
    }
    let speedups = by_mode
        .iter()
        .filter_map(|(m, v)| speedup_stats(v).ok().map(|s| (m.clone(), s)))
        .collect();
    let histograms = by_mode
        .iter()
        .map(|(m, v)| (m.clone(), histogram(v, bucket_width)))
        .collect();
    let traces: Vec<Trace> = runs.iter().flat_map(|r| r.traces.iter().cloned()).collect();
    let samples: Vec<_> = traces.iter().flat_map(samples_of).collect();
    ReportDoc {
        runs: runs.len(),
        warnings,
        speedups,
        correctness: correctness_stats(&samples).ok(),
        transitions: transition_matrix_of(&traces),
        contributions: level_contributions(&traces, &LevelSet::default()),
        histograms,
    }
}

pub fn report(dirs: &[PathBuf], bucket_width: f64) -> ReportDoc {
    let mut warnings = Vec::new();
    let runs: Vec<RunRecord> = dirs
        .iter()
        .filter_map(|d| load_run(d, &mut warnings))
        .collect();
    build_report(&runs, warnings, bucket_width)
}

pub fn render_report(doc: &ReportDoc) -> String {
    let mut out = format!("runs: {}\n\nspeedup (geometric mean and percentiles)\n", doc.runs);
    out.push_str(&render_speedup_table(&doc.speedups));
    if let Some(c) = &doc.correctness {
        out.push_str(&format!(
            "\ncorrect generations: {:.1}% of {}\ncorrect samples: {:.1}% of {}\n",
            c.pct_correct_generations * 100.0,
            c.generation_count,
            c.pct_correct_samples * 100.0,
            c.sample_count
        ));
    }
    out.push_str("\nlevel contributions\n");
    for (level, c) in &doc.contributions {
        out.push_str(&format!(
            "{:<10} calls {:>5.1}%  factor {:.3}\n",
            level,
            c.call_share * 100.0,
            c.contribution_factor
        ));
    }
    out.push_str("\ntransitions\n");
    for (from, row) in &doc.transitions.rows {
        let cells: Vec<String> = row.iter().map(|(to, f)| format!("{to} {f:.2}")).collect();
        out.push_str(&format!("{from} -> {}\n", cells.join(", ")));
    }
    for w in &doc.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub eligible: Vec<String>,
    pub excluded: Vec<String>,
    pub skipped_rows: usize,
}

impl FilterReport {
    pub fn summary(&self) -> String {
        format!(
            "{} of {} problems eligible ({} rows skipped)",
            self.eligible.len(),
            self.eligible.len() + self.excluded.len(),
            self.skipped_rows
        )
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    problem_id: String,
    #[allow(dead_code)]
    program_id: String,
    runtime: f64,
}

/// Applies the variability rule per problem of a
/// `problem_id,program_id,runtime` CSV manifest.
pub fn filter_manifest(csv_text: &str, min_programs: usize, threshold: f64) -> FilterReport {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut problems: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        match row {
            Ok(r) if r.runtime > 0.0 && r.runtime.is_finite() => {
                problems.entry(r.problem_id).or_default().push(r.runtime)
            }
            Ok(r) => {
                log::warn!("row {}: runtime {} is not positive", i + 2, r.runtime);
                skipped += 1;
            }
            Err(e) => {
                log::warn!("row {}: {e}", i + 2);
                skipped += 1;
            }
        }
    }
    let (mut eligible, mut excluded) = (Vec::new(), Vec::new());
    for (id, runtimes) in problems {
        if variability_filter(&runtimes, min_programs, threshold) {
            eligible.push(id);
        } else {
            excluded.push(id);
        }
    }
    FilterReport {
        eligible,
        excluded,
        skipped_rows: skipped,
    }
}
