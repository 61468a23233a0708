//! Statistics over run results and traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level_agent::SampleRecord;
use crate::model::{LevelSet, ToolKind};
use crate::trace::Trace;

pub const START_STATE: &str = "Start";
pub const PERCENTILES: [u32; 4] = [25, 50, 75, 99];

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("empty input")]
    EmptyInput,
    #[error("speedups must be positive, got {0}")]
    NonPositive(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupStats {
    pub geomean: f64,
    pub percentiles: BTreeMap<u32, f64>,
    pub count: usize,
}

/// Linear interpolation between order statistics at rank `(n-1)p/100`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn speedup_stats(speedups: &[f64]) -> Result<SpeedupStats, AnalyticsError> {
    if speedups.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    if let Some(&bad) = speedups.iter().find(|&&s| !(s > 0.0)) {
        return Err(AnalyticsError::NonPositive(bad));
    }
    let mut sorted = speedups.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let geomean = (sorted.iter().map(|v| v.ln()).sum::<f64>() / sorted.len() as f64).exp();
    let percentiles = PERCENTILES
        .iter()
        .map(|&p| (p, percentile(&sorted, p as f64)))
        .collect();
    Ok(SpeedupStats {
        geomean,
        percentiles,
        count: sorted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessStats {
    pub pct_correct_generations: f64,
    pub pct_correct_samples: f64,
    pub generation_count: usize,
    pub sample_count: usize,
}

/// Each inner list is one n-way sample; a generation is correct when its
/// t_correct is 1.
pub fn correctness_stats(samples: &[Vec<SampleRecord>]) -> Result<CorrectnessStats, AnalyticsError> {
    let flags: Vec<Vec<bool>> = samples
        .iter()
        .map(|s| s.iter().map(|r| r.report.is_correct()).collect())
        .collect();
    correctness_from_flags(&flags)
}

pub fn correctness_from_flags(samples: &[Vec<bool>]) -> Result<CorrectnessStats, AnalyticsError> {
    let generation_count: usize = samples.iter().map(Vec::len).sum();
    if samples.is_empty() || generation_count == 0 {
        return Err(AnalyticsError::EmptyInput);
    }
    let correct = samples.iter().flatten().filter(|&&c| c).count();
    let good_samples = samples.iter().filter(|s| s.iter().any(|&c| c)).count();
    Ok(CorrectnessStats {
        pct_correct_generations: correct as f64 / generation_count as f64,
        pct_correct_samples: good_samples as f64 / samples.len() as f64,
        generation_count,
        sample_count: samples.len(),
    })
}

/// Groups a trace's sample records into per-round samples.
pub fn samples_of(trace: &Trace) -> Vec<Vec<SampleRecord>> {
    let mut groups: BTreeMap<(u64, u32), Vec<SampleRecord>> = BTreeMap::new();
    for s in &trace.samples {
        groups
            .entry((s.seq, s.sample.round))
            .or_default()
            .push(s.sample.clone());
    }
    groups.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub states: Vec<String>,
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TransitionMatrix {
    pub fn frequency(&self, from: &str, to: &str) -> f64 {
        self.rows
            .get(from)
            .and_then(|r| r.get(to))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Row-normalized transition frequencies over tool-call sequences, with a
/// synthetic `Start` state before each sequence's first call.
pub fn transition_matrix<S: AsRef<str>>(sequences: &[Vec<S>]) -> TransitionMatrix {
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut states = std::collections::BTreeSet::new();
    for seq in sequences {
        let mut prev = START_STATE.to_string();
        for tool in seq {
            let tool = tool.as_ref().to_string();
            states.insert(prev.clone());
            states.insert(tool.clone());
            *counts.entry(prev).or_default().entry(tool.clone()).or_insert(0) += 1;
            prev = tool;
        }
    }
    let rows = counts
        .iter()
        .map(|(from, row)| {
            let total: u64 = row.values().sum();
            let norm = row
                .iter()
                .map(|(to, c)| (to.clone(), *c as f64 / total as f64))
                .collect();
            (from.clone(), norm)
        })
        .collect();
    TransitionMatrix {
        states: states.into_iter().collect(),
        counts,
        rows,
    }
}

pub fn transition_matrix_of(traces: &[Trace]) -> TransitionMatrix {
    let seqs: Vec<Vec<&str>> = traces.iter().map(Trace::tool_sequence).collect();
    transition_matrix(&seqs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelContribution {
    pub call_share: f64,
    pub contribution_factor: f64,
}

/// Per level: share of level-agent calls, and the geometric mean across runs
/// of the product of accepted improvement ratios (new perf / old perf).
pub fn level_contributions(traces: &[Trace], levels: &LevelSet) -> BTreeMap<String, LevelContribution> {
    let names: Vec<String> = levels.levels().map(|l| l.name).collect();
    let mut calls: BTreeMap<&str, u64> = BTreeMap::new();
    let mut log_sums: BTreeMap<&str, f64> = BTreeMap::new();
    let mut total_calls = 0u64;
    for t in traces {
        for c in t.calls.iter().filter(|c| c.kind == ToolKind::LevelAgent) {
            let Some(name) = names.iter().find(|n| **n == c.level) else {
                continue;
            };
            total_calls += 1;
            *calls.entry(name).or_insert(0) += 1;
            if let (true, Some(old), Some(new)) = (c.improved, c.input_perf, c.perf) {
                if old > 0.0 && new > 0.0 {
                    *log_sums.entry(name).or_insert(0.0) += (new / old).ln();
                }
            }
        }
    }
    let runs = traces.len().max(1) as f64;
    names
        .iter()
        .map(|n| {
            let share = if total_calls == 0 {
                0.0
            } else {
                calls.get(n.as_str()).copied().unwrap_or(0) as f64 / total_calls as f64
            };
            let factor = (log_sums.get(n.as_str()).copied().unwrap_or(0.0) / runs).exp();
            (
                n.clone(),
                LevelContribution {
                    call_share: share,
                    contribution_factor: factor,
                },
            )
        })
        .collect()
}

/// True iff there are at least `min_programs` runtimes and the spread
/// `(max - min) / min` reaches `threshold`.
pub fn variability_filter(runtimes: &[f64], min_programs: usize, threshold: f64) -> bool {
    if runtimes.len() < min_programs || runtimes.is_empty() {
        return false;
    }
    let min = runtimes.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = runtimes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max - min) / min >= threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Buckets `[lo, lo + width)` starting from the floor of the minimum.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBucket> {
    if values.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = (min / width).floor() * width;
    let n = (((max - start) / width).floor() as usize) + 1;
    let mut buckets: Vec<HistogramBucket> = (0..n)
        .map(|i| HistogramBucket {
            lo: start + i as f64 * width,
            hi: start + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in values {
        let i = (((v - start) / width).floor() as usize).min(n - 1);
        buckets[i].count += 1;
    }
    buckets
}

/// Plain-text table: one row per configuration with the geomean and
/// percentiles.
pub fn render_speedup_table(rows: &BTreeMap<String, SpeedupStats>) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "config", "n", "mean", "P25", "P50", "P75", "P99"
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{:<16} {:>5} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            name, s.count, s.geomean, s.percentiles[&25], s.percentiles[&50], s.percentiles[&75], s.percentiles[&99]
        ));
    }
    out
}
