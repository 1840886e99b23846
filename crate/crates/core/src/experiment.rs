//! Drop-level pipeline (scenario, grouping, PMR schedule) and the CSV
//! datasets behind the EE-vs-iteration, EE-vs-SD-count and EE-vs-budget
//! plots.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grouping::{self, GroupingResult};
use crate::optimizer::{OptimizerOptions, Phase, Solution};
use crate::pmr::{self, PmrTrace};
use crate::scenario::{self, Scenario, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub drops: usize,
    pub output_dir: PathBuf,
    pub emit_debug: bool,
    pub optimizer: OptimizerOptions,
}

impl ExperimentConfig {
    pub fn mode(&self) -> Mode {
        if self.drops > 1 {
            Mode::Ensemble
        } else {
            Mode::Single
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.drops == 0 {
            return invalid("at least one drop is required");
        }
        self.system.validate()
    }
}

/// Seed of drop `d`.
pub fn drop_seed(base: u64, drop: usize) -> u64 {
    base.wrapping_add(drop as u64)
}

/// Everything produced for one channel realization.
#[derive(Debug, Clone)]
pub struct DropRecord {
    pub drop: usize,
    pub seed: u64,
    pub scenario: Option<Scenario>,
    pub grouping: Option<GroupingResult>,
    pub trace: Option<PmrTrace>,
    /// Set when the drop could not be set up or its baseline failed.
    pub failure: Option<String>,
}

impl DropRecord {
    pub fn feasible(&self) -> bool {
        self.trace.as_ref().is_some_and(|t| t.baseline.is_some())
    }
}

/// Runs drop `drop` of the ensemble rooted at `system.seed`.
pub fn run_drop(system: &SystemConfig, drop: usize, opts: &OptimizerOptions) -> Result<DropRecord> {
    let seed = drop_seed(system.seed, drop);
    let cfg = SystemConfig {
        seed,
        ..system.clone()
    };
    let scenario = scenario::generate_scenario(&cfg)?;
    let grouping = grouping::group_users(scenario.channel(), cfg.decode_layers)?;
    let trace = pmr::run_pmr_schedule(&scenario, &grouping, opts)?;
    let failure = match &trace.stop {
        pmr::PmrStop::BaselineFailed { reason } => Some(reason.clone()),
        _ => None,
    };
    Ok(DropRecord {
        drop,
        seed,
        scenario: Some(scenario),
        grouping: Some(grouping),
        trace: Some(trace),
        failure,
    })
}

/// Runs drops `0..drops` in parallel; the result is ordered by drop.
pub fn run_drops(system: &SystemConfig, drops: usize, opts: &OptimizerOptions) -> Vec<DropRecord> {
    (0..drops)
        .into_par_iter()
        .map(|d| {
            run_drop(system, d, opts).unwrap_or_else(|e| DropRecord {
                drop: d,
                seed: drop_seed(system.seed, d),
                scenario: None,
                grouping: None,
                trace: None,
                failure: Some(e.to_string()),
            })
        })
        .collect()
}

/// Per-drop headline numbers; EE in Mbit/J.
#[derive(Debug, Clone, PartialEq)]
pub struct DropSummary {
    pub drop: usize,
    pub baseline_ee: Option<f64>,
    pub peak_ee: Option<f64>,
    pub peak_sd_count: Option<usize>,
    pub rel_gain_pct: Option<f64>,
    pub feasible: bool,
}

pub fn summarize(record: &DropRecord) -> DropSummary {
    let mut s = DropSummary {
        drop: record.drop,
        baseline_ee: None,
        peak_ee: None,
        peak_sd_count: None,
        rel_gain_pct: None,
        feasible: record.feasible(),
    };
    let Some(trace) = &record.trace else { return s };
    let Some(base) = &trace.baseline else { return s };
    let mut peak = base;
    for sol in trace.solutions() {
        if sol.ee > peak.ee {
            peak = sol;
        }
    }
    s.baseline_ee = Some(base.ee / 1e6);
    s.peak_ee = Some(peak.ee / 1e6);
    s.peak_sd_count = Some(peak.partition.sd_count());
    s.rel_gain_pct = Some(100.0 * (peak.ee - base.ee) / base.ee);
    s
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `iter,event,ee_mbit_per_j,common_rate_mbps`: every Dinkelbach-phase
/// iterate, numbered cumulatively across the baseline and all events.
pub fn write_fig2<W: Write>(trace: &PmrTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "event", "ee_mbit_per_j", "common_rate_mbps"])?;
    let mut iter = 0usize;
    for (event, sol) in trace.solutions().enumerate() {
        for r in sol.history.iter().filter(|r| r.phase == Phase::Dinkelbach) {
            iter += 1;
            w.write_record([
                iter.to_string(),
                event.to_string(),
                (r.ee / 1e6).to_string(),
                (r.sum_common_rate_bps / 1e6).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sd_count,ee_mbit_per_j,common_share_pct`, one row per solution.
pub fn write_fig3<W: Write>(trace: &PmrTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sd_count", "ee_mbit_per_j", "common_share_pct"])?;
    for sol in trace.solutions() {
        w.write_record([
            sol.partition.sd_count().to_string(),
            (sol.ee / 1e6).to_string(),
            sol.rates.common_share_pct().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `event,p_avail_w,ee_mbit_per_j`, one row per solution.
pub fn write_fig4<W: Write>(trace: &PmrTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event", "p_avail_w", "ee_mbit_per_j"])?;
    for (event, sol) in trace.solutions().enumerate() {
        w.write_record([event.to_string(), sol.p_avail_w.to_string(), (sol.ee / 1e6).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(summaries: &[DropSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["drop", "baseline_ee", "peak_ee", "peak_sd_count", "rel_gain_pct", "feasible"])?;
    for s in summaries {
        w.write_record([
            s.drop.to_string(),
            opt(s.baseline_ee),
            opt(s.peak_ee),
            s.peak_sd_count.map_or(String::new(), |v| v.to_string()),
            opt(s.rel_gain_pct),
            s.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median and interquartile range of the EE at each SD count over all
/// feasible drops.
pub fn write_ensemble<W: Write>(records: &[DropRecord], out: W) -> Result<()> {
    let mut by_sd: Vec<Vec<f64>> = Vec::new();
    for t in records.iter().filter_map(|r| r.trace.as_ref()) {
        for sol in t.solutions() {
            let n = sol.partition.sd_count();
            if by_sd.len() <= n {
                by_sd.resize(n + 1, Vec::new());
            }
            by_sd[n].push(sol.ee / 1e6);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sd_count", "drops", "median_ee_mbit_per_j", "q1_ee_mbit_per_j", "q3_ee_mbit_per_j"])?;
    for (n, v) in by_sd.iter_mut().enumerate() {
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        w.write_record([
            n.to_string(),
            v.len().to_string(),
            quantile(v, 0.5).to_string(),
            quantile(v, 0.25).to_string(),
            quantile(v, 0.75).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_debug(dir: &Path, record: &DropRecord) -> Result<()> {
    let d = record.drop;
    if let Some(s) = &record.scenario {
        s.write_csv(BufWriter::new(File::create(dir.join(format!("scenario_{d}.csv")))?))?;
    }
    if let Some(g) = &record.grouping {
        g.write_csv(BufWriter::new(File::create(dir.join(format!("grouping_{d}.csv")))?))?;
    }
    if let Some(t) = &record.trace {
        t.write_csv(BufWriter::new(File::create(dir.join(format!("pmr_{d}.csv")))?))?;
        for (event, sol) in t.solutions().enumerate() {
            let f = File::create(dir.join(format!("diagnostics_{d}_{event}.csv")))?;
            sol.write_diagnostics(BufWriter::new(f))?;
        }
    }
    Ok(())
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<DropRecord>,
    pub summaries: Vec<DropSummary>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    /// Median relative peak-EE gain over feasible drops, percent.
    pub fn median_rel_gain_pct(&self) -> Option<f64> {
        let v: Vec<f64> = self.summaries.iter().filter_map(|s| s.rel_gain_pct).collect();
        (!v.is_empty()).then(|| median(&v))
    }
}

/// Runs every drop and writes `fig2.csv`, `fig3.csv`, `fig4.csv` (for the
/// first drop) and `summary.csv`; ensembles add `ensemble.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;

    let records = run_drops(&config.system, config.drops, &config.optimizer);
    let summaries: Vec<DropSummary> = records.iter().map(summarize).collect();

    let mut files = Vec::new();
    let mut created = |name: &str| files.push(dir.join(name));
    let empty = PmrTrace {
        initial_budget_w: config.system.p_tr_w(),
        baseline: None,
        events: Vec::new(),
        terminal_is_sdma: false,
        stop: pmr::PmrStop::NoCandidate,
    };
    let first = records[0].trace.as_ref().unwrap_or(&empty);
    write_fig2(first, BufWriter::new(File::create(dir.join("fig2.csv"))?))?;
    created("fig2.csv");
    write_fig3(first, BufWriter::new(File::create(dir.join("fig3.csv"))?))?;
    created("fig3.csv");
    write_fig4(first, BufWriter::new(File::create(dir.join("fig4.csv"))?))?;
    created("fig4.csv");
    write_summary(&summaries, BufWriter::new(File::create(dir.join("summary.csv"))?))?;
    created("summary.csv");
    if config.mode() == Mode::Ensemble {
        write_ensemble(&records, BufWriter::new(File::create(dir.join("ensemble.csv"))?))?;
        created("ensemble.csv");
    }
    if config.emit_debug {
        for r in &records {
            write_debug(dir, r)?;
        }
    }
    Ok(ExperimentReport {
        records,
        summaries,
        files,
    })
}

/// Peak EE and its solution along a trace.
pub fn peak_solution(trace: &PmrTrace) -> Option<&Solution> {
    trace.solutions().fold(None, |best: Option<&Solution>, s| match best {
        Some(b) if b.ee >= s.ee => Some(b),
        _ => Some(s),
    })
}
