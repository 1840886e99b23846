//! Scheduled private-message removal (PMR).
//!
//! Starting from the all-HD optimum, each event picks the HD user with the
//! smallest non-zero private rate (among those that also carry a non-zero
//! common rate), subtracts that user's private beam power from the budget,
//! demotes it to SD service and re-optimizes.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::grouping::GroupingResult;
use crate::optimizer::{self, OptimizerOptions, QosPartition, Solution};
use crate::rates::{BeamformerSet, RateAllocation};
use crate::scenario::Scenario;

/// Budget and service tiers between events.
#[derive(Debug, Clone, PartialEq)]
pub struct PmrState {
    pub partition: QosPartition,
    pub p_avail_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmrEvent {
    /// 1-based.
    pub event_index: usize,
    pub removed_user: usize,
    /// Private beam power of the removed user at the pre-removal optimum.
    pub removed_power_w: f64,
    pub p_avail_after_w: f64,
    pub solution_after: Solution,
}

/// Why the schedule ended.
#[derive(Debug, Clone, PartialEq)]
pub enum PmrStop {
    /// No HD user has both a non-zero private and a non-zero common rate.
    NoCandidate,
    /// The optimizer failed after a removal; the trace is truncated there.
    Truncated { event_index: usize, reason: String },
    /// The all-HD baseline could not be solved.
    BaselineFailed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmrTrace {
    pub initial_budget_w: f64,
    pub baseline: Option<Solution>,
    pub events: Vec<PmrEvent>,
    /// Every private message has been removed.
    pub terminal_is_sdma: bool,
    pub stop: PmrStop,
}

impl PmrTrace {
    /// Baseline followed by every post-event solution.
    pub fn solutions(&self) -> impl Iterator<Item = &Solution> {
        self.baseline
            .iter()
            .chain(self.events.iter().map(|e| &e.solution_after))
    }

    pub fn final_solution(&self) -> Option<&Solution> {
        self.solutions().last()
    }

    /// Budget after the last event (the initial budget if none).
    pub fn final_budget_w(&self) -> f64 {
        self.events
            .last()
            .map_or(self.initial_budget_w, |e| e.p_avail_after_w)
    }

    pub fn completed(&self) -> bool {
        self.baseline.is_some() && self.stop == PmrStop::NoCandidate
    }

    /// One row per solution; the baseline is event 0 with an empty
    /// `removed_user`. `common_rate_share` is in percent.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "event",
            "removed_user",
            "removed_power_w",
            "p_avail_w",
            "ee_bit_per_j",
            "sum_common_rate_bps",
            "sum_private_rate_bps",
            "common_rate_share",
            "sd_count",
        ])?;
        let mut row = |event: usize, user: String, removed: f64, p: f64, s: &Solution| {
            w.write_record([
                event.to_string(),
                user,
                removed.to_string(),
                p.to_string(),
                s.ee.to_string(),
                s.rates.sum_common().to_string(),
                s.rates.sum_private().to_string(),
                s.rates.common_share_pct().to_string(),
                s.partition.sd_count().to_string(),
            ])
        };
        if let Some(b) = &self.baseline {
            row(0, String::new(), 0.0, self.initial_budget_w, b)?;
        }
        for e in &self.events {
            row(
                e.event_index,
                e.removed_user.to_string(),
                e.removed_power_w,
                e.p_avail_after_w,
                &e.solution_after,
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// HD user with the smallest private rate among those whose private and
/// common rates both exceed `eps_rate_bps`; ties go to the smaller id.
pub fn select_pmr_candidate(rates: &RateAllocation, partition: &QosPartition, eps_rate_bps: f64) -> Option<usize> {
    partition
        .hd_users()
        .filter(|&k| rates.private_rate[k] > eps_rate_bps && rates.common_rate[k] > eps_rate_bps)
        .min_by(|&a, &b| rates.private_rate[a].total_cmp(&rates.private_rate[b]).then(a.cmp(&b)))
}

/// Removes user `e`'s private message: the budget shrinks by its private
/// beam power in `beams` and `e` moves from `H` to `S`.
pub fn apply_pmr(state: &PmrState, beams: &BeamformerSet, e: usize) -> Result<(PmrState, f64)> {
    if e >= state.partition.n_users() || !state.partition.is_hd(e) {
        return invalid(format!("user {e} is not an HD user"));
    }
    if !beams.private_active(e) {
        return invalid(format!("user {e} has no active private beam"));
    }
    let removed = beams.private_power(e);
    let mut partition = state.partition.clone();
    partition.demote(e)?;
    Ok((
        PmrState {
            partition,
            p_avail_w: state.p_avail_w - removed,
        },
        removed,
    ))
}

/// Baseline optimum with every user in `H` and the full budget, then PMR
/// events until no candidate remains or a re-optimization fails.
pub fn run_pmr_schedule(scenario: &Scenario, grouping: &GroupingResult, opts: &OptimizerOptions) -> Result<PmrTrace> {
    let cfg = scenario.config();
    let k = scenario.n_users();
    let initial_budget_w = cfg.p_tr_w();
    let eps_rate = opts.rate_eps_rel * cfg.r_sd_bps;
    let mut state = PmrState {
        partition: QosPartition::all_hd(k),
        p_avail_w: initial_budget_w,
    };
    let mut trace = PmrTrace {
        initial_budget_w,
        baseline: None,
        events: Vec::new(),
        terminal_is_sdma: false,
        stop: PmrStop::NoCandidate,
    };

    let baseline = match optimizer::solve_ee_max(scenario, grouping, &state.partition, state.p_avail_w, opts) {
        Ok(s) => s,
        Err(e @ (Error::Infeasible { .. } | Error::Solver { .. })) => {
            trace.stop = PmrStop::BaselineFailed { reason: e.to_string() };
            return Ok(trace);
        }
        Err(e) => return Err(e),
    };
    trace.baseline = Some(baseline);

    loop {
        let current = trace.final_solution().expect("baseline present");
        let Some(e) = select_pmr_candidate(&current.rates, &state.partition, eps_rate) else {
            break;
        };
        let (next, removed) = apply_pmr(&state, &current.beams, e)?;
        let event_index = trace.events.len() + 1;
        if next.p_avail_w <= 0.0 {
            trace.stop = PmrStop::Truncated {
                event_index,
                reason: "no transmit power left".into(),
            };
            break;
        }
        match optimizer::solve_ee_max(scenario, grouping, &next.partition, next.p_avail_w, opts) {
            Ok(solution_after) => {
                trace.events.push(PmrEvent {
                    event_index,
                    removed_user: e,
                    removed_power_w: removed,
                    p_avail_after_w: next.p_avail_w,
                    solution_after,
                });
                state = next;
            }
            Err(err @ (Error::Infeasible { .. } | Error::Solver { .. })) => {
                trace.stop = PmrStop::Truncated {
                    event_index,
                    reason: err.to_string(),
                };
                break;
            }
            Err(err) => return Err(err),
        }
    }
    trace.terminal_is_sdma = state.partition.hd_count() == 0;
    Ok(trace)
}
