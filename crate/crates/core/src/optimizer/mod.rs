//! Energy-efficiency maximization under exact per-tier QoS targets.
//!
//! The fractional objective `sum xi / (P_tr(w) + P_circ)` is handled by a
//! Dinkelbach outer loop. For a fixed coefficient `lambda` the parametric
//! problem `sum xi - lambda (P_tr(w) + P_circ)` is still non-convex in the
//! beamformers; an SCA inner loop solves a sequence of convex inner
//! approximations (see [`subproblem`]), each tight at the previous iterate,
//! so every accepted iterate is feasible for the true SINR constraints and
//! the objective never decreases.

pub mod subproblem;

use std::collections::BTreeSet;
use std::io::Write;

use num_complex::Complex64;

use crate::conic::{ClarabelSolver, ConicSolution, ConicSolver, ConicStatus};
use crate::error::{invalid, Error, Result, Stage};
use crate::grouping::GroupingResult;
use crate::rates::{self, BeamformerSet, RateAllocation};
use crate::scenario::{Scenario, SystemConfig};

pub use subproblem::{build_convex_subproblem, point_vector, Linearization, Subproblem, SubproblemObjective, VarLayout};

/// Split of the users into HD (`H`) and SD (`S`) service tiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QosPartition {
    hd: BTreeSet<usize>,
    sd: BTreeSet<usize>,
}

impl QosPartition {
    pub fn all_hd(n_users: usize) -> Self {
        QosPartition {
            hd: (0..n_users).collect(),
            sd: BTreeSet::new(),
        }
    }

    pub fn new(n_users: usize, sd_users: &[usize]) -> Result<Self> {
        let mut p = Self::all_hd(n_users);
        for &u in sd_users {
            p.demote(u)?;
        }
        Ok(p)
    }

    pub fn n_users(&self) -> usize {
        self.hd.len() + self.sd.len()
    }

    pub fn hd_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.hd.iter().copied()
    }

    pub fn sd_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.sd.iter().copied()
    }

    pub fn hd_count(&self) -> usize {
        self.hd.len()
    }

    pub fn sd_count(&self) -> usize {
        self.sd.len()
    }

    pub fn is_hd(&self, k: usize) -> bool {
        self.hd.contains(&k)
    }

    /// Moves `k` from `H` to `S`.
    pub fn demote(&mut self, k: usize) -> Result<()> {
        if !self.hd.remove(&k) {
            return invalid(format!("user {k} is not an HD user"));
        }
        self.sd.insert(k);
        Ok(())
    }

    /// Total rate target of user `k` in bit/s.
    pub fn target_bps(&self, k: usize, cfg: &SystemConfig) -> f64 {
        if self.is_hd(k) {
            cfg.r_hd_bps
        } else {
            cfg.r_sd_bps
        }
    }

    pub fn validate(&self, n_users: usize) -> Result<()> {
        let union: BTreeSet<usize> = self.hd.union(&self.sd).copied().collect();
        if self.hd.intersection(&self.sd).next().is_some() || union != (0..n_users).collect() {
            return invalid("HD and SD sets must partition the users");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Dinkelbach stop: `|sum xi - lambda (P + P_circ)| <= eps_dink * sum xi`.
    pub eps_dink: f64,
    /// SCA stop: objective gain below `eps_sca * sum xi`.
    pub eps_sca: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_feasibility: usize,
    /// Floor on linearization slacks.
    pub eps_floor: f64,
    /// QoS equality tolerance, relative to `R_SD`.
    pub qos_tol_rel: f64,
    /// Power budget tolerance, relative.
    pub power_tol_rel: f64,
    /// Rate threshold (and rate-consistency tolerance), relative to `R_SD`.
    pub rate_eps_rel: f64,
    /// Conic solver duality-gap tolerance.
    pub solver_gap_tol: f64,
    /// Starting points tried in order by [`solve_ee_max`] until one yields a
    /// feasible solution; otherwise the most efficient result is returned.
    pub starts: Vec<StartKind>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            eps_dink: 1e-4,
            eps_sca: 1e-5,
            max_outer: 30,
            max_inner: 50,
            max_feasibility: 100,
            eps_floor: 1e-10,
            qos_tol_rel: 1e-6,
            power_tol_rel: 1e-8,
            rate_eps_rel: 1e-3,
            solver_gap_tol: 1e-8,
            starts: vec![StartKind::CommonRouted, StartKind::Mrt],
        }
    }
}

/// Starting-point families for the SCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartKind {
    /// [`mrt_initialization`].
    Mrt,
    /// Every message carried by its common stream, beamed at the weakest
    /// decoder; private beams nearly off.
    CommonRouted,
    /// HD messages carried by MRT private beams, SD messages as in
    /// `CommonRouted`; remaining common beams nearly off.
    PrivateRouted,
}

/// SINR slacks of the final iterate, in units of the receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackState {
    pub t_p: Vec<f64>,
    pub t_c: Vec<f64>,
    pub beta_p: Vec<f64>,
    /// Aligned with `GroupingResult::decoded_by`.
    pub beta_c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Feasibility,
    Dinkelbach,
}

/// One accepted SCA iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub phase: Phase,
    pub outer: usize,
    pub inner: usize,
    /// bit/J; zero during the feasibility phase.
    pub lambda: f64,
    /// bit/s for the Dinkelbach phase; the QoS scale during feasibility.
    pub surrogate_objective: f64,
    pub ee: f64,
    pub transmit_power_w: f64,
    pub sum_common_rate_bps: f64,
    pub sum_private_rate_bps: f64,
    /// Largest true-SINR shortfall below the slack `t`, relative.
    pub max_residual: f64,
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `max_k |xi_p + xi_c - R_k|`, bit/s.
    pub qos_residual_bps: f64,
    /// `max(0, P_tr / P_avail - 1)`.
    pub power_excess_rel: f64,
    /// Largest excess of an allocated rate over the achievable one, bit/s.
    pub rate_excess_bps: f64,
    pub converged: bool,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IterationCounts {
    pub outer: usize,
    pub inner: usize,
    pub feasibility: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub beams: BeamformerSet,
    pub rates: RateAllocation,
    pub slacks: SlackState,
    /// Final Dinkelbach coefficient, bit/J.
    pub lambda: f64,
    /// Every coefficient used by the outer loop, bit/J.
    pub lambda_history: Vec<f64>,
    /// `sum xi - lambda (P_tr + P_circ)` at the final iterate, relative to `sum xi`.
    pub dinkelbach_residual: f64,
    pub ee: f64,
    pub transmit_power_w: f64,
    pub p_avail_w: f64,
    pub partition: QosPartition,
    pub feasible: FeasibilityReport,
    pub iterations: IterationCounts,
    pub history: Vec<IterationRecord>,
}

impl Solution {
    /// Per-iteration diagnostics as CSV.
    pub fn write_diagnostics<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "outer", "inner", "lambda", "surrogate_objective", "max_residual"])?;
        for r in &self.history {
            w.write_record([
                match r.phase {
                    Phase::Feasibility => "feasibility".to_string(),
                    Phase::Dinkelbach => "dinkelbach".to_string(),
                },
                r.outer.to_string(),
                r.inner.to_string(),
                r.lambda.to_string(),
                r.surrogate_objective.to_string(),
                r.max_residual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `lambda = sum xi / (P_tr + P_circ)`.
pub fn dinkelbach_step(rates: &RateAllocation, transmit_power_w: f64, circuit_power_w: f64) -> f64 {
    rates.sum_rate() / (transmit_power_w + circuit_power_w)
}

/// Rates in bit/s/Hz plus the slacks of the last solved subproblem.
#[derive(Debug, Clone)]
struct Iterate {
    beams: BeamformerSet,
    xi_p: Vec<f64>,
    xi_c: Vec<f64>,
    slacks: Option<SlackState>,
}

impl Iterate {
    fn sum_rate(&self) -> f64 {
        self.xi_p.iter().sum::<f64>() + self.xi_c.iter().sum::<f64>()
    }
}

struct Context<'a, S: ConicSolver> {
    scenario: &'a Scenario,
    grouping: &'a GroupingResult,
    partition: &'a QosPartition,
    p_avail_w: f64,
    p_circ_w: f64,
    bandwidth: f64,
    opts: &'a OptimizerOptions,
    solver: &'a S,
    history: Vec<IterationRecord>,
}

/// Summary of one SCA run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaReport {
    pub iterations: usize,
    pub accepted: usize,
    pub start_objective: f64,
    pub final_objective: f64,
    pub converged: bool,
    /// The conic solver stopped making progress; the last accepted iterate was kept.
    pub stalled: bool,
}

/// Outcome of extracting a subproblem solution.
struct Candidate {
    iterate: Iterate,
    qos_scale: f64,
    floored: usize,
}

impl<'a, S: ConicSolver> Context<'a, S> {
    fn new(
        scenario: &'a Scenario,
        grouping: &'a GroupingResult,
        partition: &'a QosPartition,
        p_avail_w: f64,
        opts: &'a OptimizerOptions,
        solver: &'a S,
    ) -> Result<Self> {
        if !(p_avail_w > 0.0 && p_avail_w.is_finite()) {
            return invalid(format!("available power must be positive, got {p_avail_w}"));
        }
        let k = scenario.n_users();
        partition.validate(k)?;
        if grouping.n_users() != k {
            return invalid("grouping and scenario disagree on the number of users");
        }
        grouping.validate()?;
        let cfg = scenario.config();
        Ok(Context {
            scenario,
            grouping,
            partition,
            p_avail_w,
            p_circ_w: cfg.p_circ_w(),
            bandwidth: cfg.bandwidth_hz,
            opts,
            solver,
            history: Vec::new(),
        })
    }

    fn targets(&self) -> Vec<f64> {
        let cfg = self.scenario.config();
        (0..self.scenario.n_users())
            .map(|k| self.partition.target_bps(k, cfg) / self.bandwidth)
            .collect()
    }

    fn solve_at(&self, beams: &BeamformerSet, objective: SubproblemObjective) -> (Subproblem, ConicSolution) {
        let point = Linearization::at(self.scenario, self.grouping, beams, self.opts.eps_floor);
        let sub = build_convex_subproblem(self.scenario, self.grouping, &point, objective, self.partition, self.p_avail_w);
        let sol = self.solver.solve(&sub.program);
        (sub, sol)
    }

    fn extract(&self, sub: &Subproblem, x: &[f64]) -> Candidate {
        let l = &sub.layout;
        let k = self.scenario.n_users();
        let beams = l.unpack_beams(x);
        let xi_p: Vec<f64> = (0..k).map(|u| l.xi_p[u].map_or(0.0, |i| x[i].max(0.0))).collect();
        let xi_c: Vec<f64> = (0..k).map(|u| x[l.xi_c[u]].max(0.0)).collect();
        let slacks = SlackState {
            t_p: (0..k).map(|u| l.t_p[u].map_or(0.0, |i| x[i])).collect(),
            t_c: (0..k).map(|u| x[l.t_c[u]]).collect(),
            beta_p: (0..k).map(|u| l.beta_p[u].map_or(0.0, |i| x[i])).collect(),
            beta_c: l.beta_c.iter().map(|v| v.iter().map(|&i| x[i]).collect()).collect(),
        };
        Candidate {
            iterate: Iterate {
                beams,
                xi_p,
                xi_c,
                slacks: Some(slacks),
            },
            qos_scale: l.qos_scale.map_or(1.0, |i| x[i]),
            floored: sub.floored,
        }
    }

    /// Largest relative shortfall of a true SINR below its slack.
    fn sinr_shortfall(&self, it: &Iterate) -> f64 {
        let Some(sl) = &it.slacks else { return 0.0 };
        let mut worst: f64 = 0.0;
        for u in 0..self.scenario.n_users() {
            if it.beams.private_active(u) {
                let s = rates::private_sinr(self.scenario, &it.beams, self.grouping, u);
                worst = worst.max((sl.t_p[u] - s) / sl.t_p[u].max(1.0));
            }
            for &rx in self.grouping.decoded_by(u) {
                let s = rates::common_sinr(self.scenario, &it.beams, self.grouping, rx, u).unwrap_or(0.0);
                worst = worst.max((sl.t_c[u] - s) / sl.t_c[u].max(1.0));
            }
        }
        worst
    }

    /// Achievable rates at `beams`, bit/s/Hz.
    fn achievable(&self, beams: &BeamformerSet) -> (Vec<f64>, Vec<f64>) {
        let r = rates::achievable_rates(self.scenario, beams, self.grouping);
        (
            r.private_rate.iter().map(|v| v / self.bandwidth).collect(),
            r.common_rate.iter().map(|v| v / self.bandwidth).collect(),
        )
    }

    /// Splits each target over the achievable private/common rates; `None`
    /// when some target exceeds what the beams support.
    fn pin_rates(&self, beams: &BeamformerSet) -> Option<(Vec<f64>, Vec<f64>)> {
        let (ap, ac) = self.achievable(beams);
        let targets = self.targets();
        let mut xi_p = vec![0.0; targets.len()];
        let mut xi_c = vec![0.0; targets.len()];
        for (u, &r) in targets.iter().enumerate() {
            let total = ap[u] + ac[u];
            if total < r {
                return None;
            }
            xi_p[u] = r * ap[u] / total;
            xi_c[u] = r - xi_p[u];
        }
        Some((xi_p, xi_c))
    }

    /// Replaces the solver's rates by an exact split of each target,
    /// keeping the solver's private/common proportions.
    fn snap_to_targets(&self, it: &mut Iterate) {
        for (u, r) in self.targets().into_iter().enumerate() {
            let total = it.xi_p[u] + it.xi_c[u];
            if total > 0.0 {
                it.xi_p[u] *= r / total;
                it.xi_c[u] = r - it.xi_p[u];
            } else {
                it.xi_c[u] = r;
            }
        }
    }

    fn record(&mut self, phase: Phase, outer: usize, inner: usize, lambda: f64, objective: f64, it: &Iterate, residual: f64, floored: usize) {
        let p = rates::total_transmit_power(&it.beams);
        let b = self.bandwidth;
        let sum = it.sum_rate() * b;
        self.history.push(IterationRecord {
            phase,
            outer,
            inner,
            lambda: lambda * b,
            surrogate_objective: objective,
            ee: sum / (p + self.p_circ_w),
            transmit_power_w: p,
            sum_common_rate_bps: it.xi_c.iter().sum::<f64>() * b,
            sum_private_rate_bps: it.xi_p.iter().sum::<f64>() * b,
            max_residual: residual,
            floored,
        });
    }

    /// Raises the common QoS fraction until every target is reachable.
    fn feasibility_phase(&mut self, start: BeamformerSet) -> Result<Iterate> {
        let mut beams = start;
        let mut best = 0.0_f64;
        for inner in 1..=self.opts.max_feasibility {
            let (sub, sol) = self.solve_at(&beams, SubproblemObjective::Feasibility { cap: 1.05 });
            match sol.status {
                ConicStatus::Solved | ConicStatus::AlmostSolved => {}
                ConicStatus::Infeasible if inner == 1 => {
                    return Err(Error::Infeasible {
                        stage: Stage::FeasibilityPhase,
                        qos_fraction: 0.0,
                    })
                }
                _ => {
                    return Err(Error::Solver {
                        status: sol.detail,
                        outer: 0,
                        inner,
                    })
                }
            }
            let cand = self.extract(&sub, &sol.x);
            let residual = self.sinr_shortfall(&cand.iterate);
            self.record(Phase::Feasibility, 0, inner, 0.0, cand.qos_scale, &cand.iterate, residual, cand.floored);
            beams = cand.iterate.beams;
            if let Some((xi_p, xi_c)) = self.pin_rates(&beams) {
                return Ok(Iterate {
                    beams,
                    xi_p,
                    xi_c,
                    slacks: None,
                });
            }
            if cand.qos_scale <= best + 1e-7 && inner > 3 {
                break;
            }
            best = best.max(cand.qos_scale);
        }
        Err(Error::Infeasible {
            stage: Stage::FeasibilityPhase,
            qos_fraction: best,
        })
    }

    fn objective(&self, it: &Iterate, lambda: f64) -> f64 {
        it.sum_rate() - lambda * (rates::total_transmit_power(&it.beams) + self.p_circ_w)
    }

    /// SCA iterations for a fixed Dinkelbach coefficient (bit/s/Hz per W).
    fn sca(&mut self, outer: usize, lambda: f64, start: Iterate) -> Result<(Iterate, ScaReport)> {
        let mut current = start;
        let start_objective = self.objective(&current, lambda);
        let mut prev = start_objective;
        let mut report = ScaReport {
            iterations: 0,
            accepted: 0,
            start_objective,
            final_objective: start_objective,
            converged: false,
            stalled: false,
        };
        for inner in 1..=self.opts.max_inner {
            report.iterations = inner;
            let (sub, sol) = self.solve_at(&current.beams, SubproblemObjective::Dinkelbach { lambda });
            match sol.status {
                ConicStatus::Solved | ConicStatus::AlmostSolved => {}
                ConicStatus::Infeasible if outer == 1 && inner == 1 => {
                    return Err(Error::Infeasible {
                        stage: Stage::FirstSubproblem,
                        qos_fraction: 1.0,
                    })
                }
                // numerical stall after progress: keep the last accepted iterate
                _ if report.accepted > 0 || outer > 1 => {
                    report.stalled = true;
                    break;
                }
                _ => {
                    return Err(Error::Solver {
                        status: sol.detail,
                        outer,
                        inner,
                    })
                }
            }
            let mut cand = self.extract(&sub, &sol.x);
            self.snap_to_targets(&mut cand.iterate);
            let obj = self.objective(&cand.iterate, lambda);
            let scale = current.sum_rate().max(f64::MIN_POSITIVE);
            if obj < prev - 1e-9 * scale {
                // solver noise at a fixed point; keep the previous iterate
                report.converged = true;
                break;
            }
            let residual = self.sinr_shortfall(&cand.iterate);
            self.record(Phase::Dinkelbach, outer, inner, lambda, obj * self.bandwidth, &cand.iterate, residual, cand.floored);
            report.accepted += 1;
            let gain = obj - prev;
            prev = obj;
            current = cand.iterate;
            if gain <= self.opts.eps_sca * scale {
                report.converged = true;
                break;
            }
        }
        report.final_objective = prev;
        Ok((current, report))
    }
}

/// Result of a stand-alone SCA run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub beams: BeamformerSet,
    pub rates: RateAllocation,
    pub report: ScaReport,
    pub history: Vec<IterationRecord>,
}

/// Runs the SCA inner loop for a fixed Dinkelbach coefficient `lambda`
/// (bit/J) from `start`, which must already meet every rate target.
#[allow(clippy::too_many_arguments)]
pub fn sca_loop<S: ConicSolver>(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    lambda: f64,
    start: &BeamformerSet,
    opts: &OptimizerOptions,
    solver: &S,
) -> Result<ScaOutcome> {
    let mut ctx = Context::new(scenario, grouping, partition, p_avail_w, opts, solver)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be non-negative, got {lambda}"));
    }
    if start.n_users() != scenario.n_users() || start.n_tx() != scenario.n_tx() {
        return invalid("start beams do not match the scenario");
    }
    if rates::total_transmit_power(start) > p_avail_w * (1.0 + opts.power_tol_rel) {
        return invalid("start beams exceed the power budget");
    }
    let Some((xi_p, xi_c)) = ctx.pin_rates(start) else {
        return invalid("start beams do not meet the rate targets");
    };
    let it = Iterate {
        beams: start.clone(),
        xi_p,
        xi_c,
        slacks: None,
    };
    let (end, report) = ctx.sca(1, lambda / ctx.bandwidth, it)?;
    let b = ctx.bandwidth;
    Ok(ScaOutcome {
        rates: RateAllocation {
            private_rate: end.xi_p.iter().map(|v| v * b).collect(),
            common_rate: end.xi_c.iter().map(|v| v * b).collect(),
        },
        beams: end.beams,
        report,
        history: ctx.history,
    })
}

/// MRT private beams and decoder-matched common beams sharing half the budget.
pub fn mrt_initialization(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
) -> BeamformerSet {
    let k = scenario.n_users();
    let n = scenario.n_tx();
    let h = scenario.channel();
    let unit = |v: Vec<Complex64>| -> Vec<Complex64> {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|z| z / norm).collect()
    };
    let n_beams = k + partition.hd_count();
    let amp = (0.5 * p_avail_w / n_beams as f64).sqrt();
    let mut beams = BeamformerSet::zeros(k, n);
    for u in 0..k {
        if partition.is_hd(u) {
            let dir = unit(h.column(u).to_vec());
            beams.set_private(u, dir.into_iter().map(|z| z * amp).collect());
        } else {
            beams.deactivate_private(u);
        }
        let mut sum = vec![Complex64::new(0.0, 0.0); n];
        for &rx in grouping.decoded_by(u) {
            let col = unit(h.column(rx).to_vec());
            sum.iter_mut().zip(col).for_each(|(a, b)| *a += b);
        }
        if sum.iter().map(|z| z.norm_sqr()).sum::<f64>() < 1e-12 {
            sum = h.column(u).to_vec();
        }
        beams.set_common(u, unit(sum).into_iter().map(|z| z * amp).collect());
    }
    beams
}

/// Power of a beam that is kept alive but carries (almost) nothing,
/// relative to the user's main beam.
const IDLE_POWER_REL: f64 = 1e-6;

/// Starting beams of the given family. `Mrt` spends half the budget; the
/// routed families are scaled to 5 % above the smallest uniform scaling that
/// meets every target (or to the full budget when none does).
pub fn start_beams(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    kind: StartKind,
) -> BeamformerSet {
    let common_routed = match kind {
        StartKind::Mrt => return mrt_initialization(scenario, grouping, partition, p_avail_w),
        StartKind::CommonRouted => true,
        StartKind::PrivateRouted => false,
    };
    let k = scenario.n_users();
    let cfg = scenario.config();
    let h = scenario.channel();
    let noise = scenario.noise_w();
    // single-link power for the target over receiver `rx`
    let need = |u: usize, rx: usize| {
        let snr = 2f64.powf(partition.target_bps(u, cfg) / cfg.bandwidth_hz) - 1.0;
        snr * noise[rx] / h.column_norm_sqr(rx)
    };
    let along = |rx: usize, power: f64| -> Vec<Complex64> {
        let col = h.column(rx);
        let f = (power / h.column_norm_sqr(rx)).sqrt();
        col.iter().map(|z| z * f).collect()
    };
    let mut beams = BeamformerSet::zeros(k, scenario.n_tx());
    for u in 0..k {
        let weakest = grouping
            .decoded_by(u)
            .iter()
            .copied()
            .min_by(|&a, &b| h.column_norm_sqr(a).total_cmp(&h.column_norm_sqr(b)))
            .unwrap_or(u);
        let via_private = partition.is_hd(u) && !common_routed;
        let main = if via_private { need(u, u) } else { need(u, weakest) };
        let (p_private, p_common) = if via_private {
            (main, IDLE_POWER_REL * main)
        } else {
            (IDLE_POWER_REL * main, main)
        };
        beams.set_common(u, along(weakest, p_common));
        if partition.is_hd(u) {
            beams.set_private(u, along(u, p_private));
        } else {
            beams.deactivate_private(u);
        }
    }
    fit_to_targets(scenario, grouping, partition, p_avail_w, &beams)
}

fn scaled(beams: &BeamformerSet, amplitude: f64) -> BeamformerSet {
    let mut out = beams.clone();
    for u in 0..beams.n_users() {
        if beams.private_active(u) {
            out.set_private(u, beams.private(u).iter().map(|z| z * amplitude).collect());
        }
        if beams.common_active(u) {
            out.set_common(u, beams.common(u).iter().map(|z| z * amplitude).collect());
        }
    }
    out
}

/// Uniform rescaling of `beams` to 5 % above the smallest power meeting every
/// target, capped at the budget. SINRs grow with a common amplitude factor,
/// so the smallest factor is found by bisection.
fn fit_to_targets(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    beams: &BeamformerSet,
) -> BeamformerSet {
    let cfg = scenario.config();
    let meets = |a: f64| {
        let r = rates::achievable_rates(scenario, &scaled(beams, a), grouping);
        (0..scenario.n_users()).all(|u| r.user_total(u) >= partition.target_bps(u, cfg))
    };
    let power = rates::total_transmit_power(beams);
    let a_max = (p_avail_w / power).sqrt();
    if !meets(a_max) {
        return scaled(beams, a_max);
    }
    let (mut lo, mut hi) = (a_max * 1e-6, a_max);
    if meets(lo) {
        hi = lo;
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if meets(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    scaled(beams, (hi * 1.05f64.sqrt()).min(a_max))
}

/// Maximizes the energy efficiency for a fixed grouping, QoS partition and
/// power budget.
pub fn solve_ee_max(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    opts: &OptimizerOptions,
) -> Result<Solution> {
    let solver = ClarabelSolver {
        tol_gap: opts.solver_gap_tol,
        ..ClarabelSolver::default()
    };
    solve_ee_max_with(scenario, grouping, partition, p_avail_w, opts, &solver)
}

/// [`solve_ee_max`] with an explicit conic backend.
pub fn solve_ee_max_with<S: ConicSolver>(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    opts: &OptimizerOptions,
    solver: &S,
) -> Result<Solution> {
    if opts.starts.is_empty() {
        return invalid("at least one starting point is required");
    }
    let mut best: Option<Solution> = None;
    let mut first_err = None;
    for &kind in &opts.starts {
        let init = start_beams(scenario, grouping, partition, p_avail_w, kind);
        match solve_ee_max_from(scenario, grouping, partition, p_avail_w, &init, opts, solver) {
            Ok(sol) if sol.feasible.feasible => return Ok(sol),
            Ok(sol) => {
                let better = best.as_ref().is_none_or(|b| {
                    (sol.feasible.feasible, sol.ee) > (b.feasible.feasible, b.ee)
                });
                if better {
                    best = Some(sol);
                }
            }
            Err(e @ (Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_))) => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(sol) => Ok(sol),
        None => Err(first_err.expect("at least one start ran")),
    }
}

/// [`solve_ee_max_with`] from explicit starting beams instead of the MRT
/// initialization. Beams of SD users' private streams are ignored.
pub fn solve_ee_max_from<S: ConicSolver>(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    p_avail_w: f64,
    start: &BeamformerSet,
    opts: &OptimizerOptions,
    solver: &S,
) -> Result<Solution> {
    let k = scenario.n_users();
    let cfg = scenario.config();
    let mut ctx = Context::new(scenario, grouping, partition, p_avail_w, opts, solver)?;
    if start.n_users() != k || start.n_tx() != scenario.n_tx() {
        return invalid("start beams do not match the scenario");
    }
    let mut init = start.clone();
    for u in partition.sd_users() {
        init.deactivate_private(u);
    }
    let mut current = match ctx.pin_rates(&init) {
        Some((xi_p, xi_c)) => Iterate {
            beams: init,
            xi_p,
            xi_c,
            slacks: None,
        },
        None => ctx.feasibility_phase(init)?,
    };
    let feasibility_iters = ctx.history.len();

    let mut lambda = current.sum_rate() / (rates::total_transmit_power(&current.beams) + ctx.p_circ_w);
    let mut lambda_history = vec![lambda];
    let mut counts = IterationCounts {
        feasibility: feasibility_iters,
        ..IterationCounts::default()
    };
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for outer in 1..=opts.max_outer {
        counts.outer = outer;
        let (next, report) = ctx.sca(outer, lambda, current)?;
        counts.inner += report.iterations;
        current = next;
        let numerator = current.sum_rate();
        let denominator = rates::total_transmit_power(&current.beams) + ctx.p_circ_w;
        residual = (numerator - lambda * denominator) / numerator;
        if residual.abs() <= opts.eps_dink {
            converged = true;
            break;
        }
        lambda = numerator / denominator;
        lambda_history.push(lambda);
    }

    let b = ctx.bandwidth;
    let p_circ = ctx.p_circ_w;
    let history = std::mem::take(&mut ctx.history);
    let rate_alloc = RateAllocation {
        private_rate: current.xi_p.iter().map(|v| v * b).collect(),
        common_rate: current.xi_c.iter().map(|v| v * b).collect(),
    };
    let achievable = rates::achievable_rates(scenario, &current.beams, grouping);
    let qos_residual_bps = (0..k)
        .map(|u| (rate_alloc.user_total(u) - partition.target_bps(u, cfg)).abs())
        .fold(0.0, f64::max);
    let rate_excess_bps = (0..k)
        .flat_map(|u| {
            [
                rate_alloc.private_rate[u] - achievable.private_rate[u],
                rate_alloc.common_rate[u] - achievable.common_rate[u],
            ]
        })
        .fold(0.0, f64::max);
    let transmit_power_w = rates::total_transmit_power(&current.beams);
    let power_excess_rel = (transmit_power_w / p_avail_w - 1.0).max(0.0);
    let feasible = converged
        && qos_residual_bps <= opts.qos_tol_rel * cfg.r_sd_bps
        && power_excess_rel <= opts.power_tol_rel
        && rate_excess_bps <= opts.rate_eps_rel * cfg.r_sd_bps;
    let slacks = current.slacks.clone().unwrap_or_else(|| {
        let p = Linearization::at(scenario, grouping, &current.beams, opts.eps_floor);
        SlackState {
            t_p: p.t_p,
            t_c: p.t_c,
            beta_p: p.beta_p,
            beta_c: p.beta_c,
        }
    });

    Ok(Solution {
        ee: rates::energy_efficiency(&rate_alloc, transmit_power_w, p_circ),
        beams: current.beams,
        rates: rate_alloc,
        slacks,
        lambda: lambda * b,
        lambda_history: lambda_history.iter().map(|l| l * b).collect(),
        dinkelbach_residual: residual,
        transmit_power_w,
        p_avail_w,
        partition: partition.clone(),
        feasible: FeasibilityReport {
            qos_residual_bps,
            power_excess_rel,
            rate_excess_bps,
            converged,
            feasible,
        },
        iterations: counts,
        history,
    })
}
