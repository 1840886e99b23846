//! Deliberately naive reference implementations for tests.
//!
//! Nothing here calls into the grouping, rates or optimizer code paths; only
//! the domain types are shared.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grouping::GroupingResult;
use crate::optimizer::QosPartition;
use crate::rates::{BeamformerSet, RateAllocation};
use crate::scenario::Scenario;

fn bad(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

/// Group formation by walking the positive off-diagonal entries of `r_ext`
/// in descending order (ties: smaller row, then smaller column).
pub fn replay_grouping(r_ext: &[Vec<f64>], decode_layers: usize) -> Result<GroupingResult> {
    let k = r_ext.len();
    if decode_layers == 0 {
        return Err(bad("decode_layers must be at least 1"));
    }
    for row in r_ext {
        if row.len() != k {
            return Err(bad("matrix must be square"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(bad("matrix has non-finite entries"));
        }
    }

    let mut entries = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i != j && r_ext[i][j] > 0.0 {
                entries.push((r_ext[i][j], i, j));
            }
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut z: Vec<Vec<usize>> = (0..k).map(|u| vec![u]).collect();
    let mut picked = Vec::new();
    for (_, i, j) in entries {
        let mut all_full = true;
        for list in &z {
            if list.len() < decode_layers {
                all_full = false;
            }
        }
        if all_full {
            break;
        }
        let room = z[i].len() < decode_layers;
        let fresh = !z[i].contains(&j);
        let reciprocal = z[j].contains(&i);
        if room && fresh && !reciprocal {
            z[i].insert(0, j);
            picked.push((i, j));
        }
    }
    Ok(GroupingResult::from_decode_orders(z, decode_layers)?.with_assignments(picked))
}

/// Private and common rates from a table of received powers.
///
/// `rx_power[rx][s]` is the power user `rx` receives from stream `s`, with
/// private streams at `0..k` and common streams at `k..2k`; `z[rx]` is the
/// SIC order of user `rx`.
fn rates_from_received(
    rx_power: &[Vec<f64>],
    z: &[Vec<usize>],
    private_on: &[bool],
    noise: &[f64],
    bandwidth: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = z.len();
    let mut private = vec![0.0; k];
    let mut common = vec![f64::INFINITY; k];
    for rx in 0..k {
        let row = &rx_power[rx];
        let mut all_private = 0.0;
        for j in 0..k {
            if private_on[j] {
                all_private += row[j];
            }
        }
        let mut undecoded_common = 0.0;
        for c in 0..k {
            if !z[rx].contains(&c) {
                undecoded_common += row[k + c];
            }
        }

        if private_on[rx] {
            let interference = all_private - row[rx] + undecoded_common;
            let sinr = row[rx] / (noise[rx] + interference);
            private[rx] = bandwidth * sinr.ln_1p() / std::f64::consts::LN_2;
        }

        for (pos, &owner) in z[rx].iter().enumerate() {
            let mut later = 0.0;
            for &m in &z[rx][pos + 1..] {
                later += row[k + m];
            }
            let sinr = row[k + owner] / (noise[rx] + all_private + undecoded_common + later);
            let r = bandwidth * sinr.ln_1p() / std::f64::consts::LN_2;
            if r < common[owner] {
                common[owner] = r;
            }
        }
    }
    for c in common.iter_mut() {
        if c.is_infinite() {
            *c = 0.0;
        }
    }
    (private, common)
}

/// Achievable rates evaluated term by term from the SINR definitions.
pub fn straight_line_rates(scenario: &Scenario, beams: &BeamformerSet, grouping: &GroupingResult) -> RateAllocation {
    let k = scenario.n_users();
    let n = scenario.n_tx();
    let mut rx_power = vec![vec![0.0; 2 * k]; k];
    for rx in 0..k {
        let h = scenario.channel().column(rx);
        for s in 0..2 * k {
            let w = if s < k { beams.private(s) } else { beams.common(s - k) };
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += h[i].conj() * w[i];
            }
            rx_power[rx][s] = acc.re * acc.re + acc.im * acc.im;
        }
    }
    let z: Vec<Vec<usize>> = (0..k).map(|u| grouping.decodes(u).to_vec()).collect();
    let private_on: Vec<bool> = (0..k).map(|u| beams.private_active(u)).collect();
    let (private_rate, common_rate) = rates_from_received(
        &rx_power,
        &z,
        &private_on,
        scenario.noise_w(),
        scenario.config().bandwidth_hz,
    );
    RateAllocation {
        private_rate,
        common_rate,
    }
}

/// Minimum transmit power delivering `rate_bps` to a lone user:
/// `(2^(R/B) - 1) sigma^2 / |h|^2`.
pub fn single_user_min_power(rate_bps: f64, bandwidth_hz: f64, noise_w: f64, channel_gain: f64) -> f64 {
    (2f64.powf(rate_bps / bandwidth_hz) - 1.0) * noise_w / channel_gain
}

/// Grid used by [`grid_search_ee`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchSpec {
    /// Non-zero per-beam power levels in watts (zero is always included).
    pub power_levels: Vec<f64>,
    /// Uniform angles in `[0, pi)` added to the direction set for real
    /// two-antenna channels.
    pub angle_samples: usize,
    /// Pattern-search refinement rounds around the best grid point.
    pub zoom_rounds: usize,
}

impl GridSearchSpec {
    /// `levels` geometric power levels between `budget / 1000` and `budget`.
    pub fn geometric(budget_w: f64, levels: usize, angle_samples: usize, zoom_rounds: usize) -> Self {
        let power_levels = (0..levels)
            .map(|i| {
                let f = if levels > 1 { i as f64 / (levels - 1) as f64 } else { 1.0 };
                budget_w * 10f64.powf(-3.0 * (1.0 - f))
            })
            .collect();
        GridSearchSpec {
            power_levels,
            angle_samples,
            zoom_rounds,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.power_levels.is_empty() || self.power_levels.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(bad("power levels must be positive and non-empty"));
        }
        Ok(())
    }
}

/// Best grid point: its energy efficiency (targets delivered exactly),
/// transmit power and beams.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBest {
    pub ee: f64,
    pub transmit_power_w: f64,
    pub beams: BeamformerSet,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridOutcome {
    Feasible(GridBest),
    NoFeasiblePoint { evaluations: usize },
}

/// Everything the inner evaluation loop needs.
struct Grid<'a> {
    k: usize,
    n: usize,
    /// Stream index (`0..k` private, `k..2k` common) of every beam.
    streams: Vec<usize>,
    z: Vec<Vec<usize>>,
    private_on: Vec<bool>,
    noise: &'a [f64],
    bandwidth: f64,
    targets: Vec<f64>,
    channel: Vec<Vec<Complex64>>,
    evaluations: usize,
}

impl Grid<'_> {
    fn gain(&self, rx: usize, d: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.n {
            acc += self.channel[rx][i].conj() * d[i];
        }
        acc.norm_sqr()
    }

    /// `true` when every user reaches its target with these beams.
    fn feasible(&mut self, gains: &[Vec<f64>], powers: &[f64]) -> bool {
        self.evaluations += 1;
        let k = self.k;
        let mut rx_power = vec![vec![0.0; 2 * k]; k];
        for (b, &s) in self.streams.iter().enumerate() {
            for rx in 0..k {
                rx_power[rx][s] = powers[b] * gains[b][rx];
            }
        }
        let (p, c) = rates_from_received(&rx_power, &self.z, &self.private_on, self.noise, self.bandwidth);
        (0..k).all(|u| p[u] + c[u] >= self.targets[u])
    }

    fn beams(&self, dirs: &[Vec<Complex64>], powers: &[f64]) -> BeamformerSet {
        let mut out = BeamformerSet::zeros(self.k, self.n);
        for u in 0..self.k {
            if !self.private_on[u] {
                out.deactivate_private(u);
            }
        }
        for (b, &s) in self.streams.iter().enumerate() {
            let w: Vec<Complex64> = dirs[b].iter().map(|z| z * powers[b].sqrt()).collect();
            if s < self.k {
                out.set_private(s, w);
            } else {
                out.set_common(s - self.k, w);
            }
        }
        out
    }
}

fn unit(v: &[Complex64]) -> Option<Vec<Complex64>> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (norm > 1e-12).then(|| v.iter().map(|z| z / norm).collect())
}

fn angle_dir(theta: f64) -> Vec<Complex64> {
    vec![Complex64::new(theta.cos(), 0.0), Complex64::new(theta.sin(), 0.0)]
}

/// Exhaustive search over per-beam (direction, power) grid points for tiny
/// instances (`K <= 2`, `N <= 2`), followed by a pattern-search zoom. A point
/// counts when every user's achievable total rate reaches its target; its
/// energy efficiency is the sum of targets over transmit plus circuit power.
pub fn grid_search_ee(
    scenario: &Scenario,
    grouping: &GroupingResult,
    partition: &QosPartition,
    budget_w: f64,
    spec: &GridSearchSpec,
) -> Result<GridOutcome> {
    let k = scenario.n_users();
    let n = scenario.n_tx();
    if k > 2 || n > 2 {
        return Err(bad("grid search supports at most two users and two antennas"));
    }
    if !(budget_w > 0.0) {
        return Err(bad("budget must be positive"));
    }
    spec.validate()?;
    let cfg = scenario.config();
    let channel: Vec<Vec<Complex64>> = (0..k).map(|u| scenario.channel().column(u).to_vec()).collect();
    let real_two = n == 2 && channel.iter().flatten().all(|z| z.im == 0.0);

    // candidate directions
    let mut dirs: Vec<Vec<Complex64>> = Vec::new();
    for h in &channel {
        dirs.extend(unit(h));
    }
    if k == 2 && n == 2 {
        let (a, b) = (&channel[0], &channel[1]);
        let det = a[0] * b[1] - a[1] * b[0];
        if det.norm() > 1e-12 {
            // columns of H^{-H}: each is orthogonal to the other user's channel
            let zf0 = vec![b[1].conj(), -b[0].conj()];
            let zf1 = vec![-a[1].conj(), a[0].conj()];
            dirs.extend(unit(&zf0));
            dirs.extend(unit(&zf1));
        }
        let sum: Vec<Complex64> = (0..n)
            .map(|i| a[i] / a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() + b[i] / b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        dirs.extend(unit(&sum));
    }
    if real_two {
        for m in 0..spec.angle_samples {
            dirs.push(angle_dir(std::f64::consts::PI * m as f64 / spec.angle_samples as f64));
        }
    }

    let mut streams = Vec::new();
    for u in 0..k {
        if partition.is_hd(u) {
            streams.push(u);
        }
    }
    for u in 0..k {
        streams.push(k + u);
    }
    let nb = streams.len();

    let mut grid = Grid {
        k,
        n,
        streams,
        z: (0..k).map(|u| grouping.decodes(u).to_vec()).collect(),
        private_on: (0..k).map(|u| partition.is_hd(u)).collect(),
        noise: scenario.noise_w(),
        bandwidth: cfg.bandwidth_hz,
        targets: (0..k)
            .map(|u| if partition.is_hd(u) { cfg.r_hd_bps } else { cfg.r_sd_bps })
            .collect(),
        channel,
        evaluations: 0,
    };

    // per-beam options: (direction index, power); zero power once
    let mut options: Vec<(usize, f64)> = vec![(0, 0.0)];
    for d in 0..dirs.len() {
        for &p in &spec.power_levels {
            if p <= budget_w {
                options.push((d, p));
            }
        }
    }
    let dir_gains: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| (0..k).map(|rx| grid.gain(rx, d)).collect())
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; nb];
    'outer: loop {
        let power: f64 = idx.iter().map(|&i| options[i].1).sum();
        let better = best.as_ref().map_or(true, |(bp, _)| power < *bp);
        if power <= budget_w && better {
            let gains: Vec<Vec<f64>> = idx.iter().map(|&i| dir_gains[options[i].0].clone()).collect();
            let powers: Vec<f64> = idx.iter().map(|&i| options[i].1).collect();
            if grid.feasible(&gains, &powers) {
                best = Some((power, idx.clone()));
            }
        }
        // odometer increment
        let mut b = 0;
        loop {
            if b == nb {
                break 'outer;
            }
            idx[b] += 1;
            if idx[b] < options.len() {
                break;
            }
            idx[b] = 0;
            b += 1;
        }
    }

    let Some((_, best_idx)) = best else {
        return Ok(GridOutcome::NoFeasiblePoint {
            evaluations: grid.evaluations,
        });
    };

    // pattern-search zoom over powers (and angles for real two-antenna channels)
    let mut powers: Vec<f64> = best_idx.iter().map(|&i| options[i].1).collect();
    let mut cur_dirs: Vec<Vec<Complex64>> = best_idx.iter().map(|&i| dirs[options[i].0].clone()).collect();
    let mut angles: Vec<f64> = cur_dirs
        .iter()
        .map(|d| if real_two { d[1].re.atan2(d[0].re) } else { 0.0 })
        .collect();
    let mut p_step: Vec<f64> = powers.iter().map(|&p| if p > 0.0 { 0.5 * p } else { 0.01 * budget_w }).collect();
    let mut a_step = if real_two && spec.angle_samples > 0 {
        std::f64::consts::PI / spec.angle_samples as f64
    } else {
        0.0
    };
    let moves: Vec<i32> = vec![-1, 0, 1];
    let per_beam = if real_two { 9 } else { 3 };
    let combos = (per_beam as usize).pow(nb as u32);
    for _ in 0..spec.zoom_rounds {
        let mut best_round: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let current_power: f64 = powers.iter().sum();
        for c in 0..combos {
            let mut code = c;
            let mut np = powers.clone();
            let mut na = angles.clone();
            for b in 0..nb {
                let m = code % per_beam;
                code /= per_beam;
                np[b] = (np[b] + moves[m % 3] as f64 * p_step[b]).max(0.0);
                if real_two {
                    na[b] += moves[m / 3] as f64 * a_step;
                }
            }
            let total: f64 = np.iter().sum();
            let target = best_round.as_ref().map_or(current_power, |(p, _, _)| *p);
            if total >= target || total > budget_w {
                continue;
            }
            let gains: Vec<Vec<f64>> = (0..nb)
                .map(|b| {
                    if real_two {
                        let d = angle_dir(na[b]);
                        (0..k).map(|rx| grid.gain(rx, &d)).collect()
                    } else {
                        (0..k).map(|rx| grid.gain(rx, &cur_dirs[b])).collect()
                    }
                })
                .collect();
            if grid.feasible(&gains, &np) {
                best_round = Some((total, np, na));
            }
        }
        match best_round {
            Some((_, np, na)) => {
                powers = np;
                angles = na;
            }
            None => {
                p_step.iter_mut().for_each(|s| *s *= 0.5);
                a_step *= 0.5;
            }
        }
    }
    if real_two {
        cur_dirs = angles.iter().map(|&t| angle_dir(t)).collect();
    }

    let transmit_power_w: f64 = powers.iter().sum();
    let delivered: f64 = grid.targets.iter().sum();
    Ok(GridOutcome::Feasible(GridBest {
        ee: delivered / (transmit_power_w + cfg.p_circ_w()),
        transmit_power_w,
        beams: grid.beams(&cur_dirs, &powers),
        evaluations: grid.evaluations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelMatrix, SystemConfig};

    fn worked_r_ext() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.9, 0.2],
            vec![0.45, 0.5, 0.3],
            vec![0.1, 0.6, 1.0],
        ]
    }

    #[test]
    fn replay_matches_hand_example() {
        let g = replay_grouping(&worked_r_ext(), 2).unwrap();
        assert_eq!(g.decodes(0), &[1, 0]);
        assert_eq!(g.decodes(1), &[1]);
        assert_eq!(g.decodes(2), &[1, 2]);
        assert_eq!(g.assignments(), &[(0, 1), (2, 1)]);
    }

    #[test]
    fn replay_singletons_for_one_layer() {
        let g = replay_grouping(&worked_r_ext(), 1).unwrap();
        for u in 0..3 {
            assert_eq!(g.decodes(u), &[u]);
        }
        assert!(replay_grouping(&worked_r_ext(), 0).is_err());
        assert!(replay_grouping(&[vec![1.0, 0.5]], 2).is_err());
    }

    #[test]
    fn closed_form_anchor() {
        // 2^(8/10) - 1 = 0.7411
        let p = single_user_min_power(8e6, 10e6, 1e-13, 1e-11);
        assert!((p - 0.741101126592248 * 1e-2).abs() < 1e-12);
    }

    fn one_user(gain: f64) -> Scenario {
        let cfg = SystemConfig {
            n_tx: 1,
            n_users: 1,
            ..SystemConfig::default()
        };
        let noise = vec![cfg.noise_w()];
        let ch = ChannelMatrix::from_real_columns(&[vec![gain.sqrt()]]).unwrap();
        Scenario::from_parts(cfg, vec![[100.0, 0.0]], ch, noise).unwrap()
    }

    #[test]
    fn straight_line_single_user() {
        let s = one_user(1e-9);
        let g = GroupingResult::singletons(1, 2);
        let mut b = BeamformerSet::zeros(1, 1);
        b.set_private(0, vec![Complex64::new(0.1, 0.0)]);
        b.set_common(0, vec![Complex64::new(0.0, 0.2)]);
        let r = straight_line_rates(&s, &b, &g);
        let snr = 1e-9 / s.noise_w()[0];
        let bw = s.config().bandwidth_hz;
        assert!((r.common_rate[0] - bw * (1.0 + 0.04 * snr / (1.0 + 0.01 * snr)).log2()).abs() < 1e-6);
        assert!((r.private_rate[0] - bw * (1.0 + 0.01 * snr).log2()).abs() < 1e-6);
    }

    #[test]
    fn grid_single_user_near_closed_form() {
        let s = one_user(2e-12);
        let g = GroupingResult::singletons(1, 2);
        let p = QosPartition::all_hd(1);
        let cfg = s.config();
        let spec = GridSearchSpec::geometric(cfg.p_tr_w(), 12, 0, 60);
        let GridOutcome::Feasible(best) = grid_search_ee(&s, &g, &p, cfg.p_tr_w(), &spec).unwrap() else {
            panic!("expected a feasible point");
        };
        let exact = single_user_min_power(cfg.r_hd_bps, cfg.bandwidth_hz, s.noise_w()[0], 2e-12);
        assert!(best.transmit_power_w >= exact * (1.0 - 1e-9));
        assert!(best.transmit_power_w <= exact * 1.01, "{} vs {exact}", best.transmit_power_w);
    }

    #[test]
    fn grid_reports_infeasibility() {
        let s = one_user(1e-16);
        let g = GroupingResult::singletons(1, 2);
        let p = QosPartition::all_hd(1);
        let spec = GridSearchSpec::geometric(1e-3, 6, 0, 5);
        let out = grid_search_ee(&s, &g, &p, 1e-3, &spec).unwrap();
        assert!(matches!(out, GridOutcome::NoFeasiblePoint { .. }));
    }
}
