//! Exact SINR, rate, power and energy-efficiency evaluation for a fixed set
//! of beamformers.
//!
//! The common message of `owner` is decoded at every `rx` in `M_owner`. While
//! decoding it, `rx` still sees all private streams, every common stream
//! outside `Z_rx`, and the members of `Z_rx` that come later in its SIC order.
//! The private stream is decoded after all of `Z_rx` has been cancelled.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::grouping::GroupingResult;
use crate::scenario::Scenario;

/// Private and common beamformers, one pair per user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    n_tx: usize,
    private: Vec<Vec<Complex64>>,
    common: Vec<Vec<Complex64>>,
    private_active: Vec<bool>,
    common_active: Vec<bool>,
}

impl BeamformerSet {
    /// All beams active and zero.
    pub fn zeros(n_users: usize, n_tx: usize) -> Self {
        BeamformerSet {
            n_tx,
            private: vec![vec![Complex64::new(0.0, 0.0); n_tx]; n_users],
            common: vec![vec![Complex64::new(0.0, 0.0); n_tx]; n_users],
            private_active: vec![true; n_users],
            common_active: vec![true; n_users],
        }
    }

    /// All beams active.
    pub fn new(private: Vec<Vec<Complex64>>, common: Vec<Vec<Complex64>>) -> Result<Self> {
        if private.len() != common.len() || private.is_empty() {
            return invalid("need one private and one common beam per user");
        }
        let n_tx = private[0].len();
        if private.iter().chain(&common).any(|w| w.len() != n_tx) {
            return invalid("beamformers must all have the same length");
        }
        if private
            .iter()
            .chain(&common)
            .flatten()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return invalid("beamformers must be finite");
        }
        let k = private.len();
        Ok(BeamformerSet {
            n_tx,
            private,
            common,
            private_active: vec![true; k],
            common_active: vec![true; k],
        })
    }

    pub fn n_users(&self) -> usize {
        self.private.len()
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn private(&self, k: usize) -> &[Complex64] {
        &self.private[k]
    }

    pub fn common(&self, k: usize) -> &[Complex64] {
        &self.common[k]
    }

    pub fn private_active(&self, k: usize) -> bool {
        self.private_active[k]
    }

    pub fn common_active(&self, k: usize) -> bool {
        self.common_active[k]
    }

    /// Overwrites the private beam of an active user.
    pub fn set_private(&mut self, k: usize, w: Vec<Complex64>) {
        assert_eq!(w.len(), self.n_tx);
        if self.private_active[k] {
            self.private[k] = w;
        }
    }

    /// Overwrites the common beam of an active user.
    pub fn set_common(&mut self, k: usize, w: Vec<Complex64>) {
        assert_eq!(w.len(), self.n_tx);
        if self.common_active[k] {
            self.common[k] = w;
        }
    }

    /// Removes user `k` from the private-message set and zeroes its beam.
    pub fn deactivate_private(&mut self, k: usize) {
        self.private_active[k] = false;
        self.private[k].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    }

    pub fn deactivate_common(&mut self, k: usize) {
        self.common_active[k] = false;
        self.common[k].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    }

    pub fn private_power(&self, k: usize) -> f64 {
        norm_sqr(&self.private[k])
    }

    pub fn common_power(&self, k: usize) -> f64 {
        norm_sqr(&self.common[k])
    }

    pub fn total_private_power(&self) -> f64 {
        (0..self.n_users()).map(|k| self.private_power(k)).sum()
    }

    pub fn beam(&self, stream: Stream) -> &[Complex64] {
        match stream {
            Stream::Private(k) => &self.private[k],
            Stream::Common(k) => &self.common[k],
        }
    }

    pub fn is_active(&self, stream: Stream) -> bool {
        match stream {
            Stream::Private(k) => self.private_active[k],
            Stream::Common(k) => self.common_active[k],
        }
    }
}

/// A transmitted stream, identified by its owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Private(usize),
    Common(usize),
}

/// Per-user achievable (or allocated) rates in bit/s.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    pub private_rate: Vec<f64>,
    pub common_rate: Vec<f64>,
}

impl RateAllocation {
    pub fn zeros(n_users: usize) -> Self {
        RateAllocation {
            private_rate: vec![0.0; n_users],
            common_rate: vec![0.0; n_users],
        }
    }

    pub fn user_total(&self, k: usize) -> f64 {
        self.private_rate[k] + self.common_rate[k]
    }

    pub fn sum_private(&self) -> f64 {
        self.private_rate.iter().sum()
    }

    pub fn sum_common(&self) -> f64 {
        self.common_rate.iter().sum()
    }

    pub fn sum_rate(&self) -> f64 {
        self.sum_private() + self.sum_common()
    }

    /// Common share of the total rate in percent; 0 when nothing is delivered.
    pub fn common_share_pct(&self) -> f64 {
        let total = self.sum_rate();
        if total > 0.0 {
            100.0 * self.sum_common() / total
        } else {
            0.0
        }
    }
}

fn norm_sqr(w: &[Complex64]) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// `|h^H w|^2`.
pub fn received_power(h: &[Complex64], w: &[Complex64]) -> f64 {
    h.iter()
        .zip(w)
        .map(|(a, b)| a.conj() * b)
        .sum::<Complex64>()
        .norm_sqr()
}

pub fn total_transmit_power(beams: &BeamformerSet) -> f64 {
    (0..beams.n_users())
        .map(|k| beams.private_power(k) + beams.common_power(k))
        .sum()
}

/// Streams that interfere at `rx` while it decodes its private message.
pub fn private_interferers(beams: &BeamformerSet, grouping: &GroupingResult, rx: usize) -> Vec<Stream> {
    let k = beams.n_users();
    let mut out = Vec::with_capacity(2 * k);
    out.extend(
        (0..k)
            .filter(|&j| j != rx && beams.private_active(j))
            .map(Stream::Private),
    );
    out.extend(
        (0..k)
            .filter(|&l| beams.common_active(l) && !grouping.is_decoded_by(l, rx))
            .map(Stream::Common),
    );
    out
}

/// Streams that interfere at `rx` while it decodes the common message of
/// `owner`; `None` when `owner` is not in `Z_rx`.
pub fn common_interferers(
    beams: &BeamformerSet,
    grouping: &GroupingResult,
    rx: usize,
    owner: usize,
) -> Option<Vec<Stream>> {
    let pending = grouping.pending_after(rx, owner)?;
    let k = beams.n_users();
    let mut out = Vec::with_capacity(2 * k);
    out.extend((0..k).filter(|&j| beams.private_active(j)).map(Stream::Private));
    out.extend(
        (0..k)
            .filter(|&l| beams.common_active(l) && !grouping.is_decoded_by(l, rx))
            .map(Stream::Common),
    );
    out.extend(
        pending
            .iter()
            .copied()
            .filter(|&m| beams.common_active(m))
            .map(Stream::Common),
    );
    Some(out)
}

/// Signal power and interference-plus-noise power, in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrParts {
    pub signal: f64,
    pub denominator: f64,
}

impl SinrParts {
    pub fn sinr(&self) -> f64 {
        self.signal / self.denominator
    }
}

fn parts(scenario: &Scenario, beams: &BeamformerSet, rx: usize, desired: Stream, interferers: &[Stream]) -> SinrParts {
    let h = scenario.channel().column(rx);
    let signal = received_power(h, beams.beam(desired));
    let denominator = scenario.noise_w()[rx]
        + interferers
            .iter()
            .map(|&s| received_power(h, beams.beam(s)))
            .sum::<f64>();
    SinrParts { signal, denominator }
}

pub fn private_sinr_parts(scenario: &Scenario, beams: &BeamformerSet, grouping: &GroupingResult, k: usize) -> SinrParts {
    let interferers = private_interferers(beams, grouping, k);
    parts(scenario, beams, k, Stream::Private(k), &interferers)
}

pub fn common_sinr_parts(
    scenario: &Scenario,
    beams: &BeamformerSet,
    grouping: &GroupingResult,
    k: usize,
    owner: usize,
) -> Result<SinrParts> {
    match common_interferers(beams, grouping, k, owner) {
        Some(interferers) => Ok(parts(scenario, beams, k, Stream::Common(owner), &interferers)),
        None => invalid(format!("user {k} does not decode the common message of user {owner}")),
    }
}

/// SINR at user `k` for the common message of `owner` (`owner` must be in `Z_k`).
pub fn common_sinr(
    scenario: &Scenario,
    beams: &BeamformerSet,
    grouping: &GroupingResult,
    k: usize,
    owner: usize,
) -> Result<f64> {
    common_sinr_parts(scenario, beams, grouping, k, owner).map(|p| p.sinr())
}

/// SINR of the private stream of user `k` after all of `Z_k` is cancelled.
pub fn private_sinr(scenario: &Scenario, beams: &BeamformerSet, grouping: &GroupingResult, k: usize) -> f64 {
    private_sinr_parts(scenario, beams, grouping, k).sinr()
}

/// Private rate `B log2(1 + SINR_p)` and common rate as the minimum over
/// every decoder of the message.
pub fn achievable_rates(scenario: &Scenario, beams: &BeamformerSet, grouping: &GroupingResult) -> RateAllocation {
    let b = scenario.config().bandwidth_hz;
    let k = scenario.n_users();
    let mut rates = RateAllocation::zeros(k);
    for user in 0..k {
        if beams.private_active(user) {
            rates.private_rate[user] = b * private_sinr(scenario, beams, grouping, user).log2_1p();
        }
        if beams.common_active(user) {
            rates.common_rate[user] = grouping
                .decoded_by(user)
                .iter()
                .map(|&rx| {
                    let sinr = common_sinr(scenario, beams, grouping, rx, user)
                        .expect("decoded_by and decodes are dual");
                    b * sinr.log2_1p()
                })
                .fold(f64::INFINITY, f64::min);
        }
    }
    rates
}

/// Total delivered rate over total consumed power, bit/J.
pub fn energy_efficiency(rates: &RateAllocation, transmit_power_w: f64, circuit_power_w: f64) -> f64 {
    rates.sum_rate() / (transmit_power_w + circuit_power_w)
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelMatrix, SystemConfig};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_user() -> (Scenario, GroupingResult) {
        let cfg = SystemConfig {
            n_tx: 2,
            n_users: 2,
            ..SystemConfig::default()
        };
        let h = ChannelMatrix::from_columns(vec![
            vec![c(1.0, 0.5), c(-0.3, 0.2)],
            vec![c(0.2, -0.1), c(0.7, 0.4)],
        ])
        .unwrap();
        let s = Scenario::from_parts(cfg, vec![[100.0, 0.0], [0.0, 120.0]], h, vec![0.1, 0.2]).unwrap();
        let g = GroupingResult::from_decode_orders(vec![vec![1, 0], vec![1]], 2).unwrap();
        (s, g)
    }

    #[test]
    fn transmit_power() {
        let mut b = BeamformerSet::zeros(2, 2);
        assert_eq!(total_transmit_power(&b), 0.0);
        b.set_private(0, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(total_transmit_power(&b), 1.0);
        let mut b = BeamformerSet::zeros(1, 2);
        let r = 1.0 / 2f64.sqrt();
        b.set_private(0, vec![c(r, 0.0), c(r, 0.0)]);
        b.set_common(0, vec![c(0.0, 0.0), c(0.0, 2.0)]);
        assert!((total_transmit_power(&b) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn interference_free_common_sinr() {
        let (s, g) = two_user();
        let mut b = BeamformerSet::zeros(2, 2);
        b.set_common(1, vec![c(0.4, 0.1), c(0.2, -0.3)]);
        for rx in [0, 1] {
            let expected = received_power(s.channel().column(rx), b.common(1)) / s.noise_w()[rx];
            let got = common_sinr(&s, &b, &g, rx, 1).unwrap();
            assert!((got - expected).abs() <= 1e-14 * expected);
        }
        assert!(common_sinr(&s, &b, &g, 1, 0).is_err());
    }

    #[test]
    fn common_sinr_high_power_limit() {
        let (s, g) = two_user();
        let base = BeamformerSet::new(
            vec![vec![c(0.3, 0.1), c(-0.2, 0.4)], vec![c(0.1, 0.1), c(0.5, -0.2)]],
            vec![vec![c(0.2, -0.3), c(0.3, 0.3)], vec![c(0.6, 0.0), c(0.1, 0.2)]],
        )
        .unwrap();
        let scaled = |f: f64| {
            let sc = |w: &[Complex64]| w.iter().map(|z| z * f).collect::<Vec<_>>();
            BeamformerSet::new(
                (0..2).map(|k| sc(base.private(k))).collect(),
                (0..2).map(|k| sc(base.common(k))).collect(),
            )
            .unwrap()
        };
        let h = s.channel().column(0);
        // interference-only limit: user 0 decoding owner 1 sees both private beams and its own common
        let sig = received_power(h, base.common(1));
        let intf = received_power(h, base.private(0)) + received_power(h, base.private(1)) + received_power(h, base.common(0));
        let limit = sig / intf;
        let got = common_sinr(&s, &scaled(1e6), &g, 0, 1).unwrap();
        assert!(((got - limit) / limit).abs() < 1e-3);
        let low = common_sinr(&s, &scaled(1.0), &g, 0, 1).unwrap();
        assert!(low < got);
    }

    #[test]
    fn mrt_single_user_closed_form() {
        let cfg = SystemConfig {
            n_tx: 3,
            n_users: 1,
            ..SystemConfig::default()
        };
        let h = vec![c(0.3, -0.2), c(0.1, 0.9), c(-0.5, 0.4)];
        let hn: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let s = Scenario::from_parts(cfg, vec![[50.0, 50.0]], ChannelMatrix::from_columns(vec![h.clone()]).unwrap(), vec![0.01]).unwrap();
        let g = GroupingResult::singletons(1, 2);
        let p = 2.5;
        let w: Vec<Complex64> = h.iter().map(|z| z * (p / hn).sqrt()).collect();
        let mut b = BeamformerSet::zeros(1, 3);
        b.set_private(0, w);
        let got = private_sinr(&s, &b, &g, 0);
        assert!((got - p * hn / 0.01).abs() < 1e-9 * got);
        b.deactivate_private(0);
        assert_eq!(private_sinr(&s, &b, &g, 0), 0.0);
        assert!(!b.private_active(0));
    }

    #[test]
    fn min_rule_and_unit_sinr() {
        // common message of user 1 decoded by both users; shape the beams so
        // user 0 sees SINR 3 and user 1 sees SINR 1.
        let cfg = SystemConfig {
            n_tx: 2,
            n_users: 2,
            ..SystemConfig::default()
        };
        let h = ChannelMatrix::from_real_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = Scenario::from_parts(cfg, vec![[100.0, 0.0], [0.0, 120.0]], h, vec![1.0, 1.0]).unwrap();
        let g = GroupingResult::from_decode_orders(vec![vec![1, 0], vec![1]], 2).unwrap();
        let mut b = BeamformerSet::zeros(2, 2);
        b.set_common(1, vec![c(3f64.sqrt(), 0.0), c(1.0, 0.0)]);
        let r = achievable_rates(&s, &b, &g);
        assert!((r.common_rate[1] - 10e6).abs() < 1e-6);
        assert_eq!(r.common_rate[0], 0.0);
        assert_eq!(r.private_rate, vec![0.0, 0.0]);
        let zero = achievable_rates(&s, &BeamformerSet::zeros(2, 2), &g);
        assert_eq!(zero.sum_rate(), 0.0);
    }

    #[test]
    fn energy_efficiency_anchors() {
        let zero = RateAllocation::zeros(3);
        assert_eq!(energy_efficiency(&zero, 1.0, 1.0), 0.0);
        let r = RateAllocation {
            private_rate: vec![40e6, 16e6],
            common_rate: vec![20e6, 20e6],
        };
        let ee = energy_efficiency(&r, 3.16228, 5.01187);
        assert!((ee / 1e6 - 11.745).abs() < 1e-3);
        let doubled = RateAllocation {
            private_rate: r.private_rate.iter().map(|x| 2.0 * x).collect(),
            common_rate: r.common_rate.iter().map(|x| 2.0 * x).collect(),
        };
        assert_eq!(energy_efficiency(&doubled, 3.16228, 5.01187), 2.0 * ee);
        assert!((r.common_share_pct() - 40.0 / 96.0 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn interferer_lists_follow_sic_order() {
        let (_, g) = two_user();
        let b = BeamformerSet::zeros(2, 2);
        // user 0 decodes [1, 0]; while decoding 1 its own common is still present
        let l = common_interferers(&b, &g, 0, 1).unwrap();
        assert_eq!(l, vec![Stream::Private(0), Stream::Private(1), Stream::Common(0)]);
        let l = common_interferers(&b, &g, 0, 0).unwrap();
        assert_eq!(l, vec![Stream::Private(0), Stream::Private(1)]);
        let l = private_interferers(&b, &g, 1);
        assert_eq!(l, vec![Stream::Private(0), Stream::Common(0)]);
        assert!(common_interferers(&b, &g, 1, 0).is_none());
    }
}
