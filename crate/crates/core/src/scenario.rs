//! Synthetic downlink scenarios: user drop, pathloss, Rayleigh fading and
//! noise, plus the dBm/watt conversions used at the I/O boundary.
//!
//! Everything inside the crate works in watts and bit/s. dBm and Mbit/s only
//! appear in [`SystemConfig`] and in the CSV writers.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Pathloss intercept at 1 km, dB.
pub const PATHLOSS_INTERCEPT_DB: f64 = 148.1;
/// Pathloss slope, dB per decade of distance.
pub const PATHLOSS_SLOPE_DB: f64 = 37.6;

pub fn dbm_to_watts(level_dbm: f64) -> Result<f64> {
    if !level_dbm.is_finite() {
        return invalid(format!("power level {level_dbm} dBm is not finite"));
    }
    Ok(10f64.powf((level_dbm - 30.0) / 10.0))
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Static parameters of one downlink cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_users: usize,
    pub p_tr_dbm: f64,
    pub p_circ_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub r_hd_bps: f64,
    pub r_sd_bps: f64,
    pub decode_layers: usize,
    pub area_half_m: f64,
    pub min_bs_distance_m: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_tx: 8,
            n_users: 12,
            p_tr_dbm: 35.0,
            p_circ_dbm: 37.0,
            bandwidth_hz: 10e6,
            noise_dbm: -102.0,
            r_hd_bps: 8e6,
            r_sd_bps: 4e6,
            decode_layers: 2,
            area_half_m: 250.0,
            min_bs_distance_m: 10.0,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_users == 0 || self.decode_layers == 0 {
            return invalid("n_tx, n_users and decode_layers must all be at least 1");
        }
        if !(self.r_sd_bps > 0.0 && self.r_hd_bps > self.r_sd_bps) {
            return invalid(format!(
                "rate tiers must satisfy r_hd_bps > r_sd_bps > 0 (got {} and {})",
                self.r_hd_bps, self.r_sd_bps
            ));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return invalid("bandwidth_hz must be positive and finite");
        }
        for (name, v) in [
            ("p_tr_dbm", self.p_tr_dbm),
            ("p_circ_dbm", self.p_circ_dbm),
            ("noise_dbm", self.noise_dbm),
        ] {
            if !v.is_finite() {
                return invalid(format!("{name} must be finite"));
            }
        }
        if !(self.min_bs_distance_m > 0.0 && self.area_half_m > self.min_bs_distance_m) {
            return invalid("deployment area must be larger than the BS exclusion radius");
        }
        Ok(())
    }

    pub fn p_tr_w(&self) -> f64 {
        10f64.powf((self.p_tr_dbm - 30.0) / 10.0)
    }

    pub fn p_circ_w(&self) -> f64 {
        10f64.powf((self.p_circ_dbm - 30.0) / 10.0)
    }

    pub fn noise_w(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SystemConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Complex `N x K` matrix stored column-major; column `k` is the channel of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_tx: usize,
    n_users: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn from_columns(columns: Vec<Vec<Complex64>>) -> Result<Self> {
        let n_users = columns.len();
        if n_users == 0 {
            return invalid("channel matrix needs at least one column");
        }
        let n_tx = columns[0].len();
        if n_tx == 0 || columns.iter().any(|c| c.len() != n_tx) {
            return invalid("channel columns must be non-empty and of equal length");
        }
        let data: Vec<Complex64> = columns.into_iter().flatten().collect();
        Ok(ChannelMatrix {
            n_tx,
            n_users,
            data,
        })
    }

    /// Real-valued channel, convenient for small hand-built instances.
    pub fn from_real_columns(columns: &[Vec<f64>]) -> Result<Self> {
        Self::from_columns(
            columns
                .iter()
                .map(|c| c.iter().map(|&x| Complex64::new(x, 0.0)).collect())
                .collect(),
        )
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn column(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.n_tx..(k + 1) * self.n_tx]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks(self.n_tx)
    }

    pub fn column_norm_sqr(&self, k: usize) -> f64 {
        self.column(k).iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One immutable problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    config: SystemConfig,
    positions: Vec<[f64; 2]>,
    channel: ChannelMatrix,
    noise_w: Vec<f64>,
}

impl Scenario {
    /// Assembles a scenario from explicit parts, checking every invariant.
    pub fn from_parts(
        config: SystemConfig,
        positions: Vec<[f64; 2]>,
        channel: ChannelMatrix,
        noise_w: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.n_users;
        if channel.n_users() != k || channel.n_tx() != config.n_tx {
            return invalid(format!(
                "channel is {}x{}, config expects {}x{}",
                channel.n_tx(),
                channel.n_users(),
                config.n_tx,
                k
            ));
        }
        if positions.len() != k || noise_w.len() != k {
            return invalid("positions and noise powers need one entry per user");
        }
        if channel.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("channel contains non-finite entries");
        }
        for u in 0..k {
            if channel.column_norm_sqr(u) <= 0.0 {
                return invalid(format!("channel of user {u} is identically zero"));
            }
        }
        if noise_w.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return invalid("noise powers must be positive and finite");
        }
        for (u, p) in positions.iter().enumerate() {
            let inside = p[0].abs() <= config.area_half_m && p[1].abs() <= config.area_half_m;
            if !inside || p[0].hypot(p[1]) < config.min_bs_distance_m {
                return invalid(format!("user {u} position {p:?} is outside the deployment area"));
            }
        }
        Ok(Scenario {
            config,
            positions,
            channel,
            noise_w,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn channel(&self) -> &ChannelMatrix {
        &self.channel
    }

    pub fn noise_w(&self) -> &[f64] {
        &self.noise_w
    }

    pub fn n_users(&self) -> usize {
        self.config.n_users
    }

    pub fn n_tx(&self) -> usize {
        self.config.n_tx
    }

    pub fn distance(&self, k: usize) -> f64 {
        let p = self.positions[k];
        p[0].hypot(p[1])
    }

    /// Debug export: `index,x,y,distance,gain` with `gain = ||h_k||^2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "x", "y", "distance", "gain"])?;
        for k in 0..self.n_users() {
            let p = self.positions[k];
            w.write_record([
                k.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                self.distance(k).to_string(),
                self.channel.column_norm_sqr(k).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Log-distance pathloss in dB; `distance_m` in meters.
pub fn pathloss_db(distance_m: f64) -> f64 {
    PATHLOSS_INTERCEPT_DB + PATHLOSS_SLOPE_DB * (distance_m / 1000.0).log10()
}

/// Linear power gain `10^(-PL_dB/10)`.
pub fn pathloss(distance_m: f64, min_distance_m: f64) -> Result<f64> {
    if !distance_m.is_finite() || distance_m < min_distance_m {
        return invalid(format!(
            "distance {distance_m} m is inside the {min_distance_m} m exclusion radius"
        ));
    }
    Ok(10f64.powf(-pathloss_db(distance_m) / 10.0))
}

/// Draws `n_tx` i.i.d. CN(0, gain) coefficients.
pub fn rayleigh_column<R: Rng + ?Sized>(rng: &mut R, n_tx: usize, gain: f64) -> Vec<Complex64> {
    let amp = (gain / 2.0).sqrt();
    (0..n_tx)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(amp * re, amp * im)
        })
        .collect()
}

/// Drops users uniformly in the square minus the exclusion disk and draws
/// their channels. Pure function of `config` (including its seed).
pub fn generate_scenario(config: &SystemConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = config.area_half_m;
    let noise = config.noise_w();

    let mut positions = Vec::with_capacity(config.n_users);
    let mut columns = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let pos = loop {
            let x = rng.random_range(-a..=a);
            let y = rng.random_range(-a..=a);
            if f64::hypot(x, y) >= config.min_bs_distance_m {
                break [x, y];
            }
        };
        let gain = pathloss(pos[0].hypot(pos[1]), config.min_bs_distance_m)?;
        columns.push(rayleigh_column(&mut rng, config.n_tx, gain));
        positions.push(pos);
    }
    let channel = ChannelMatrix::from_columns(columns)?;
    Scenario::from_parts(
        config.clone(),
        positions,
        channel,
        vec![noise; config.n_users],
    )
}
