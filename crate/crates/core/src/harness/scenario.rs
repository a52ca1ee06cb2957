//! Scenario files: flat TOML key/value pairs in SI units.

use serde::Deserialize;

use crate::channel::LinkProfile;
use crate::delay_gain::{DelayCost, EstimatorConfig, PsiModel};
use crate::detector::{DetectorKind, QrUpdate};
use crate::signal::{OfdmConfig, Pulse};
use crate::{Error, Result};

/// Channel-state information used by the detectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CsiMode {
    Exact,
    Estimated,
}

impl CsiMode {
    pub fn name(&self) -> &'static str {
        match self {
            CsiMode::Exact => "exact",
            CsiMode::Estimated => "estimated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(CsiMode::Exact),
            "estimated" => Ok(CsiMode::Estimated),
            other => Err(Error::Config(format!("unknown csi mode '{other}'"))),
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}
fn default_sample_rate() -> f64 {
    625e3
}
fn default_m() -> usize {
    16
}
fn default_l_cp() -> usize {
    4
}
fn default_f0() -> f64 {
    27e9
}
fn default_pulse() -> String {
    "triangle".into()
}
fn default_noise_dbm() -> f64 {
    -113.0
}
fn default_sjr() -> Vec<f64> {
    vec![0.0]
}
fn default_distance() -> f64 {
    100.0
}
fn default_v_u() -> f64 {
    10.0
}
fn default_v_j() -> f64 {
    20.0
}
fn default_paths() -> usize {
    2
}
fn default_n_blocks() -> usize {
    1 << 14
}
fn default_runs() -> usize {
    200
}
fn default_seed() -> u64 {
    1
}
fn default_csi() -> Vec<String> {
    vec!["exact".into(), "estimated".into()]
}
fn default_detectors() -> Vec<String> {
    vec!["sic".into(), "sic-ju".into(), "mmse".into()]
}
fn default_qr_update() -> String {
    "downdate".into()
}
fn default_psi_model() -> String {
    "sampled".into()
}
fn default_delay_cost() -> String {
    "pulse-matched".into()
}
fn default_probe_blocks() -> usize {
    64
}
fn default_polarity_blocks() -> usize {
    16
}

/// Raw scenario as written in the file. Unknown keys are rejected.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    /// `1/T_c` in Hz.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_l_cp")]
    pub l_cp: usize,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default = "default_pulse")]
    pub pulse: String,
    /// Noise power `sigma_w^2` in dBm.
    #[serde(default = "default_noise_dbm")]
    pub noise_dbm: f64,
    /// Generate blocks without noise; gains are still set relative to `noise_dbm`.
    #[serde(default)]
    pub noise_free: bool,
    /// SNR points `sigma_U^2 / sigma_w^2` in dB. Exclusive with `p_u_dbm`.
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    /// UAV transmit powers in dBm, mapped to gain variance through path loss.
    #[serde(default)]
    pub p_u_dbm: Option<Vec<f64>>,
    /// SJR points `sigma_U^2 / sigma_J^2` in dB.
    #[serde(default = "default_sjr")]
    pub sjr_db: Vec<f64>,
    #[serde(default = "default_distance")]
    pub d_u: f64,
    #[serde(default = "default_distance")]
    pub d_j: f64,
    #[serde(default = "default_v_u")]
    pub v_u: f64,
    #[serde(default = "default_v_j")]
    pub v_j: f64,
    #[serde(default = "default_paths")]
    pub k_u: usize,
    #[serde(default = "default_paths")]
    pub k_j: usize,
    /// Maximum UAV path delay in seconds (default `3 T_c`).
    #[serde(default)]
    pub delta_u: Option<f64>,
    /// Maximum jammer path delay in seconds (default `3 T_c`).
    #[serde(default)]
    pub delta_j: Option<f64>,
    /// Slope of the exponential delay profile in seconds (default `2 T_c`).
    #[serde(default)]
    pub tau_slope: Option<f64>,
    /// Blocks generated per run; all of them feed the estimators.
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    /// Leading blocks passed to the detectors (default: all).
    #[serde(default)]
    pub detect_blocks: Option<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_csi")]
    pub csi: Vec<String>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<String>,
    #[serde(default = "default_qr_update")]
    pub qr_update: String,
    #[serde(default = "default_psi_model")]
    pub psi_model: String,
    #[serde(default = "default_delay_cost")]
    pub delay_cost: String,
    /// Blocks used to pick gain signs.
    #[serde(default = "default_probe_blocks")]
    pub probe_blocks: usize,
    /// Leading blocks used to align per-link BPSK polarity when scoring
    /// estimated-CSI detection.
    #[serde(default = "default_polarity_blocks")]
    pub polarity_blocks: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

/// One (SJR, SNR) operating point in internal units where `sigma_w^2 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub sjr_db: f64,
    pub snr_db: f64,
    pub gain_var_u: f64,
    pub gain_var_j: f64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn undb(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// OFDM parameters with noise variance in internal units.
    pub fn ofdm(&self) -> Result<OfdmConfig> {
        let mut cfg = OfdmConfig::new(self.m, self.l_cp, self.sample_rate);
        cfg.f0 = self.f0;
        cfg.pulse = Pulse::parse(&self.pulse)?;
        cfg.noise_var = if self.noise_free { 0.0 } else { 1.0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn delta_u(&self) -> f64 {
        self.delta_u.unwrap_or(3.0 / self.sample_rate)
    }

    pub fn delta_j(&self) -> f64 {
        self.delta_j.unwrap_or(3.0 / self.sample_rate)
    }

    pub fn tau_slope(&self) -> f64 {
        self.tau_slope.unwrap_or(2.0 / self.sample_rate)
    }

    pub fn detect_blocks(&self) -> usize {
        self.detect_blocks.unwrap_or(self.n_blocks).min(self.n_blocks)
    }

    /// Unit-variance draw profiles; gains are rescaled per operating point.
    pub fn profiles(&self) -> (LinkProfile, LinkProfile) {
        let tau_slope = self.tau_slope();
        let u = LinkProfile {
            paths: self.k_u,
            gain_var: 1.0,
            delay_spread: self.delta_u(),
            tau_slope,
            max_doppler: LinkProfile::max_doppler_for(self.v_u, self.f0),
        };
        let j = LinkProfile {
            paths: self.k_j,
            gain_var: 1.0,
            delay_spread: self.delta_j(),
            tau_slope,
            max_doppler: LinkProfile::max_doppler_for(self.v_j, self.f0),
        };
        (u, j)
    }

    /// Operating points in SJR-major order.
    pub fn points(&self) -> Vec<OperatingPoint> {
        let noise_w = dbm_to_watts(self.noise_dbm);
        let snrs: Vec<f64> = match (&self.snr_db, &self.p_u_dbm) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => p
                .iter()
                .map(|&dbm| db(crate::channel::path_loss_variance(dbm_to_watts(dbm), self.d_u, self.f0) / noise_w))
                .collect(),
            (None, None) => vec![db(crate::channel::path_loss_variance(dbm_to_watts(10.0), self.d_u, self.f0) / noise_w)],
        };
        let mut out = Vec::new();
        for &sjr in &self.sjr_db {
            for &snr in &snrs {
                let gu = undb(snr);
                out.push(OperatingPoint { sjr_db: sjr, snr_db: snr, gain_var_u: gu, gain_var_j: gu / undb(sjr) });
            }
        }
        out
    }

    pub fn csi_modes(&self) -> Result<Vec<CsiMode>> {
        let mut v = self.csi.iter().map(|s| CsiMode::parse(s)).collect::<Result<Vec<_>>>()?;
        v.sort();
        v.dedup();
        Ok(v)
    }

    pub fn detector_kinds(&self) -> Result<Vec<DetectorKind>> {
        let mut out: Vec<DetectorKind> = Vec::new();
        for s in &self.detectors {
            let k = DetectorKind::parse(s)?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        Ok(out)
    }

    pub fn qr_update(&self) -> Result<QrUpdate> {
        match self.qr_update.trim().to_ascii_lowercase().as_str() {
            "downdate" => Ok(QrUpdate::Downdate),
            "recompute" => Ok(QrUpdate::Recompute),
            other => Err(Error::Config(format!("unknown qr_update '{other}'"))),
        }
    }

    pub fn estimator(&self) -> Result<EstimatorConfig> {
        let mut e = EstimatorConfig::new(self.k_u, self.delta_u().max(self.delta_j()));
        e.psi_model = match self.psi_model.trim().to_ascii_lowercase().as_str() {
            "sampled" => PsiModel::Sampled,
            "band-limited" | "bandlimited" => PsiModel::BandLimited,
            other => return Err(Error::Config(format!("unknown psi_model '{other}'"))),
        };
        e.delay.cost = match self.delay_cost.trim().to_ascii_lowercase().as_str() {
            "pulse-matched" => DelayCost::PulseMatched,
            "band-limited" | "bandlimited" => DelayCost::BandLimited,
            other => return Err(Error::Config(format!("unknown delay_cost '{other}'"))),
        };
        e.probe_blocks = self.probe_blocks;
        Ok(e)
    }

    /// Static checks that do not need a channel draw.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.ofdm()?;
        if self.snr_db.is_some() && self.p_u_dbm.is_some() {
            return Err(Error::Config("give either snr_db or p_u_dbm, not both".into()));
        }
        if self.snr_db.as_ref().is_some_and(|v| v.is_empty()) || self.p_u_dbm.as_ref().is_some_and(|v| v.is_empty()) || self.sjr_db.is_empty() {
            return Err(Error::Config("operating point lists must not be empty".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.sjr_db) || !finite(self.snr_db.as_deref().unwrap_or(&[])) || !finite(self.p_u_dbm.as_deref().unwrap_or(&[])) {
            return Err(Error::Config("operating points must be finite".into()));
        }
        if self.k_u == 0 || self.k_j == 0 {
            return Err(Error::Config("k_u and k_j must be at least 1".into()));
        }
        for (name, v) in [("d_u", self.d_u), ("d_j", self.d_j), ("tau_slope", self.tau_slope())] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("v_u", self.v_u), ("v_j", self.v_j)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        cfg.check_delay_spread(self.delta_u().max(self.delta_j()))?;
        // Pairwise Doppler sums must stay inside (-1/2, 1/2).
        let t = cfg.block_period();
        let nu_max = |v: f64| LinkProfile::max_doppler_for(v, self.f0) * t;
        if 2.0 * nu_max(self.v_u).max(nu_max(self.v_j)) >= 0.5 {
            return Err(Error::Config("speeds too high: Doppler pair sums would wrap".into()));
        }
        if self.n_blocks < 3 || self.runs == 0 {
            return Err(Error::Config("need n_blocks >= 3 and runs >= 1".into()));
        }
        if self.csi.is_empty() || self.detectors.is_empty() {
            return Err(Error::Config("csi and detectors must not be empty".into()));
        }
        self.csi_modes()?;
        self.detector_kinds()?;
        self.qr_update()?;
        self.estimator()?;
        if crate::doppler::peak_count(self.k_u, self.k_j) > 10 {
            return Err(Error::Config("k_u, k_j give more than 10 cycle frequencies".into()));
        }
        Ok(())
    }
}
