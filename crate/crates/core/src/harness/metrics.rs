//! Error counting, throughput, and normalized parameter MSEs.

use crate::channel::LinkParams;
use crate::signal::OfdmConfig;

/// Bit and block error tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BitCounts {
    pub bit_errors: u64,
    pub bits: u64,
    pub error_free_blocks: u64,
    pub blocks: u64,
}

impl BitCounts {
    /// Tally one block of decisions against the transmitted symbols.
    pub fn add_block(&mut self, decided: &[f64], sent: &[f64]) {
        let errs = decided.iter().zip(sent).filter(|(a, b)| a != b).count() as u64;
        self.bit_errors += errs;
        self.bits += sent.len() as u64;
        self.blocks += 1;
        if errs == 0 {
            self.error_free_blocks += 1;
        }
    }

    pub fn merge(&mut self, o: &BitCounts) {
        self.bit_errors += o.bit_errors;
        self.bits += o.bits;
        self.error_free_blocks += o.error_free_blocks;
        self.blocks += o.blocks;
    }

    pub fn aber(&self) -> f64 {
        if self.bits == 0 {
            f64::NAN
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }
}

/// Payload rate `(1/T_c)(M/P)` times the fraction of error-free blocks.
pub fn throughput_from_aber(counts: &BitCounts, cfg: &OfdmConfig) -> f64 {
    if counts.blocks == 0 {
        return f64::NAN;
    }
    if counts.error_free_blocks == counts.blocks {
        return cfg.payload_rate();
    }
    cfg.payload_rate() * counts.error_free_blocks as f64 / counts.blocks as f64
}

/// Per-link MSEs, linear, normalized by `sigma^2`, `D^2`, `Delta^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamMse {
    pub gain: f64,
    pub doppler: f64,
    pub delay: f64,
}

/// Normalizations of one link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseScale {
    pub gain_var: f64,
    /// Maximum Doppler in Hz.
    pub max_doppler: f64,
    /// Maximum delay in seconds.
    pub delay_spread: f64,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Pair estimated paths with true paths by minimal total Doppler distance,
/// then average the normalized squared errors. Gains are compared up to
/// sign. `None` when the path counts differ.
pub fn param_mse(truth: &LinkParams, est: &LinkParams, scale: &MseScale, cfg: &OfdmConfig) -> Option<ParamMse> {
    let k = truth.paths.len();
    if est.paths.len() != k || k == 0 {
        return None;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let cost: f64 = perm.iter().enumerate().map(|(i, &j)| (truth.paths[i].nu - est.paths[j].nu).powi(2)).sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, perm));
        }
    }
    let perm = best?.1;
    let t = cfg.block_period();
    let (mut g, mut d, mut tau) = (0.0, 0.0, 0.0);
    for (i, &j) in perm.iter().enumerate() {
        let (a, b) = (&truth.paths[i], &est.paths[j]);
        g += (a.gain - b.gain).norm_sqr().min((a.gain + b.gain).norm_sqr()) / scale.gain_var;
        d += ((a.nu - b.nu) / t / scale.max_doppler).powi(2);
        tau += ((a.tau - b.tau) / scale.delay_spread).powi(2);
    }
    let k = k as f64;
    Some(ParamMse { gain: g / k, doppler: d / k, delay: tau / k })
}

/// Aggregated metrics of one (point, detector, CSI mode) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub scenario: String,
    pub sjr_db: f64,
    pub snr_db: f64,
    pub detector: String,
    pub csi: String,
    pub runs: usize,
    pub failures: usize,
    pub counts: BitCounts,
    pub aber: f64,
    pub throughput: f64,
    /// Mean MSE in dB over scored runs: UAV then jammer.
    pub mse_uav_db: Option<ParamMse>,
    pub mse_jam_db: Option<ParamMse>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LinkLabel, PathParams};
    use crate::C64;

    fn cfg() -> OfdmConfig {
        OfdmConfig::new(16, 4, 625e3)
    }

    #[test]
    fn throughput_identity() {
        let c = cfg();
        let mut n = BitCounts::default();
        for _ in 0..10 {
            n.add_block(&[1.0; 16], &[1.0; 16]);
        }
        assert_eq!(throughput_from_aber(&n, &c), 500_000.0);
        let mut bad = BitCounts::default();
        for _ in 0..10 {
            bad.add_block(&[-1.0; 16], &[1.0; 16]);
        }
        assert_eq!(throughput_from_aber(&bad, &c), 0.0);
        n.merge(&bad);
        assert_eq!(throughput_from_aber(&n, &c), 250_000.0);
        assert_eq!(n.aber(), 0.5);
    }

    #[test]
    fn mse_matching_and_sign() {
        let c = cfg();
        let mk = |v: &[(f64, f64, f64)]| {
            LinkParams::new(LinkLabel::Uav, v.iter().map(|&(g, tau, nu)| PathParams { gain: C64::new(g, 0.0), tau, nu }).collect())
        };
        let t = mk(&[(1.0, 1e-6, 0.01), (0.5, 2e-6, -0.02)]);
        let e = mk(&[(0.5, 2e-6, -0.02), (-1.0, 1e-6, 0.01)]);
        let s = MseScale { gain_var: 1.0, max_doppler: 900.0, delay_spread: 4.8e-6 };
        let m = param_mse(&t, &e, &s, &c).unwrap();
        assert_eq!((m.gain, m.doppler, m.delay), (0.0, 0.0, 0.0));
        let e2 = mk(&[(1.1, 1e-6 + 4.8e-7, 0.01 + 900.0 * c.block_period() * 0.1), (0.5, 2e-6, -0.02)]);
        let m = param_mse(&t, &e2, &s, &c).unwrap();
        assert!((m.gain - 0.005).abs() < 1e-12);
        assert!((m.doppler - 0.005).abs() < 1e-12);
        assert!((m.delay - 0.005).abs() < 1e-12);
        assert!(param_mse(&t, &mk(&[(1.0, 0.0, 0.0)]), &s, &c).is_none());
    }
}
