//! OFDM structural matrices, transmit pulse, and BPSK symbol streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::f64::consts::PI;

use crate::linalg::unitary_idft;
use crate::{CMatrix, CVector, Error, Result, C64};

/// Speed of light used for Doppler and path-loss arithmetic (m/s).
pub const SPEED_OF_LIGHT: f64 = 3e8;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Transmit/receive pulse `psi(t)`, described in units of the sampling
/// period (chips).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pulse {
    /// Unit rectangle on `[0, 1)` chips. Sampled at integer offsets it is a
    /// discrete delta.
    Rect,
    /// Linear-interpolation kernel on `[0, 2)` chips, peak 1 at one chip.
    Triangle,
}

impl Pulse {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "rect" | "delta" => Ok(Pulse::Rect),
            "triangle" | "linear" => Ok(Pulse::Triangle),
            other => Err(Error::Config(format!("unknown pulse '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pulse::Rect => "rect",
            Pulse::Triangle => "triangle",
        }
    }

    /// Support length in chips.
    pub fn duration_chips(&self) -> f64 {
        match self {
            Pulse::Rect => 1.0,
            Pulse::Triangle => 2.0,
        }
    }

    /// `psi` evaluated at `x` chips; zero outside `[0, duration)`.
    pub fn eval_chips(&self, x: f64) -> f64 {
        match self {
            Pulse::Rect => {
                if (0.0..1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Pulse::Triangle => {
                if (0.0..2.0).contains(&x) {
                    1.0 - (x - 1.0).abs()
                } else {
                    0.0
                }
            }
        }
    }

    /// Continuous Fourier transform in chip units,
    /// `int psi(x) exp(-j 2 pi xi x) dx`.
    pub fn spectrum_chips(&self, xi: f64) -> C64 {
        match self {
            Pulse::Rect => C64::from_polar(sinc(xi), -PI * xi),
            Pulse::Triangle => C64::from_polar(sinc(xi).powi(2), -2.0 * PI * xi),
        }
    }
}

/// Static system parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmConfig {
    /// Number of subcarriers `M`.
    pub m: usize,
    /// Cyclic-prefix length `L_cp`.
    pub l_cp: usize,
    /// Sampling rate `1/T_c` in Hz.
    pub sample_rate: f64,
    /// Carrier frequency in Hz.
    pub f0: f64,
    pub pulse: Pulse,
    /// Noise variance `sigma_w^2` in watts.
    pub noise_var: f64,
}

impl OfdmConfig {
    pub fn new(m: usize, l_cp: usize, sample_rate: f64) -> Self {
        OfdmConfig { m, l_cp, sample_rate, f0: 27e9, pulse: Pulse::Triangle, noise_var: 0.0 }
    }

    /// Block length `P = M + L_cp`.
    pub fn p(&self) -> usize {
        self.m + self.l_cp
    }

    /// Sampling period `T_c`.
    pub fn tc(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Block period `T = P T_c`.
    pub fn block_period(&self) -> f64 {
        self.p() as f64 / self.sample_rate
    }

    pub fn pulse_duration(&self) -> f64 {
        self.pulse.duration_chips() * self.tc()
    }

    /// `psi(t)` with `t` in seconds.
    pub fn psi(&self, t: f64) -> f64 {
        self.pulse.eval_chips(t * self.sample_rate)
    }

    /// Payload bit rate `(1/T_c)(M/P)` for BPSK.
    pub fn payload_rate(&self) -> f64 {
        self.sample_rate * self.m as f64 / self.p() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("M = {} must be at least 2", self.m)));
        }
        if self.l_cp < 1 {
            return Err(Error::Config("L_cp must be at least 1".into()));
        }
        if self.l_cp > self.m {
            return Err(Error::Config(format!("L_cp = {} exceeds M = {}", self.l_cp, self.m)));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Largest delay whose sampled pulse still fits in taps `0..=L_cp`.
    pub fn max_delay(&self) -> f64 {
        (self.l_cp as f64 + 1.0) * self.tc() - self.pulse_duration()
    }

    /// Check that a delay spread `delta_max` keeps the channel free of
    /// interblock interference after CP removal and below half a block.
    pub fn check_delay_spread(&self, delta_max: f64) -> Result<()> {
        if !(delta_max.is_finite() && delta_max >= 0.0) {
            return Err(Error::Config("delay spread must be non-negative".into()));
        }
        let span = (self.pulse_duration() + delta_max) * self.sample_rate;
        let last_tap = (span - 1e-9).ceil() - 1.0;
        if last_tap > self.l_cp as f64 {
            return Err(Error::Config(format!(
                "cyclic prefix too short: pulse plus delay spread reach tap {last_tap}, L_cp = {}",
                self.l_cp
            )));
        }
        if delta_max >= 0.5 * self.block_period() {
            return Err(Error::Config("delay spread must be below half a block period".into()));
        }
        Ok(())
    }
}

/// Dense OFDM structural matrices.
#[derive(Clone, Debug)]
pub struct OfdmMatrices {
    pub m: usize,
    pub p: usize,
    pub w_m: CMatrix,
    pub i_cp: CMatrix,
    /// `Omega = I_cp W_M`, `P x M`.
    pub omega: CMatrix,
    pub r_cp: CMatrix,
    pub w_p: CMatrix,
    /// `Omega Omega^T`, `P x P`.
    pub omega_omega_t: CMatrix,
    /// Diagonal of `W_P^H Omega Omega^T W_P^*`.
    pub upsilon: Vec<C64>,
}

pub fn build_matrices(cfg: &OfdmConfig) -> Result<OfdmMatrices> {
    cfg.validate()?;
    let (m, l) = (cfg.m, cfg.l_cp);
    let p = m + l;
    let w_m = unitary_idft(m);
    let i_cp = CMatrix::from_fn(p, m, |r, c| {
        let src = if r < l { m - l + r } else { r - l };
        if src == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let r_cp = CMatrix::from_fn(m, p, |r, c| if c == r + l { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let omega = &i_cp * &w_m;
    let w_p = unitary_idft(p);
    let omega_omega_t = &omega * omega.transpose();
    let ups = w_p.adjoint() * &omega_omega_t * w_p.map(|z| z.conj());
    let upsilon = (0..p).map(|i| ups[(i, i)]).collect();
    Ok(OfdmMatrices { m, p, w_m, i_cp, omega, r_cp, w_p, omega_omega_t, upsilon })
}

/// One block of `M` real BPSK symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock(pub Vec<f64>);

impl SymbolBlock {
    pub fn zeros(m: usize) -> Self {
        SymbolBlock(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_complex(&self) -> CVector {
        CVector::from_iterator(self.0.len(), self.0.iter().map(|&x| C64::new(x, 0.0)))
    }
}

/// `Omega s`: IDFT followed by CP insertion.
pub fn modulate_block(s: &SymbolBlock, mats: &OfdmMatrices) -> Result<CVector> {
    if s.len() != mats.m {
        return Err(Error::Dimension(format!("symbol block has {} entries, expected {}", s.len(), mats.m)));
    }
    Ok(&mats.omega * s.to_complex())
}

/// Independent RNG substream derived from a base seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic i.i.d. equiprobable BPSK stream.
pub struct SymbolSource {
    rng: ChaCha20Rng,
    m: usize,
    remaining: usize,
}

pub fn symbol_source(seed: u64, m: usize, count: usize) -> SymbolSource {
    SymbolSource { rng: ChaCha20Rng::seed_from_u64(seed), m, remaining: count }
}

impl SymbolSource {
    pub fn from_rng(rng: ChaCha20Rng, m: usize, count: usize) -> Self {
        SymbolSource { rng, m, remaining: count }
    }
}

impl Iterator for SymbolSource {
    type Item = SymbolBlock;

    fn next(&mut self) -> Option<SymbolBlock> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rng = &mut self.rng;
        Some(SymbolBlock((0..self.m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob2;

    #[test]
    fn reference_dimensions() {
        let cfg = OfdmConfig::new(16, 4, 625e3);
        let mats = build_matrices(&cfg).unwrap();
        assert_eq!(mats.p, 20);
        assert_eq!(mats.omega.shape(), (20, 16));
        assert!((cfg.block_period() - 32e-6).abs() < 1e-18);
        assert_eq!(cfg.payload_rate(), 500_000.0);
    }

    #[test]
    fn two_point_example() {
        let cfg = OfdmConfig::new(2, 1, 1.0);
        let mats = build_matrices(&cfg).unwrap();
        let s = SymbolBlock(vec![1.0, 1.0]);
        let ws = &mats.w_m * s.to_complex();
        assert!((ws[0] - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert!(ws[1].norm() < 1e-15);
        let u = modulate_block(&s, &mats).unwrap();
        let expect = [0.0, 2f64.sqrt(), 0.0];
        for (a, b) in u.iter().zip(expect) {
            assert!((a - C64::new(b, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn dc_subcarrier_and_cp() {
        let cfg = OfdmConfig::new(4, 2, 1.0);
        let mats = build_matrices(&cfg).unwrap();
        let s = SymbolBlock(vec![1.0, 0.0, 0.0, 0.0]);
        let u = modulate_block(&s, &mats).unwrap();
        for z in u.iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cp_round_trip_is_identity() {
        let cfg = OfdmConfig::new(16, 4, 625e3);
        let mats = build_matrices(&cfg).unwrap();
        let prod = &mats.r_cp * &mats.i_cp;
        assert_eq!(frob2(&(prod - CMatrix::identity(16, 16))), 0.0);
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(build_matrices(&OfdmConfig::new(1, 4, 1.0)).is_err());
        assert!(build_matrices(&OfdmConfig::new(4, 0, 1.0)).is_err());
        let mats = build_matrices(&OfdmConfig::new(4, 1, 1.0)).unwrap();
        assert!(modulate_block(&SymbolBlock(vec![1.0; 3]), &mats).is_err());
    }

    #[test]
    fn delay_spread_check() {
        let mut cfg = OfdmConfig::new(16, 4, 625e3);
        let tc = cfg.tc();
        assert!(cfg.check_delay_spread(3.0 * tc).is_ok());
        assert!(cfg.check_delay_spread(3.2 * tc).is_err());
        cfg.pulse = Pulse::Rect;
        assert!(cfg.check_delay_spread(4.0 * tc).is_ok());
        assert!(cfg.check_delay_spread(4.1 * tc).is_err());
    }

    #[test]
    fn pulse_spectra_match_quadrature() {
        for pulse in [Pulse::Rect, Pulse::Triangle] {
            for xi in [0.0, 0.1, 0.37, -0.45] {
                let n = 20_000;
                let d = pulse.duration_chips();
                let h = d / n as f64;
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    let x = (i as f64 + 0.5) * h;
                    acc += C64::from_polar(pulse.eval_chips(x) * h, -2.0 * PI * xi * x);
                }
                assert!((acc - pulse.spectrum_chips(xi)).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn symbol_stream_statistics() {
        let blocks: Vec<_> = symbol_source(7, 16, 6250).collect();
        let all: Vec<f64> = blocks.iter().flat_map(|b| b.0.iter().copied()).collect();
        assert_eq!(all.len(), 100_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.02);
        let second = all.iter().map(|x| x * x).sum::<f64>() / all.len() as f64;
        assert_eq!(second, 1.0);
        let again: Vec<_> = symbol_source(7, 16, 6250).collect();
        assert_eq!(blocks, again);
        let other: Vec<_> = symbol_source(8, 16, 10).collect();
        assert_ne!(blocks[..10], other[..]);
    }
}
