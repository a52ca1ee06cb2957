//! Doubly-selective channel matrices and received-block generation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::linalg::real_to_complex;
use crate::signal::{substream, OfdmConfig, OfdmMatrices, SymbolBlock, SymbolSource, SPEED_OF_LIGHT};
use crate::{CMatrix, CVector, Error, Result, C64};

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    /// Complex gain `g`.
    pub gain: C64,
    /// Delay in seconds.
    pub tau: f64,
    /// Normalized Doppler `nu = f T`.
    pub nu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkLabel {
    Uav,
    Jammer,
}

impl LinkLabel {
    pub fn name(&self) -> &'static str {
        match self {
            LinkLabel::Uav => "uav",
            LinkLabel::Jammer => "jammer",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkParams {
    pub label: LinkLabel,
    pub paths: Vec<PathParams>,
}

impl LinkParams {
    pub fn new(label: LinkLabel, paths: Vec<PathParams>) -> Self {
        LinkParams { label, paths }
    }

    pub fn dopplers(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.nu).collect()
    }

    /// Check delays against `[0, delta]`, Dopplers against `|nu| < 1/2`
    /// and non-zero gains.
    pub fn validate(&self, delta: f64) -> Result<()> {
        for (k, p) in self.paths.iter().enumerate() {
            if !(p.tau >= 0.0 && p.tau <= delta * (1.0 + 1e-12)) {
                return Err(Error::Domain(format!("{} path {k}: delay {} outside [0, {delta}]", self.label.name(), p.tau)));
            }
            if !(p.nu.abs() < 0.5) {
                return Err(Error::Domain(format!("{} path {k}: |nu| = {} not below 1/2", self.label.name(), p.nu.abs())));
            }
            if p.gain.norm() == 0.0 || !p.gain.re.is_finite() || !p.gain.im.is_finite() {
                return Err(Error::Domain(format!("{} path {k}: gain must be finite and non-zero", self.label.name())));
            }
        }
        Ok(())
    }
}

fn collide(a: f64, b: f64, rel_tol: f64) -> bool {
    (a - b).abs() <= rel_tol * a.abs().max(b.abs())
}

/// Check that all Dopplers of all links are pairwise distinct, that all
/// pairwise sums are distinct, and that no pair of sums wraps modulo one.
pub fn check_dopplers(links: &[&LinkParams], rel_tol: f64) -> Result<()> {
    let nus: Vec<f64> = links.iter().flat_map(|l| l.dopplers()).collect();
    for i in 0..nus.len() {
        for j in i + 1..nus.len() {
            if collide(nus[i], nus[j], rel_tol) {
                return Err(Error::Config(format!("Doppler shifts {} and {} coincide", nus[i], nus[j])));
            }
            if nus[i].abs() + nus[j].abs() >= 0.5 {
                return Err(Error::Config("Doppler pair sum wraps modulo one".into()));
            }
        }
        if 2.0 * nus[i].abs() >= 0.5 {
            return Err(Error::Config("Doppler pair sum wraps modulo one".into()));
        }
    }
    let mut sums = Vec::new();
    for i in 0..nus.len() {
        for j in i..nus.len() {
            sums.push(nus[i] + nus[j]);
        }
    }
    for i in 0..sums.len() {
        for j in i + 1..sums.len() {
            if collide(sums[i], sums[j], rel_tol) {
                return Err(Error::Config(format!("Doppler pair sums {} and {} coincide", sums[i], sums[j])));
            }
        }
    }
    Ok(())
}

/// Sampled pulse `c_l = psi(l T_c - tau)`, `l = 0..P`.
pub fn pulse_taps(cfg: &OfdmConfig, tau: f64) -> Vec<f64> {
    let tc = cfg.tc();
    (0..cfg.p()).map(|l| cfg.psi(l as f64 * tc - tau)).collect()
}

fn check_tau(cfg: &OfdmConfig, tau: f64) -> Result<()> {
    let max = cfg.max_delay();
    if !(tau >= 0.0 && tau <= max * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("delay {tau} outside [0, {max}]")));
    }
    Ok(())
}

/// Toeplitz matrix `T_b` with entries `psi((b P + p - q) T_c - tau)`.
pub fn build_toeplitz(cfg: &OfdmConfig, tau: f64, lag: usize) -> Result<DMatrix<f64>> {
    if lag > 1 {
        return Err(Error::Domain(format!("lag {lag} not in {{0, 1}}")));
    }
    check_tau(cfg, tau)?;
    let p = cfg.p();
    let tc = cfg.tc();
    Ok(DMatrix::from_fn(p, p, |r, c| {
        let idx = (lag * p + r) as f64 - c as f64;
        cfg.psi(idx * tc - tau)
    }))
}

/// Diagonal of `D = diag(exp(j 2 pi nu p / P))`.
pub fn doppler_diag(p: usize, nu: f64) -> Vec<C64> {
    (0..p).map(|i| C64::from_polar(1.0, 2.0 * PI * nu * i as f64 / p as f64)).collect()
}

/// `exp(j 2 pi nu n)` with the argument reduced modulo one.
pub fn doppler_phase(nu: f64, n: i64) -> C64 {
    let x = (nu * n as f64).rem_euclid(1.0);
    C64::from_polar(1.0, 2.0 * PI * x)
}

/// Per-path matrices cached for fast per-block assembly.
#[derive(Clone, Debug)]
pub struct PathMatrices {
    pub t0: DMatrix<f64>,
    pub t1: DMatrix<f64>,
    pub d: Vec<C64>,
    /// `D T_0 Omega`.
    pub b0: CMatrix,
    /// `D T_1 Omega`.
    pub b1: CMatrix,
    /// `R_cp D T_0 Omega`.
    pub a: CMatrix,
}

/// Channel matrices of one block.
#[derive(Clone, Debug)]
pub struct ChannelSlice {
    pub hbar0: CMatrix,
    pub hbar1: CMatrix,
    pub h: CMatrix,
}

/// A link with its per-path matrices precomputed.
#[derive(Clone, Debug)]
pub struct LinkChannel {
    pub params: LinkParams,
    pub paths: Vec<PathMatrices>,
    m: usize,
    p: usize,
    l_cp: usize,
}

impl LinkChannel {
    pub fn new(params: &LinkParams, cfg: &OfdmConfig, mats: &OfdmMatrices) -> Result<Self> {
        let p = cfg.p();
        let mut paths = Vec::with_capacity(params.paths.len());
        for path in &params.paths {
            let t0 = build_toeplitz(cfg, path.tau, 0)?;
            let t1 = build_toeplitz(cfg, path.tau, 1)?;
            let d = doppler_diag(p, path.nu);
            let scale_rows = |t: &DMatrix<f64>| {
                let mut x = real_to_complex(t) * &mats.omega;
                for (r, dr) in d.iter().enumerate() {
                    for c in 0..cfg.m {
                        x[(r, c)] *= dr;
                    }
                }
                x
            };
            let b0 = scale_rows(&t0);
            let b1 = scale_rows(&t1);
            let a = b0.rows(cfg.l_cp, cfg.m).into_owned();
            paths.push(PathMatrices { t0, t1, d, b0, b1, a });
        }
        Ok(LinkChannel { params: params.clone(), paths, m: cfg.m, p, l_cp: cfg.l_cp })
    }

    fn weights(&self, n: i64) -> impl Iterator<Item = (C64, &PathMatrices)> + '_ {
        self.params.paths.iter().zip(self.paths.iter()).map(move |(pp, pm)| (pp.gain * doppler_phase(pp.nu, n), pm))
    }

    /// `Hbar_b[n] = sum_k g_k exp(j 2 pi nu_k n) D_k T_{k,b} Omega`.
    pub fn hbar(&self, n: i64, lag: usize) -> CMatrix {
        let mut out = CMatrix::zeros(self.p, self.m);
        for (w, pm) in self.weights(n) {
            let b = if lag == 0 { &pm.b0 } else { &pm.b1 };
            out.zip_apply(b, |o, x| *o += w * x);
        }
        out
    }

    /// `H[n] = R_cp Hbar_0[n]`.
    pub fn h(&self, n: i64) -> CMatrix {
        let mut out = CMatrix::zeros(self.m, self.m);
        for (w, pm) in self.weights(n) {
            out.zip_apply(&pm.a, |o, x| *o += w * x);
        }
        out
    }

    pub fn slice(&self, n: i64) -> ChannelSlice {
        ChannelSlice { hbar0: self.hbar(n, 0), hbar1: self.hbar(n, 1), h: self.h(n) }
    }

    /// Add `Hbar_0[n] s + Hbar_1[n] s_prev` into `out` (length `P`).
    fn accumulate(&self, n: i64, s: &[f64], s_prev: &[f64], out: &mut [C64]) {
        for (w, pm) in self.weights(n) {
            for r in 0..self.p {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..self.m {
                    acc += pm.b0[(r, c)] * s[c] + pm.b1[(r, c)] * s_prev[c];
                }
                out[r] += w * acc;
            }
        }
    }

    pub fn cp_len(&self) -> usize {
        self.l_cp
    }
}

pub fn build_channel(link: &LinkParams, n: i64, cfg: &OfdmConfig, mats: &OfdmMatrices) -> Result<ChannelSlice> {
    Ok(LinkChannel::new(link, cfg, mats)?.slice(n))
}

/// Seeds for the three random streams of a received sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSeeds {
    pub uav_symbols: u64,
    pub jam_symbols: u64,
    pub noise: u64,
}

impl BlockSeeds {
    pub fn from_base(seed: u64) -> Self {
        BlockSeeds { uav_symbols: seed, jam_symbols: seed ^ 0x5A5A_5A5A_5A5A_5A5A, noise: seed ^ 0xA5A5_A5A5_A5A5_A5A5 }
    }
}

/// Received blocks with and without CP, plus the transmitted symbols.
#[derive(Clone, Debug)]
pub struct BlockSequence {
    pub m: usize,
    pub l_cp: usize,
    pub n_blocks: usize,
    /// `ybar[n]` stored row-major, `P` entries per block.
    pub ybar: Vec<C64>,
    /// `y[n]` stored row-major, `M` entries per block.
    pub y: Vec<C64>,
    pub s_uav: Vec<SymbolBlock>,
    pub s_jam: Vec<SymbolBlock>,
}

impl BlockSequence {
    pub fn p(&self) -> usize {
        self.m + self.l_cp
    }

    pub fn ybar_block(&self, n: usize) -> &[C64] {
        let p = self.p();
        &self.ybar[n * p..(n + 1) * p]
    }

    pub fn y_block(&self, n: usize) -> &[C64] {
        &self.y[n * self.m..(n + 1) * self.m]
    }

    pub fn y_vector(&self, n: usize) -> CVector {
        CVector::from_column_slice(self.y_block(n))
    }

    /// Write `ybar` as a little-endian binary trace: magic `AJTRACE1`,
    /// `M`, `L_cp`, `N` as u64, then interleaved re/im doubles.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"AJTRACE1")?;
        for v in [self.m as u64, self.l_cp as u64, self.n_blocks as u64] {
            f.write_all(&v.to_le_bytes())?;
        }
        for z in &self.ybar {
            f.write_all(&z.re.to_le_bytes())?;
            f.write_all(&z.im.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Read a trace written by [`write_trace`](Self::write_trace).
    /// Symbols and `y` are not stored; `y` is rebuilt from `ybar`.
    pub fn read_trace(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 32 || &buf[..8] != b"AJTRACE1" {
            return Err(Error::Parse("not a block trace".into()));
        }
        let word = |i: usize| u64::from_le_bytes(buf[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let (m, l_cp, n) = (word(0), word(1), word(2));
        let p = m + l_cp;
        if buf.len() != 32 + 16 * p * n {
            return Err(Error::Parse("trace length does not match header".into()));
        }
        let f = |i: usize| f64::from_le_bytes(buf[32 + 8 * i..40 + 8 * i].try_into().unwrap());
        let ybar: Vec<C64> = (0..p * n).map(|i| C64::new(f(2 * i), f(2 * i + 1))).collect();
        let y = (0..n).flat_map(|b| ybar[b * p + l_cp..(b + 1) * p].to_vec()).collect();
        Ok(BlockSequence { m, l_cp, n_blocks: n, ybar, y, s_uav: Vec::new(), s_jam: Vec::new() })
    }
}

/// Generate `N` received blocks. Block 0 has no IBI predecessor.
pub fn generate_received(
    uav: &LinkChannel,
    jam: &LinkChannel,
    n_blocks: usize,
    seeds: BlockSeeds,
    cfg: &OfdmConfig,
) -> BlockSequence {
    let (m, p) = (cfg.m, cfg.p());
    let s_uav: Vec<SymbolBlock> = SymbolSource::from_rng(substream(seeds.uav_symbols, 1), m, n_blocks).collect();
    let s_jam: Vec<SymbolBlock> = SymbolSource::from_rng(substream(seeds.jam_symbols, 2), m, n_blocks).collect();
    let mut noise_rng = substream(seeds.noise, 3);
    let sd = (cfg.noise_var / 2.0).sqrt();
    let zero = vec![0.0; m];
    let mut ybar = vec![C64::new(0.0, 0.0); n_blocks * p];
    let mut y = Vec::with_capacity(n_blocks * m);
    for n in 0..n_blocks {
        let out = &mut ybar[n * p..(n + 1) * p];
        for z in out.iter_mut() {
            let re: f64 = noise_rng.sample(StandardNormal);
            let im: f64 = noise_rng.sample(StandardNormal);
            *z = C64::new(sd * re, sd * im);
        }
        let prev_u = if n > 0 { &s_uav[n - 1].0 } else { &zero };
        let prev_j = if n > 0 { &s_jam[n - 1].0 } else { &zero };
        uav.accumulate(n as i64, &s_uav[n].0, prev_u, out);
        jam.accumulate(n as i64, &s_jam[n].0, prev_j, out);
        y.extend_from_slice(&out[cfg.l_cp..]);
    }
    BlockSequence { m, l_cp: cfg.l_cp, n_blocks, ybar, y, s_uav, s_jam }
}

/// Random-draw profile of one link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkProfile {
    pub paths: usize,
    /// Per-path gain variance `sigma^2`.
    pub gain_var: f64,
    /// Maximum delay `Delta` in seconds.
    pub delay_spread: f64,
    /// Slope of the exponential delay profile in seconds.
    pub tau_slope: f64,
    /// Maximum Doppler `D = (v / c0) f0` in Hz.
    pub max_doppler: f64,
}

impl LinkProfile {
    pub fn max_doppler_for(speed: f64, f0: f64) -> f64 {
        speed / SPEED_OF_LIGHT * f0
    }
}

/// Gain variance `2 P (lambda0 / (4 pi d))^2` for power `P` at distance `d`.
pub fn path_loss_variance(power: f64, distance: f64, f0: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / f0;
    2.0 * power * (lambda / (4.0 * PI * distance)).powi(2)
}

/// Draw one link: Rayleigh gains, exponential delay profile on
/// `[0, Delta]`, Doppler `D cos(theta)` with uniform `theta`.
pub fn draw_link<R: Rng + ?Sized>(profile: &LinkProfile, label: LinkLabel, cfg: &OfdmConfig, rng: &mut R) -> LinkParams {
    let t = cfg.block_period();
    let sd = (profile.gain_var / 2.0).sqrt();
    let paths = (0..profile.paths)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let tau = if profile.delay_spread > 0.0 {
                let s = profile.tau_slope;
                (-s * (1.0 - u * (1.0 - (-profile.delay_spread / s).exp())).ln()).min(profile.delay_spread)
            } else {
                0.0
            };
            let theta: f64 = rng.random::<f64>() * 2.0 * PI;
            let nu = profile.max_doppler * theta.cos() * t;
            PathParams { gain: C64::new(sd * re, sd * im), tau, nu }
        })
        .collect();
    LinkParams::new(label, paths)
}

/// Relative tolerance used when rejecting colliding Doppler draws.
pub const DOPPLER_COLLISION_TOL: f64 = 1e-6;

/// Draw both links, redrawing until the Doppler distinctness conditions hold.
pub fn draw_links<R: Rng + ?Sized>(
    uav: &LinkProfile,
    jam: &LinkProfile,
    cfg: &OfdmConfig,
    rng: &mut R,
) -> Result<(LinkParams, LinkParams)> {
    for _ in 0..10_000 {
        let u = draw_link(uav, LinkLabel::Uav, cfg, rng);
        let j = draw_link(jam, LinkLabel::Jammer, cfg, rng);
        if check_dopplers(&[&u, &j], DOPPLER_COLLISION_TOL).is_ok() {
            return Ok((u, j));
        }
    }
    Err(Error::Config("could not draw Doppler shifts with distinct pair sums".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob2, unitary_idft};
    use crate::signal::{build_matrices, Pulse};

    fn cfg(pulse: Pulse) -> OfdmConfig {
        let mut c = OfdmConfig::new(16, 4, 625e3);
        c.pulse = pulse;
        c
    }

    fn shift_sum(cfg: &OfdmConfig, tau: f64, lag: usize) -> DMatrix<f64> {
        let p = cfg.p();
        let f = DMatrix::from_fn(p, p, |r, c| if r == c + 1 { 1.0 } else { 0.0 });
        let b = f.transpose();
        let mut out = DMatrix::zeros(p, p);
        for l in 0..=cfg.l_cp {
            let w = cfg.psi(l as f64 * cfg.tc() - tau);
            if lag == 0 {
                out += f.pow(l as u32) * w;
            } else if l >= 1 {
                out += b.pow((p - l) as u32) * w;
            }
        }
        out
    }

    #[test]
    fn toeplitz_matches_shift_expansion() {
        for pulse in [Pulse::Rect, Pulse::Triangle] {
            let c = cfg(pulse);
            for tau_chips in [0.0, 0.3, 1.0, 1.7, 2.5, 3.0] {
                let tau = tau_chips * c.tc();
                for lag in 0..2 {
                    let t = build_toeplitz(&c, tau, lag).unwrap();
                    let s = shift_sum(&c, tau, lag);
                    assert!((t - s).norm() < 1e-15, "pulse {pulse:?} tau {tau_chips} lag {lag}");
                }
            }
        }
    }

    #[test]
    fn delta_pulse_identity_and_shift() {
        let c = cfg(Pulse::Rect);
        let p = c.p();
        let t0 = build_toeplitz(&c, 0.0, 0).unwrap();
        assert_eq!(t0, DMatrix::identity(p, p));
        assert_eq!(build_toeplitz(&c, 0.0, 1).unwrap(), DMatrix::zeros(p, p));
        let t0 = build_toeplitz(&c, c.tc(), 0).unwrap();
        let f = DMatrix::from_fn(p, p, |r, col| if r == col + 1 { 1.0 } else { 0.0 });
        assert_eq!(t0, f);
        // The delayed delta leaks the previous block's last sample into the
        // first sample: T_1 = B^(P-1).
        let t1 = build_toeplitz(&c, c.tc(), 1).unwrap();
        let corner = DMatrix::from_fn(p, p, |r, col| if r == 0 && col == p - 1 { 1.0 } else { 0.0 });
        assert_eq!(t1, corner);
    }

    #[test]
    fn delay_outside_range_rejected() {
        let c = cfg(Pulse::Triangle);
        assert!(build_toeplitz(&c, 3.5 * c.tc(), 0).is_err());
        assert!(build_toeplitz(&c, -1e-9, 0).is_err());
    }

    #[test]
    fn circulant_sum_is_diagonalized() {
        let c = cfg(Pulse::Triangle);
        let p = c.p();
        let w = unitary_idft(p);
        for tau_chips in [0.0, 0.45, 1.7, 2.99] {
            let tau = tau_chips * c.tc();
            let sum = build_toeplitz(&c, tau, 0).unwrap() + build_toeplitz(&c, tau, 1).unwrap();
            let taps = pulse_taps(&c, tau);
            for r in 0..p {
                for col in 0..p {
                    assert_eq!(sum[(r, col)], taps[(r + p - col) % p]);
                }
            }
            let d = w.adjoint() * real_to_complex(&sum) * &w;
            let off: f64 = (0..p).flat_map(|r| (0..p).map(move |q| (r, q))).filter(|(r, q)| r != q).map(|(r, q)| d[(r, q)].norm_sqr()).sum();
            assert!(off.sqrt() < 1e-12 * frob2(&d).sqrt());
        }
    }

    #[test]
    fn identity_channel_is_idft() {
        let c = cfg(Pulse::Rect);
        let mats = build_matrices(&c).unwrap();
        let link = LinkParams::new(LinkLabel::Uav, vec![PathParams { gain: C64::new(1.0, 0.0), tau: 0.0, nu: 0.0 }]);
        let slice = build_channel(&link, 5, &c, &mats).unwrap();
        assert!(frob2(&(slice.h - &mats.w_m)) < 1e-28);
    }

    #[test]
    fn static_channel_is_time_invariant_and_diagonalizable() {
        let c = cfg(Pulse::Triangle);
        let mats = build_matrices(&c).unwrap();
        let tc = c.tc();
        let link = LinkParams::new(
            LinkLabel::Uav,
            vec![
                PathParams { gain: C64::new(0.8, -0.3), tau: 0.4 * tc, nu: 0.0 },
                PathParams { gain: C64::new(-0.2, 0.5), tau: 2.6 * tc, nu: 0.0 },
            ],
        );
        let ch = LinkChannel::new(&link, &c, &mats).unwrap();
        let h0 = ch.h(0);
        for n in [1, 17, 1000] {
            assert_eq!(ch.h(n), h0);
        }
        let d = mats.w_m.adjoint() * &h0;
        for r in 0..16 {
            for q in 0..16 {
                if r != q {
                    assert!(d[(r, q)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doppler_arithmetic() {
        let f = LinkProfile::max_doppler_for(10.0, 27e9);
        assert!((f - 900.0).abs() < 1e-9);
        assert!((LinkProfile::max_doppler_for(20.0, 27e9) - 1800.0).abs() < 1e-9);
        let c = cfg(Pulse::Triangle);
        assert!((f * c.block_period() - 0.0288).abs() < 1e-12);
    }

    #[test]
    fn clean_channel_receives_idft_of_symbols() {
        let mut c = cfg(Pulse::Rect);
        c.noise_var = 0.0;
        let mats = build_matrices(&c).unwrap();
        let u = LinkParams::new(LinkLabel::Uav, vec![PathParams { gain: C64::new(1.0, 0.0), tau: 0.0, nu: 0.0 }]);
        let j = LinkParams::new(LinkLabel::Jammer, vec![PathParams { gain: C64::new(0.0, 0.0), tau: 0.0, nu: 0.01 }]);
        let uc = LinkChannel::new(&u, &c, &mats).unwrap();
        let jc = LinkChannel::new(&j, &c, &mats).unwrap();
        let seq = generate_received(&uc, &jc, 20, BlockSeeds::from_base(3), &c);
        for n in 0..20 {
            let expect = &mats.w_m * seq.s_uav[n].to_complex();
            assert!((seq.y_vector(n) - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn noise_only_covariance_is_white() {
        let mut c = cfg(Pulse::Triangle);
        c.noise_var = 2.5;
        let mats = build_matrices(&c).unwrap();
        let empty_u = LinkChannel::new(&LinkParams::new(LinkLabel::Uav, vec![]), &c, &mats).unwrap();
        let empty_j = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &c, &mats).unwrap();
        let n = 10_000;
        let seq = generate_received(&empty_u, &empty_j, n, BlockSeeds::from_base(9), &c);
        let p = c.p();
        let mut cov = CMatrix::zeros(p, p);
        let mut pcov = CMatrix::zeros(p, p);
        for b in 0..n {
            let v = CVector::from_column_slice(seq.ybar_block(b));
            cov += &v * v.adjoint();
            pcov += &v * v.transpose();
        }
        cov /= C64::new(n as f64, 0.0);
        pcov /= C64::new(n as f64, 0.0);
        let target = CMatrix::identity(p, p) * C64::new(2.5, 0.0);
        assert!(crate::linalg::rel_frob_err(&cov, &target) < 0.05);
        assert!(frob2(&pcov).sqrt() < 0.05 * frob2(&target).sqrt());
    }

    #[test]
    fn received_energy_matches_model() {
        let mut c = cfg(Pulse::Triangle);
        c.noise_var = 0.1;
        let mats = build_matrices(&c).unwrap();
        let tc = c.tc();
        let u = LinkParams::new(
            LinkLabel::Uav,
            vec![
                PathParams { gain: C64::new(1.0, 0.2), tau: 0.7 * tc, nu: 0.021 },
                PathParams { gain: C64::new(0.3, -0.4), tau: 2.2 * tc, nu: -0.013 },
            ],
        );
        let j = LinkParams::new(LinkLabel::Jammer, vec![PathParams { gain: C64::new(0.5, 0.5), tau: 1.1 * tc, nu: 0.04 }]);
        let uc = LinkChannel::new(&u, &c, &mats).unwrap();
        let jc = LinkChannel::new(&j, &c, &mats).unwrap();
        let n = 20_000;
        let seq = generate_received(&uc, &jc, n, BlockSeeds::from_base(1), &c);
        let avg = seq.ybar.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        // Distinct Dopplers average out cross terms; each path contributes
        // |g|^2 (||T0 Omega||^2 + ||T1 Omega||^2).
        let mut expect = c.p() as f64 * c.noise_var;
        for (link, ch) in [(&u, &uc), (&j, &jc)] {
            for (pp, pm) in link.paths.iter().zip(&ch.paths) {
                expect += pp.gain.norm_sqr() * (frob2(&pm.b0) + frob2(&pm.b1));
            }
        }
        assert!((avg - expect).abs() < 0.02 * expect, "avg {avg} expect {expect}");
    }

    #[test]
    fn doppler_checks() {
        let mk = |nus: &[f64]| LinkParams::new(LinkLabel::Uav, nus.iter().map(|&nu| PathParams { gain: C64::new(1.0, 0.0), tau: 0.0, nu }).collect());
        assert!(check_dopplers(&[&mk(&[0.01, 0.02]), &mk(&[-0.013])], 1e-6).is_ok());
        assert!(check_dopplers(&[&mk(&[0.01, 0.02]), &mk(&[0.01])], 1e-6).is_err());
        // 0.01 + 0.03 == 2 * 0.02
        assert!(check_dopplers(&[&mk(&[0.01, 0.03]), &mk(&[0.02])], 1e-6).is_err());
        assert!(check_dopplers(&[&mk(&[0.3, 0.25])], 1e-6).is_err());
    }

    #[test]
    fn random_draws_respect_profile() {
        let c = cfg(Pulse::Triangle);
        let tc = c.tc();
        let prof = LinkProfile { paths: 2, gain_var: 4.0, delay_spread: 3.0 * tc, tau_slope: 2.0 * tc, max_doppler: 900.0 };
        let jp = LinkProfile { max_doppler: 1800.0, ..prof };
        let mut rng = substream(5, 0);
        let mut power = 0.0;
        let trials = 2000;
        for _ in 0..trials {
            let (u, j) = draw_links(&prof, &jp, &c, &mut rng).unwrap();
            u.validate(3.0 * tc).unwrap();
            j.validate(3.0 * tc).unwrap();
            for p in &u.paths {
                assert!(p.nu.abs() <= 0.0288 + 1e-15);
                power += p.gain.norm_sqr();
            }
            for p in &j.paths {
                assert!(p.nu.abs() <= 0.0576 + 1e-15);
            }
        }
        let mean = power / (2 * trials) as f64;
        assert!((mean - 4.0).abs() < 0.4, "mean gain power {mean}");
    }

    #[test]
    fn trace_round_trip() {
        let c = cfg(Pulse::Triangle);
        let mats = build_matrices(&c).unwrap();
        let u = LinkParams::new(LinkLabel::Uav, vec![PathParams { gain: C64::new(1.0, 0.0), tau: 0.0, nu: 0.01 }]);
        let uc = LinkChannel::new(&u, &c, &mats).unwrap();
        let jc = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &c, &mats).unwrap();
        let seq = generate_received(&uc, &jc, 7, BlockSeeds::from_base(2), &c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        seq.write_trace(&path).unwrap();
        let back = BlockSequence::read_trace(&path).unwrap();
        assert_eq!(back.ybar, seq.ybar);
        assert_eq!(back.y, seq.y);
        assert_eq!((back.m, back.l_cp, back.n_blocks), (16, 4, 7));
    }
}
