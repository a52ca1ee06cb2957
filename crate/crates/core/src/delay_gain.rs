//! Per-path delay and gain recovery from CCCMs at twice the Doppler, plus
//! the end-to-end blind estimation pipeline.

use std::f64::consts::PI;

use crate::channel::{pulse_taps, BlockSequence, LinkChannel, LinkLabel, LinkParams, PathParams};
use crate::cyclo::{find_peaks, scan_grid, CccmEstimator, CccmSet, CyclePeakList, ScanConfig};
use crate::detector::{augment_matrix, augment_vector, predetect, quantization_residual};
use crate::doppler::{estimate_dopplers, DopplerSets};
use crate::linalg::{frob2, inner, golden_max};
use crate::signal::{OfdmConfig, OfdmMatrices};
use crate::{CMatrix, CVector, Error, Result, C64};

/// `Phi[r]` for `r = -1, 0, 1` and their sum.
#[derive(Clone, Debug)]
pub struct PhiSet {
    pub phi: [CMatrix; 3],
    pub sum: CMatrix,
}

/// Remove the Doppler progression from CCCMs taken at `alpha = 2 nu`.
pub fn build_phi(cccm: &CccmSet, nu: f64) -> PhiSet {
    let p = cccm.r[1].nrows();
    let dc: Vec<C64> = (0..p).map(|i| C64::from_polar(1.0, -2.0 * PI * nu * i as f64 / p as f64)).collect();
    let e = C64::from_polar(1.0, 2.0 * PI * nu);
    let factors = [e.conj(), C64::new(1.0, 0.0), e];
    let phi: [CMatrix; 3] = std::array::from_fn(|i| {
        let r = &cccm.r[i];
        CMatrix::from_fn(p, p, |a, b| factors[i] * dc[a] * r[(a, b)] * dc[b])
    });
    let sum = &phi[0] + &phi[1] + &phi[2];
    PhiSet { phi, sum }
}

/// How the DFT-domain pulse coefficients are modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PsiModel {
    /// Continuous pulse spectrum sampled at `p / T`, with the phase factor
    /// on the upper half; exact only for pulses band-limited to `1/T_c`.
    BandLimited,
    /// DFT of the sampled, fractionally shifted pulse. Exact for any pulse.
    #[default]
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsiCoefficients {
    pub chi: f64,
    pub psi: Vec<C64>,
}

pub fn psi_coefficients(cfg: &OfdmConfig, chi: f64, model: PsiModel) -> PsiCoefficients {
    let p = cfg.p();
    let psi = match model {
        PsiModel::BandLimited => (0..p)
            .map(|i| {
                if 2 * i < p {
                    cfg.pulse.spectrum_chips(i as f64 / p as f64)
                } else {
                    cfg.pulse.spectrum_chips((i as f64 - p as f64) / p as f64) * C64::from_polar(1.0, 2.0 * PI * chi * cfg.sample_rate)
                }
            })
            .collect(),
        PsiModel::Sampled => {
            let taps = pulse_taps(cfg, chi);
            let dft = dft(&taps);
            (0..p).map(|i| dft[i] * C64::from_polar(1.0, 2.0 * PI * chi * cfg.sample_rate * i as f64 / p as f64)).collect()
        }
    };
    PsiCoefficients { chi, psi }
}

fn dft(x: &[f64]) -> Vec<C64> {
    let n = x.len();
    (0..n)
        .map(|k| x.iter().enumerate().map(|(l, &v)| C64::from_polar(v, -2.0 * PI * ((k * l) % n) as f64 / n as f64)).sum())
        .collect()
}

/// Eigenvalues `v_p = Psi[p] exp(-j 2 pi tau p / T)` of the circulant.
pub fn circulant_eigs(cfg: &OfdmConfig, tau: f64, model: PsiModel) -> Vec<C64> {
    match model {
        PsiModel::Sampled => dft(&pulse_taps(cfg, tau)),
        PsiModel::BandLimited => {
            let chi = tau - (tau * cfg.sample_rate).floor() / cfg.sample_rate;
            let psi = psi_coefficients(cfg, chi, model);
            let t = cfg.block_period();
            psi.psi.iter().enumerate().map(|(i, &v)| v * C64::from_polar(1.0, -2.0 * PI * tau * i as f64 / t)).collect()
        }
    }
}

/// `C = W_P diag(v) W_P^H`.
pub fn circulant_from_eigs(mats: &OfdmMatrices, v: &[C64]) -> CMatrix {
    let mut wd = mats.w_p.clone();
    for (c, &x) in v.iter().enumerate() {
        for r in 0..mats.p {
            wd[(r, c)] *= x;
        }
    }
    wd * mats.w_p.adjoint()
}

/// Diagonal of `W_P^H A W_P^*`.
pub fn dft_diagonal(a: &CMatrix) -> Vec<C64> {
    let p = a.nrows();
    (0..p)
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..p {
                for j in 0..p {
                    acc += a[(i, j)] * C64::from_polar(1.0, -2.0 * PI * (((i + j) * k) % p) as f64 / p as f64);
                }
            }
            acc / p as f64
        })
        .collect()
}

/// Cost whose maximizer over `[0, Delta_max]` is the delay estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DelayCost {
    /// `|sum_p d_p (Psi0_p^2)^* Upsilon_pp^* exp(j 4 pi beta p / T)|` with
    /// `Psi0` the DFT of the chip-spaced pulse. Delay enters as a phase only,
    /// which is exact for band-limited pulses.
    BandLimited,
    /// `|sum_p d_p m_p(beta)^*| / ||m(beta)||` with
    /// `m_p(beta) = v_p(beta)^2 Upsilon_pp` from the sampled pulse.
    #[default]
    PulseMatched,
}

/// Delay search settings, in chips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelaySearch {
    pub cost: DelayCost,
    /// Upper end of the search interval in seconds.
    pub delta_max: f64,
    /// Coarse grid step in chips.
    pub coarse_step: f64,
    /// Golden-section tolerance in chips.
    pub tol: f64,
}

impl DelaySearch {
    pub fn new(delta_max: f64) -> Self {
        DelaySearch { cost: DelayCost::PulseMatched, delta_max, coarse_step: 0.05, tol: 1e-9 }
    }
}

/// Delay cost `I(beta)` prepared from one `Phi` set.
pub struct DelayObjective<'a> {
    cfg: &'a OfdmConfig,
    cost: DelayCost,
    d: Vec<C64>,
    upsilon: Vec<C64>,
    psi0: Vec<C64>,
    bins: Vec<usize>,
}

impl<'a> DelayObjective<'a> {
    pub fn new(phi: &PhiSet, cfg: &'a OfdmConfig, mats: &OfdmMatrices, cost: DelayCost) -> Self {
        let p = cfg.p();
        let bins = (0..p).filter(|&i| 2 * i < p && mats.upsilon[i].norm() >= 1e-12).collect();
        DelayObjective {
            cfg,
            cost,
            d: dft_diagonal(&phi.sum),
            upsilon: mats.upsilon.clone(),
            psi0: psi_coefficients(cfg, 0.0, PsiModel::Sampled).psi,
            bins,
        }
    }

    pub fn eval(&self, beta: f64) -> f64 {
        let t = self.cfg.block_period();
        match self.cost {
            DelayCost::BandLimited => self
                .bins
                .iter()
                .map(|&p| self.d[p] * (self.psi0[p] * self.psi0[p] * self.upsilon[p]).conj() * C64::from_polar(1.0, 4.0 * PI * beta * p as f64 / t))
                .sum::<C64>()
                .norm(),
            DelayCost::PulseMatched => {
                let v = circulant_eigs(self.cfg, beta, PsiModel::Sampled);
                let mut num = C64::new(0.0, 0.0);
                let mut den = 0.0;
                for &p in &self.bins {
                    let m = v[p] * v[p] * self.upsilon[p];
                    num += self.d[p] * m.conj();
                    den += m.norm_sqr();
                }
                if den > 0.0 {
                    num.norm() / den.sqrt()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Coarse grid over `[0, Delta_max]` followed by golden-section refinement.
pub fn estimate_delay(phi: &PhiSet, cfg: &OfdmConfig, mats: &OfdmMatrices, search: &DelaySearch) -> Result<f64> {
    if search.delta_max >= 0.5 * cfg.block_period() {
        return Err(Error::Config("delay search interval must stay below half a block period".into()));
    }
    let obj = DelayObjective::new(phi, cfg, mats, search.cost);
    let tc = cfg.tc();
    let hi = search.delta_max / tc;
    let steps = (hi / search.coarse_step).ceil() as usize;
    let f = |x: f64| obj.eval(x * tc);
    let mut best = (0.0, f(0.0));
    for i in 1..=steps {
        let x = (i as f64 * search.coarse_step).min(hi);
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let lo = (best.0 - search.coarse_step).max(0.0);
    let up = (best.0 + search.coarse_step).min(hi);
    let (x, v) = golden_max(f, lo, up, search.tol);
    let x = if v >= best.1 { x } else { best.0 };
    Ok(x * tc)
}

/// `g^2 = <Phi_sum, M> / ||M||^2` with `M = C Omega Omega^T C^T`.
pub fn estimate_gain(phi: &PhiSet, tau: f64, cfg: &OfdmConfig, mats: &OfdmMatrices, model: PsiModel) -> Result<C64> {
    let c = circulant_from_eigs(mats, &circulant_eigs(cfg, tau, model));
    let m = &c * &mats.omega_omega_t * c.transpose();
    let den = frob2(&m);
    if den < 1e-14 {
        return Err(Error::DegeneratePulse(format!("model energy {den} too small")));
    }
    Ok(inner(&phi.sum, &m) / den)
}

/// Delay and squared gain of one path from its CCCMs at `2 nu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathEstimate {
    pub nu: f64,
    pub tau: f64,
    pub gain2: C64,
}

pub fn estimate_path(cccm: &CccmSet, nu: f64, cfg: &OfdmConfig, mats: &OfdmMatrices, search: &DelaySearch, model: PsiModel) -> Result<PathEstimate> {
    let phi = build_phi(cccm, nu);
    let tau = estimate_delay(&phi, cfg, mats, search)?;
    let gain2 = estimate_gain(&phi, tau, cfg, mats, model)?;
    Ok(PathEstimate { nu, tau, gain2 })
}

/// Outcome of sign resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SignChoice {
    pub uav: LinkParams,
    pub jam: LinkParams,
    /// Bit `i` set means path `i` (UAV first, then jammer) took the
    /// negative square root.
    pub index: usize,
    /// Metric of every candidate.
    pub metrics: Vec<f64>,
}

fn with_signs(label: LinkLabel, paths: &[PathEstimate], bits: usize) -> LinkParams {
    LinkParams::new(
        label,
        paths
            .iter()
            .enumerate()
            .map(|(i, pe)| {
                let g = pe.gain2.sqrt();
                let g = if bits >> i & 1 == 1 { -g } else { g };
                PathParams { gain: g, tau: pe.tau, nu: pe.nu }
            })
            .collect(),
    )
}

/// Try every sign assignment of the square-rooted gains and keep the one
/// with the smallest step-0 quantization residual over the probe blocks.
pub fn resolve_signs(
    uav: &[PathEstimate],
    jam: &[PathEstimate],
    blocks: &BlockSequence,
    probe: std::ops::Range<usize>,
    cfg: &OfdmConfig,
    mats: &OfdmMatrices,
) -> Result<SignChoice> {
    let k = uav.len() + jam.len();
    let ys: Vec<CVector> = probe.clone().map(|n| augment_vector(&blocks.y_vector(n))).collect();
    let mut metrics = Vec::with_capacity(1 << k);
    for c in 0..1usize << k {
        let lu = with_signs(LinkLabel::Uav, uav, c);
        let lj = with_signs(LinkLabel::Jammer, jam, c >> uav.len());
        let cu = LinkChannel::new(&lu, cfg, mats)?;
        let cj = LinkChannel::new(&lj, cfg, mats)?;
        let mut total = 0.0;
        for (y, n) in ys.iter().zip(probe.clone()) {
            let h = augment_matrix(&[&cu.h(n as i64), &cj.h(n as i64)]);
            total += quantization_residual(&predetect(y, &h, cfg.noise_var)?);
        }
        metrics.push(total / ys.len().max(1) as f64);
    }
    let mut best = 0;
    for (i, &m) in metrics.iter().enumerate() {
        if m < metrics[best] * (1.0 - 1e-9) {
            best = i;
        }
    }
    Ok(SignChoice {
        uav: with_signs(LinkLabel::Uav, uav, best),
        jam: with_signs(LinkLabel::Jammer, jam, best >> uav.len()),
        index: best,
        metrics,
    })
}

/// Settings of the blind estimation pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub k_u: usize,
    pub scan: ScanConfig,
    pub delay: DelaySearch,
    pub psi_model: PsiModel,
    pub probe_blocks: usize,
}

impl EstimatorConfig {
    pub fn new(k_u: usize, delta_max: f64) -> Self {
        EstimatorConfig { k_u, scan: ScanConfig::default(), delay: DelaySearch::new(delta_max), psi_model: PsiModel::Sampled, probe_blocks: 64 }
    }
}

/// Result of the blind estimation pipeline.
#[derive(Clone, Debug)]
pub struct ChannelEstimate {
    pub peaks: CyclePeakList,
    pub dopplers: DopplerSets,
    pub uav_paths: Vec<PathEstimate>,
    pub jam_paths: Vec<PathEstimate>,
    pub signs: SignChoice,
}

impl ChannelEstimate {
    pub fn uav(&self) -> &LinkParams {
        &self.signs.uav
    }

    pub fn jam(&self) -> &LinkParams {
        &self.signs.jam
    }

    /// Rebuild the per-block channel matrices of both links.
    pub fn channels(&self, cfg: &OfdmConfig, mats: &OfdmMatrices) -> Result<(LinkChannel, LinkChannel)> {
        Ok((LinkChannel::new(self.uav(), cfg, mats)?, LinkChannel::new(self.jam(), cfg, mats)?))
    }
}

/// Cycle scan, Doppler sets, per-path delay and gain, sign resolution.
pub fn estimate_channels(blocks: &BlockSequence, nu_u1: f64, cfg: &OfdmConfig, mats: &OfdmMatrices, est_cfg: &EstimatorConfig) -> Result<ChannelEstimate> {
    let est = CccmEstimator::new(blocks)?;
    let scan = scan_grid(&est, &est_cfg.scan);
    let peaks = find_peaks(&est, &scan, &est_cfg.scan)?;
    let (dopplers, _) = estimate_dopplers(&peaks, est_cfg.k_u, nu_u1)?;
    let path = |nu: f64| estimate_path(&est.set(2.0 * nu), nu, cfg, mats, &est_cfg.delay, est_cfg.psi_model);
    let uav_paths = dopplers.uav.iter().map(|&nu| path(nu)).collect::<Result<Vec<_>>>()?;
    let jam_paths = dopplers.jam.iter().map(|&nu| path(nu)).collect::<Result<Vec<_>>>()?;
    let probe = 0..est_cfg.probe_blocks.min(blocks.n_blocks);
    let signs = resolve_signs(&uav_paths, &jam_paths, blocks, probe, cfg, mats)?;
    Ok(ChannelEstimate { peaks, dopplers, uav_paths, jam_paths, signs })
}
