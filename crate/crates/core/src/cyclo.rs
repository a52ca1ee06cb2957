//! Conjugate cyclic correlation matrices (CCCMs) and the cycle-frequency
//! objective `J(alpha) = sum_r ||R^alpha[r]||_F^2`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::channel::{BlockSequence, LinkChannel};
use crate::linalg::{frob2, golden_max, median};
use crate::{CMatrix, Error, Result, C64};

/// The three lags used throughout, in storage order.
pub const LAGS: [i32; 3] = [-1, 0, 1];

fn lag_index(r: i32) -> usize {
    match r {
        -1 => 0,
        0 => 1,
        1 => 2,
        _ => panic!("lag {r} not in {{-1, 0, 1}}"),
    }
}

/// CCCMs at one cycle frequency for lags -1, 0, 1.
#[derive(Clone, Debug)]
pub struct CccmSet {
    pub alpha: f64,
    pub r: [CMatrix; 3],
}

impl CccmSet {
    pub fn zeros(alpha: f64, p: usize) -> Self {
        CccmSet { alpha, r: [CMatrix::zeros(p, p), CMatrix::zeros(p, p), CMatrix::zeros(p, p)] }
    }

    pub fn lag(&self, r: i32) -> &CMatrix {
        &self.r[lag_index(r)]
    }

    /// `sum_r ||R[r]||_F^2`.
    pub fn objective(&self) -> f64 {
        self.r.iter().map(frob2).sum()
    }
}

/// Analytic CCCMs: the sum of `Xi_{k,h}[r]` over ordered path pairs of
/// the same link whose Doppler sum equals `alpha` within `tol`.
pub fn analytic_cccm(links: &[&LinkChannel], alpha: f64, tol: f64) -> CccmSet {
    let p = links.iter().flat_map(|l| l.paths.first()).map(|pm| pm.b0.nrows()).next().unwrap_or(0);
    let mut out = CccmSet::zeros(alpha, p);
    for link in links {
        let pp = &link.params.paths;
        for (k, pk) in pp.iter().enumerate() {
            for (h, ph) in pp.iter().enumerate() {
                if (pk.nu + ph.nu - alpha).abs() > tol {
                    continue;
                }
                let g = pk.gain * ph.gain;
                let (mk, mh) = (&link.paths[k], &link.paths[h]);
                let ph_pos = C64::from_polar(1.0, 2.0 * PI * ph.nu);
                out.r[0] += (&mk.b0 * mh.b1.transpose()) * (g * ph_pos);
                out.r[1] += (&mk.b0 * mh.b0.transpose() + &mk.b1 * mh.b1.transpose()) * g;
                out.r[2] += (&mk.b1 * mh.b0.transpose()) * (g * ph_pos.conj());
            }
        }
    }
    out
}

/// Analytic `J(alpha)`.
pub fn analytic_objective(links: &[&LinkChannel], alpha: f64, tol: f64) -> f64 {
    analytic_cccm(links, alpha, tol).objective()
}

/// All pairwise Doppler sums `nu_k + nu_h`, `k <= h`, within each link.
pub fn cycle_frequencies(links: &[&LinkChannel]) -> Vec<f64> {
    let mut out = Vec::new();
    for link in links {
        let nus = link.params.dopplers();
        for k in 0..nus.len() {
            for h in k..nus.len() {
                out.push(nus[k] + nus[h]);
            }
        }
    }
    out
}

/// Direct finite-sample CCCM evaluator over `n = 1..=N-2`.
///
/// The received samples are kept as split real/imaginary arrays so the
/// `P x P` rank-one accumulations vectorize.
pub struct CccmEstimator {
    p: usize,
    n_blocks: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CccmEstimator {
    pub fn new(blocks: &BlockSequence) -> Result<Self> {
        if blocks.n_blocks < 3 {
            return Err(Error::InsufficientData(format!("{} blocks, need at least 3", blocks.n_blocks)));
        }
        Ok(CccmEstimator {
            p: blocks.p(),
            n_blocks: blocks.n_blocks,
            re: blocks.ybar.iter().map(|z| z.re).collect(),
            im: blocks.ybar.iter().map(|z| z.im).collect(),
        })
    }

    /// Number of averaged products `N' = N - 2`.
    pub fn n_eff(&self) -> usize {
        self.n_blocks - 2
    }

    fn accumulate(&self, alpha: f64, lags: &[i32]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let p = self.p;
        let mut acc: Vec<(Vec<f64>, Vec<f64>)> = lags.iter().map(|_| (vec![0.0; p * p], vec![0.0; p * p])).collect();
        let mut wr = vec![0.0; p];
        let mut wi = vec![0.0; p];
        for n in 1..self.n_blocks - 1 {
            let (s, c) = (2.0 * PI * (alpha * n as f64).rem_euclid(1.0)).sin_cos();
            let (er, ei) = (c, -s);
            let yr = &self.re[n * p..(n + 1) * p];
            let yi = &self.im[n * p..(n + 1) * p];
            for a in 0..p {
                wr[a] = er * yr[a] - ei * yi[a];
                wi[a] = er * yi[a] + ei * yr[a];
            }
            for (li, &r) in lags.iter().enumerate() {
                let m = (n as i64 - r as i64) as usize;
                let zr = &self.re[m * p..(m + 1) * p];
                let zi = &self.im[m * p..(m + 1) * p];
                let (ar, ai) = &mut acc[li];
                for a in 0..p {
                    let (xr, xi) = (wr[a], wi[a]);
                    let rr = &mut ar[a * p..(a + 1) * p];
                    let ri = &mut ai[a * p..(a + 1) * p];
                    for b in 0..p {
                        rr[b] += xr * zr[b] - xi * zi[b];
                        ri[b] += xr * zi[b] + xi * zr[b];
                    }
                }
            }
        }
        acc
    }

    /// `R^alpha[r] = (1/N') sum_n ybar[n] ybar[n-r]^T exp(-j 2 pi alpha n)`.
    pub fn matrix(&self, alpha: f64, r: i32) -> CMatrix {
        let _ = lag_index(r);
        let acc = self.accumulate(alpha, &[r]);
        self.to_matrix(&acc[0])
    }

    fn to_matrix(&self, acc: &(Vec<f64>, Vec<f64>)) -> CMatrix {
        let p = self.p;
        let scale = 1.0 / self.n_eff() as f64;
        CMatrix::from_fn(p, p, |a, b| C64::new(acc.0[a * p + b], acc.1[a * p + b]) * scale)
    }

    pub fn set(&self, alpha: f64) -> CccmSet {
        let acc = self.accumulate(alpha, &LAGS);
        CccmSet { alpha, r: [self.to_matrix(&acc[0]), self.to_matrix(&acc[1]), self.to_matrix(&acc[2])] }
    }

    /// Finite-sample `J(alpha)`.
    pub fn objective(&self, alpha: f64) -> f64 {
        let acc = self.accumulate(alpha, &LAGS);
        let scale = 1.0 / (self.n_eff() as f64).powi(2);
        acc.iter().map(|(r, i)| r.iter().zip(i).map(|(x, y)| x * x + y * y).sum::<f64>()).sum::<f64>() * scale
    }
}

pub fn estimate_cccm(blocks: &BlockSequence, alpha: f64, r: i32) -> Result<CMatrix> {
    Ok(CccmEstimator::new(blocks)?.matrix(alpha, r))
}

/// Peak-search settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    /// Minimum number of grid points on `[-1/2, 1/2)`.
    pub min_grid: usize,
    /// Grid points per `1/N'` (the grid is a power of two at least
    /// `oversample * N'`).
    pub oversample: usize,
    /// Threshold in robust standard deviations above the median floor.
    pub threshold_sigmas: f64,
    /// Candidates are dropped when their excess over the floor is below
    /// this multiple of a stronger peak's Dirichlet sidelobe envelope.
    pub sidelobe_factor: f64,
    /// Golden-section tolerance as a fraction of the grid spacing.
    pub refine_fraction: f64,
    /// Upper bound on refined peaks.
    pub max_peaks: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { min_grid: 1 << 14, oversample: 2, threshold_sigmas: 6.0, sidelobe_factor: 4.0, refine_fraction: 1e-3, max_peaks: 32 }
    }
}

/// `J(alpha)` on a uniform grid over `[-1/2, 1/2)`.
#[derive(Clone, Debug)]
pub struct ObjectiveScan {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
}

/// Grid evaluation through one zero-padded FFT per distinct product
/// sequence `ybar_a[n] ybar_b[n-r]`. For `r = 0` the sequences for `(a, b)`
/// and `(b, a)` coincide and are counted twice.
pub fn scan_grid(est: &CccmEstimator, cfg: &ScanConfig) -> ObjectiveScan {
    let p = est.p;
    let n_eff = est.n_eff();
    let len = cfg.min_grid.max((cfg.oversample * n_eff).next_power_of_two());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; len];
    let mut run = |a: usize, b: usize, r: i32, weight: f64| {
        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for n in 1..est.n_blocks - 1 {
            let m = (n as i64 - r as i64) as usize;
            let (xr, xi) = (est.re[n * p + a], est.im[n * p + a]);
            let (zr, zi) = (est.re[m * p + b], est.im[m * p + b]);
            buf[(n - 1) % len] += Complex::new(xr * zr - xi * zi, xr * zi + xi * zr);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (acc, v) in power.iter_mut().zip(&buf) {
            *acc += weight * v.norm_sqr();
        }
    };
    for a in 0..p {
        for b in a..p {
            run(a, b, 0, if a == b { 1.0 } else { 2.0 });
        }
        for b in 0..p {
            run(a, b, -1, 1.0);
            run(a, b, 1, 1.0);
        }
    }
    let scale = 1.0 / (n_eff as f64).powi(2);
    let half = len / 2;
    let alphas = (0..len).map(|i| i as f64 / len as f64 - 0.5).collect();
    let values = (0..len).map(|i| power[(i + half) % len] * scale).collect();
    ObjectiveScan { alphas, values }
}

/// Located cycle frequencies.
#[derive(Clone, Debug)]
pub struct CyclePeakList {
    /// Refined peak locations, ascending.
    pub alphas: Vec<f64>,
    /// Finite-sample `J` at each peak.
    pub scores: Vec<f64>,
    /// Grid spacing of the coarse scan.
    pub resolution: f64,
    /// Golden-section tolerance used for refinement.
    pub refine_tol: f64,
    /// Median of the grid values.
    pub floor: f64,
    pub threshold: f64,
    pub n_eff: usize,
}

fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Coarse scan, thresholding against the median floor, sidelobe-aware
/// candidate selection, then golden-section refinement on the exact
/// finite-sample objective.
pub fn scan_objective(blocks: &BlockSequence, cfg: &ScanConfig) -> Result<(CyclePeakList, ObjectiveScan)> {
    let est = CccmEstimator::new(blocks)?;
    let scan = scan_grid(&est, cfg);
    let peaks = find_peaks(&est, &scan, cfg)?;
    Ok((peaks, scan))
}

pub fn find_peaks(est: &CccmEstimator, scan: &ObjectiveScan, cfg: &ScanConfig) -> Result<CyclePeakList> {
    let v = &scan.values;
    let len = v.len();
    let n_eff = est.n_eff() as f64;
    let floor = median(v);
    let mad = median(&v.iter().map(|x| (x - floor).abs()).collect::<Vec<_>>());
    let threshold = floor + cfg.threshold_sigmas * 1.4826 * mad;
    let mut cand: Vec<usize> = (0..len)
        .filter(|&i| {
            let prev = v[(i + len - 1) % len];
            let next = v[(i + 1) % len];
            v[i] > threshold && v[i] >= prev && v[i] > next
        })
        .collect();
    cand.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let envelope = |d: f64| {
        let s = n_eff * (PI * d).sin();
        1.0 / (s * s)
    };
    let mut kept: Vec<usize> = Vec::new();
    for &c in &cand {
        let ac = scan.alphas[c];
        let excess = v[c] - floor;
        let shadowed = kept.iter().any(|&k| {
            let d = circ_dist(ac, scan.alphas[k]);
            d < 1.0 / n_eff || excess < cfg.sidelobe_factor * (v[k] - floor) * envelope(d)
        });
        if !shadowed {
            kept.push(c);
            if kept.len() == cfg.max_peaks {
                break;
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::NoPeaks);
    }
    let resolution = 1.0 / len as f64;
    let refine_tol = resolution * cfg.refine_fraction;
    let mut refined: Vec<(f64, f64)> = kept
        .iter()
        .map(|&k| {
            let a0 = scan.alphas[k];
            let (a, j) = golden_max(|x| est.objective(x), a0 - resolution, a0 + resolution, refine_tol);
            if j >= v[k] {
                (a, j)
            } else {
                (a0, v[k])
            }
        })
        .collect();
    refined.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, j) in refined {
        if merged.iter().all(|&(b, _)| circ_dist(a, b) >= 0.5 / n_eff) {
            merged.push((a, j));
        }
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(CyclePeakList {
        alphas: merged.iter().map(|x| x.0).collect(),
        scores: merged.iter().map(|x| x.1).collect(),
        resolution,
        refine_tol,
        floor,
        threshold,
        n_eff: est.n_eff(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_received, BlockSeeds, LinkLabel, LinkParams, PathParams};
    use crate::linalg::{real_to_complex, rel_frob_err};
    use crate::signal::{build_matrices, OfdmConfig};
    use nalgebra::DMatrix;

    fn setup(noise: f64) -> (OfdmConfig, crate::signal::OfdmMatrices) {
        let mut cfg = OfdmConfig::new(8, 4, 625e3);
        cfg.noise_var = noise;
        let mats = build_matrices(&cfg).unwrap();
        (cfg, mats)
    }

    fn link(label: LinkLabel, paths: &[(f64, f64, f64, f64)], cfg: &OfdmConfig) -> LinkParams {
        LinkParams::new(
            label,
            paths.iter().map(|&(gr, gi, tau, nu)| PathParams { gain: C64::new(gr, gi), tau: tau * cfg.tc(), nu }).collect(),
        )
    }

    /// Textbook form with explicit T, D and Omega.
    fn xi_oracle(cfg: &OfdmConfig, mats: &crate::signal::OfdmMatrices, pk: &PathParams, ph: &PathParams) -> [CMatrix; 3] {
        let p = cfg.p();
        let t = |tau, b| real_to_complex(&crate::channel::build_toeplitz(cfg, tau, b).unwrap());
        let d = |nu: f64| CMatrix::from_diagonal(&crate::CVector::from_vec(crate::channel::doppler_diag(p, nu)));
        let oot = &mats.omega * mats.omega.transpose();
        let (tk0, tk1, th0, th1) = (t(pk.tau, 0), t(pk.tau, 1), t(ph.tau, 0), t(ph.tau, 1));
        let (dk, dh) = (d(pk.nu), d(ph.nu));
        let g = pk.gain * ph.gain;
        let e = C64::from_polar(1.0, 2.0 * PI * ph.nu);
        [
            &dk * &tk0 * &oot * th1.transpose() * &dh * (g * e),
            &dk * (&tk0 * &oot * th0.transpose() + &tk1 * &oot * th1.transpose()) * &dh * g,
            &dk * &tk1 * &oot * th0.transpose() * &dh * (g * e.conj()),
        ]
    }

    #[test]
    fn analytic_matches_textbook_form() {
        let (cfg, mats) = setup(0.0);
        let u = link(LinkLabel::Uav, &[(1.0, 0.3, 0.6, 0.011), (-0.4, 0.2, 2.3, -0.007)], &cfg);
        let uc = LinkChannel::new(&u, &cfg, &mats).unwrap();
        let (p0, p1) = (u.paths[0], u.paths[1]);
        let diag = analytic_cccm(&[&uc], 2.0 * p0.nu, 1e-12);
        let o = xi_oracle(&cfg, &mats, &p0, &p0);
        for i in 0..3 {
            assert!(rel_frob_err(&diag.r[i], &o[i]) < 1e-12);
        }
        let cross = analytic_cccm(&[&uc], p0.nu + p1.nu, 1e-12);
        let a = xi_oracle(&cfg, &mats, &p0, &p1);
        let b = xi_oracle(&cfg, &mats, &p1, &p0);
        for i in 0..3 {
            assert!(rel_frob_err(&cross.r[i], &(&a[i] + &b[i])) < 1e-12);
        }
        let off = analytic_cccm(&[&uc], 0.1234, 1e-12);
        assert_eq!(off.objective(), 0.0);
        // Symmetric at lag 0 on the diagonal term.
        assert!(rel_frob_err(&diag.r[1].transpose(), &diag.r[1]) < 1e-13);
    }

    #[test]
    fn analytic_scales_with_gain_squared() {
        let (cfg, mats) = setup(0.0);
        let u1 = link(LinkLabel::Uav, &[(1.0, 0.5, 1.2, 0.02)], &cfg);
        let u2 = link(LinkLabel::Uav, &[(3.0, 1.5, 1.2, 0.02)], &cfg);
        let a = analytic_cccm(&[&LinkChannel::new(&u1, &cfg, &mats).unwrap()], 0.04, 1e-12);
        let b = analytic_cccm(&[&LinkChannel::new(&u2, &cfg, &mats).unwrap()], 0.04, 1e-12);
        assert!((b.objective().sqrt() / a.objective().sqrt() - 9.0).abs() < 1e-10);
    }

    #[test]
    fn analytic_objective_has_two_peaks_for_single_paths() {
        let (cfg, mats) = setup(0.0);
        let u = LinkChannel::new(&link(LinkLabel::Uav, &[(1.0, 0.0, 0.5, 0.02)], &cfg), &cfg, &mats).unwrap();
        let j = LinkChannel::new(&link(LinkLabel::Jammer, &[(0.7, 0.7, 1.5, -0.031)], &cfg), &cfg, &mats).unwrap();
        let freqs = cycle_frequencies(&[&u, &j]);
        assert_eq!(freqs.len(), 2);
        let support: Vec<f64> = (0..2000)
            .map(|i| -0.5 + (i as f64 + 0.37) / 2000.0)
            .chain(freqs.iter().copied())
            .filter(|&a| analytic_objective(&[&u, &j], a, 1e-12) > 0.0)
            .collect();
        assert_eq!(support.len(), 2);
        assert!(support.contains(&0.04) && support.contains(&-0.062));
    }

    #[test]
    fn sample_cccm_converges_and_noise_is_small() {
        let (cfg, mats) = setup(0.05);
        let u = link(LinkLabel::Uav, &[(1.0, 0.0, 1.3, 0.017)], &cfg);
        let uc = LinkChannel::new(&u, &cfg, &mats).unwrap();
        let none = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &cfg, &mats).unwrap();
        let seq = generate_received(&uc, &none, 10_000, BlockSeeds::from_base(4), &cfg);
        let est = CccmEstimator::new(&seq).unwrap();
        let got = est.set(0.034);
        let truth = analytic_cccm(&[&uc], 0.034, 1e-12);
        let err: f64 = (0..3).map(|i| frob2(&(&got.r[i] - &truth.r[i]))).sum::<f64>().sqrt();
        assert!(err / truth.objective().sqrt() < 0.1);
        let r1 = estimate_cccm(&seq, 0.034, 1).unwrap();
        assert!(rel_frob_err(&r1, &got.r[2]) < 1e-14);

        let seq0 = generate_received(&none, &none, 10_000, BlockSeeds::from_base(4), &cfg);
        let est0 = CccmEstimator::new(&seq0).unwrap();
        for alpha in [0.0, 0.034] {
            let n0 = est0.set(alpha).objective().sqrt();
            assert!(n0 < 0.05 * truth.objective().sqrt(), "noise-only norm {n0}");
        }
    }

    #[test]
    fn estimator_needs_three_blocks() {
        let (cfg, mats) = setup(0.1);
        let none = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &cfg, &mats).unwrap();
        let seq = generate_received(&none, &none, 2, BlockSeeds::from_base(1), &cfg);
        assert!(matches!(estimate_cccm(&seq, 0.0, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn grid_scan_matches_direct_objective() {
        let (cfg, mats) = setup(0.1);
        let u = LinkChannel::new(&link(LinkLabel::Uav, &[(1.0, 0.0, 0.5, 0.02)], &cfg), &cfg, &mats).unwrap();
        let none = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &cfg, &mats).unwrap();
        let seq = generate_received(&u, &none, 300, BlockSeeds::from_base(2), &cfg);
        let est = CccmEstimator::new(&seq).unwrap();
        let sc = ScanConfig { min_grid: 1024, ..ScanConfig::default() };
        let scan = scan_grid(&est, &sc);
        for i in [0, 17, 512, 530, 1023] {
            let direct = est.objective(scan.alphas[i]);
            assert!((scan.values[i] - direct).abs() < 1e-10 * direct, "grid {i}");
        }
    }

    #[test]
    fn scan_finds_all_cycle_frequencies() {
        let (cfg, mats) = setup(0.01);
        let u = link(LinkLabel::Uav, &[(1.0, 0.2, 0.5, 0.021), (0.6, -0.5, 2.0, -0.013)], &cfg);
        let j = link(LinkLabel::Jammer, &[(0.9, 0.1, 1.4, 0.047)], &cfg);
        let uc = LinkChannel::new(&u, &cfg, &mats).unwrap();
        let jc = LinkChannel::new(&j, &cfg, &mats).unwrap();
        let n = 10_000;
        let seq = generate_received(&uc, &jc, n, BlockSeeds::from_base(8), &cfg);
        let (peaks, _) = scan_objective(&seq, &ScanConfig::default()).unwrap();
        let mut truth = cycle_frequencies(&[&uc, &jc]);
        truth.sort_by(f64::total_cmp);
        assert_eq!(peaks.alphas.len(), truth.len(), "{:?}", peaks.alphas);
        for (a, t) in peaks.alphas.iter().zip(&truth) {
            assert!((a - t).abs() < 2.0 / n as f64, "{a} vs {t}");
        }
    }

    #[test]
    fn circularity_kills_noise_at_zero() {
        let (cfg, mats) = setup(1.0);
        let none = LinkChannel::new(&LinkParams::new(LinkLabel::Jammer, vec![]), &cfg, &mats).unwrap();
        let seq = generate_received(&none, &none, 20_000, BlockSeeds::from_base(5), &cfg);
        let r0 = estimate_cccm(&seq, 0.0, 0).unwrap();
        let eye = DMatrix::<f64>::identity(cfg.p(), cfg.p());
        assert!(frob2(&r0).sqrt() < 0.05 * eye.norm());
    }
}
