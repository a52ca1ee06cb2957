//! Widely-linear MMSE pre-detection with post-sorted serial cancellation.

use nalgebra::Cholesky;

use crate::linalg::{downdate_column, qr_r, solve_upper, upper_tri_inverse};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Relative size below which a diagonal entry of `R` counts as zero.
const RANK_TOL: f64 = 1e-13;

/// Detector variants compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorKind {
    /// Joint WL-MMSE with post-sorting and serial cancellation.
    Sic,
    /// Plain WL-MMSE, no cancellation.
    Mmse,
    /// Serial cancellation on the UAV symbols only, jammer as disturbance.
    SicJu,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Sic => "wl-mmse-sic",
            DetectorKind::Mmse => "wl-mmse",
            DetectorKind::SicJu => "wl-mmse-sic-ju",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sic" | "wl-mmse-sic" => Ok(DetectorKind::Sic),
            "mmse" | "wl-mmse" => Ok(DetectorKind::Mmse),
            "ju" | "sic-ju" | "wl-mmse-sic-ju" => Ok(DetectorKind::SicJu),
            other => Err(Error::Config(format!("unknown detector '{other}'"))),
        }
    }
}

/// How the triangular factor is refreshed between cancellation steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QrUpdate {
    /// Fresh QR of the stacked matrix at every step.
    Recompute,
    /// Drop the cancelled column from `R` and re-triangularize with Givens
    /// rotations. Same `R^H R` as a fresh factorization.
    #[default]
    Downdate,
}

/// `(y; y*)`.
pub fn augment_vector(y: &CVector) -> CVector {
    let m = y.len();
    CVector::from_fn(2 * m, |i, _| if i < m { y[i] } else { y[i - m].conj() })
}

/// `[[A, B], [A*, B*]]` for any number of column blocks.
pub fn augment_matrix(blocks: &[&CMatrix]) -> CMatrix {
    let m = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(2 * m, cols);
    let mut c0 = 0;
    for b in blocks {
        for c in 0..b.ncols() {
            for r in 0..m {
                out[(r, c0 + c)] = b[(r, c)];
                out[(r + m, c0 + c)] = b[(r, c)].conj();
            }
        }
        c0 += b.ncols();
    }
    out
}

/// Augmented observation model of one block.
#[derive(Clone, Debug)]
pub struct AugmentedModel {
    pub y_tilde: CVector,
    pub h_tilde: CMatrix,
    pub noise_var: f64,
}

impl AugmentedModel {
    pub fn new(y: &CVector, h_u: &CMatrix, h_j: &CMatrix, noise_var: f64) -> Self {
        AugmentedModel { y_tilde: augment_vector(y), h_tilde: augment_matrix(&[h_u, h_j]), noise_var }
    }
}

/// `(H^H H + sigma^2 I)^-1 H^H`.
pub fn wl_mmse_filter(h: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    let n = h.ncols();
    let gram = h.adjoint() * h + CMatrix::identity(n, n) * C64::new(noise_var, 0.0);
    let inv = gram.try_inverse().ok_or_else(|| Error::DegenerateChannel("singular Gram matrix".into()))?;
    Ok(inv * h.adjoint())
}

/// `H^H (H H^H + sigma^2 I)^-1`, the dual form of [`wl_mmse_filter`].
pub fn wl_mmse_filter_dual(h: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    let m = h.nrows();
    let outer = h * h.adjoint() + CMatrix::identity(m, m) * C64::new(noise_var, 0.0);
    let inv = outer.try_inverse().ok_or_else(|| Error::DegenerateChannel("singular outer-product matrix".into()))?;
    Ok(h.adjoint() * inv)
}

fn stacked(h: &CMatrix, noise_var: f64) -> CMatrix {
    let (m, n) = h.shape();
    let sd = noise_var.sqrt();
    let mut g = CMatrix::zeros(m + n, n);
    g.rows_mut(0, m).copy_from(h);
    for i in 0..n {
        g[(m + i, i)] = C64::new(sd, 0.0);
    }
    g
}

fn check_rank(r: &CMatrix) -> Result<()> {
    let n = r.nrows();
    let max = (0..n).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    for i in 0..n {
        if !(r[(i, i)].norm() > RANK_TOL * max) {
            return Err(Error::NumericalRank(format!("diagonal entry {i} of R is zero")));
        }
    }
    Ok(())
}

/// Pre-detector output and the triangular factor it came from.
#[derive(Clone, Debug)]
pub struct QrPredetection {
    pub z: CVector,
    pub r: CMatrix,
}

/// `z = R^-1 Q^H (y; 0)` from the economy QR of `(H; sigma I)`.
pub fn qr_predetect(y: &CVector, h: &CMatrix, noise_var: f64) -> Result<QrPredetection> {
    let (m, n) = h.shape();
    if y.len() != m {
        return Err(Error::Dimension(format!("observation has {} entries, channel has {m} rows", y.len())));
    }
    let qr = stacked(h, noise_var).qr();
    let q = qr.q();
    let r = qr.r();
    check_rank(&r)?;
    let mut ext = CVector::zeros(m + n);
    ext.rows_mut(0, m).copy_from(y);
    let z = solve_upper(&r, &(q.adjoint() * ext))?;
    Ok(QrPredetection { z, r })
}

/// Post-detection SDNRs and the index selected for detection.
#[derive(Clone, Debug)]
pub struct Psa {
    pub gamma: Vec<f64>,
    pub best: usize,
}

fn row_norms(rinv: &CMatrix) -> Vec<f64> {
    let n = rinv.nrows();
    (0..n).map(|m| (m..n).map(|l| rinv[(m, l)].norm_sqr()).sum()).collect()
}

fn select(a: &[f64], noise_var: f64) -> Psa {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate() {
        if v < a[best] {
            best = i;
        }
    }
    let gamma = a.iter().map(|&v| 1.0 / (noise_var * v) - 1.0).collect();
    Psa { gamma, best }
}

/// SDNRs from the rows of `R^-1`. The largest SDNR is the smallest row
/// norm, which stays well defined when `sigma^2 = 0`.
pub fn sdnr_psa(r: &CMatrix, noise_var: f64) -> Result<Psa> {
    let rinv = upper_tri_inverse(r)?;
    Ok(select(&row_norms(&rinv), noise_var))
}

/// SDNRs from the diagonal of `(H^H H + sigma^2 I)^-1`.
pub fn sdnr_direct(h: &CMatrix, noise_var: f64) -> Result<Vec<f64>> {
    let n = h.ncols();
    let gram = h.adjoint() * h + CMatrix::identity(n, n) * C64::new(noise_var, 0.0);
    let inv = gram.try_inverse().ok_or_else(|| Error::DegenerateChannel("singular Gram matrix".into()))?;
    Ok((0..n).map(|m| 1.0 / (noise_var * inv[(m, m)].re) - 1.0).collect())
}

/// Minimum-distance BPSK decision on the real part.
pub fn quantize(z: C64) -> f64 {
    if z.re >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `sum |z - Q(z)|^2`.
pub fn quantization_residual(z: &CVector) -> f64 {
    z.iter().map(|&v| (v - C64::new(quantize(v), 0.0)).norm_sqr()).sum()
}

/// Step-0 pre-detector output `R^-1 R^-H H^H y`.
pub fn predetect(y: &CVector, h: &CMatrix, noise_var: f64) -> Result<CVector> {
    let r = qr_r(stacked(h, noise_var));
    check_rank(&r)?;
    let rinv = upper_tri_inverse(&r)?;
    Ok(&rinv * (rinv.adjoint() * (h.adjoint() * y)))
}

/// One hard decision of the cancellation loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub step: usize,
    /// Column index in the original augmented matrix.
    pub origin: usize,
    pub symbol: f64,
}

/// State of the serial cancellation loop.
#[derive(Clone, Debug)]
pub struct SicState {
    pub y: CVector,
    pub h: CMatrix,
    pub origin: Vec<usize>,
    pub detected: Vec<Decision>,
    pub noise_var: f64,
    pub update: QrUpdate,
    r: Option<CMatrix>,
}

impl SicState {
    pub fn new(y: CVector, h: CMatrix, noise_var: f64, update: QrUpdate) -> Self {
        let origin = (0..h.ncols()).collect();
        SicState { y, h, origin, detected: Vec::new(), noise_var, update, r: None }
    }

    pub fn remaining(&self) -> usize {
        self.h.ncols()
    }
}

/// Pre-detect, pick the best SDNR entry, quantize it and cancel it.
pub fn sic_step(mut state: SicState) -> Result<SicState> {
    if state.remaining() == 0 {
        return Err(Error::Dimension("no symbols left to detect".into()));
    }
    let r = match (state.update, state.r.take()) {
        (QrUpdate::Downdate, Some(r)) => r,
        _ => qr_r(stacked(&state.h, state.noise_var)),
    };
    check_rank(&r)?;
    let rinv = upper_tri_inverse(&r)?;
    let psa = select(&row_norms(&rinv), state.noise_var);
    let l = psa.best;
    let x = rinv.adjoint() * (state.h.adjoint() * &state.y);
    let z: C64 = (l..rinv.ncols()).map(|k| rinv[(l, k)] * x[k]).sum();
    let xi = quantize(z);
    let col = state.h.column(l).into_owned();
    state.y.axpy(C64::new(-xi, 0.0), &col, C64::new(1.0, 0.0));
    let step = state.detected.len();
    state.detected.push(Decision { step, origin: state.origin[l], symbol: xi });
    state.origin.remove(l);
    state.h = state.h.remove_column(l);
    if state.update == QrUpdate::Downdate && state.remaining() > 0 {
        state.r = Some(downdate_column(&r, l));
    }
    Ok(state)
}

/// Run cancellation until no columns remain; returns symbols by origin.
pub fn run_sic(mut state: SicState) -> Result<(Vec<f64>, SicState)> {
    let total = state.remaining() + state.detected.len();
    while state.remaining() > 0 {
        state = sic_step(state)?;
    }
    let mut out = vec![0.0; total];
    for d in &state.detected {
        out[d.origin] = d.symbol;
    }
    Ok((out, state))
}

/// Hard decisions for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub uav: Vec<f64>,
    pub jam: Option<Vec<f64>>,
}

/// Whitening of the jammer-plus-noise disturbance for the UAV-only model.
fn whiten(y_t: &CVector, hu_t: &CMatrix, hj_t: &CMatrix, noise_var: f64) -> Result<(CVector, CMatrix, f64)> {
    let n = y_t.len();
    let mut rd = hj_t * hj_t.adjoint();
    let scale = (0..n).map(|i| rd[(i, i)].re).sum::<f64>() / n as f64;
    if scale == 0.0 {
        return Ok((y_t.clone(), hu_t.clone(), noise_var));
    }
    let reg = if noise_var > 1e-10 * scale { noise_var } else { noise_var.max(1e-10 * scale) };
    for i in 0..n {
        rd[(i, i)] += C64::new(reg, 0.0);
    }
    let chol = Cholesky::new(rd).ok_or_else(|| Error::DegenerateChannel("disturbance covariance not positive definite".into()))?;
    let l = chol.l();
    let yw = l.solve_lower_triangular(y_t).ok_or_else(|| Error::NumericalRank("whitening failed".into()))?;
    let hw = l.solve_lower_triangular(hu_t).ok_or_else(|| Error::NumericalRank("whitening failed".into()))?;
    Ok((yw, hw, 1.0))
}

/// Detect one block with the chosen variant. `y` is the CP-removed block.
pub fn detect_block(
    y: &CVector,
    h_u: &CMatrix,
    h_j: &CMatrix,
    noise_var: f64,
    kind: DetectorKind,
    update: QrUpdate,
) -> Result<Detection> {
    let m = h_u.ncols();
    let y_t = augment_vector(y);
    match kind {
        DetectorKind::Sic => {
            let h_t = augment_matrix(&[h_u, h_j]);
            let (s, _) = run_sic(SicState::new(y_t, h_t, noise_var, update))?;
            Ok(Detection { uav: s[..m].to_vec(), jam: Some(s[m..].to_vec()) })
        }
        DetectorKind::Mmse => {
            let h_t = augment_matrix(&[h_u, h_j]);
            let z = predetect(&y_t, &h_t, noise_var)?;
            let s: Vec<f64> = z.iter().map(|&v| quantize(v)).collect();
            Ok(Detection { uav: s[..m].to_vec(), jam: Some(s[m..].to_vec()) })
        }
        DetectorKind::SicJu => {
            let hu_t = augment_matrix(&[h_u]);
            let hj_t = augment_matrix(&[h_j]);
            let (yw, hw, nv) = whiten(&y_t, &hu_t, &hj_t, noise_var)?;
            let (s, _) = run_sic(SicState::new(yw, hw, nv, update))?;
            Ok(Detection { uav: s, jam: None })
        }
    }
}
