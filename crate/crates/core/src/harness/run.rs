//! Monte Carlo driver.

use rand::RngCore;
use rayon::prelude::*;

use super::metrics::{param_mse, throughput_from_aber, BitCounts, MetricsRecord, MseScale, ParamMse};
use super::scenario::{db, CsiMode, OperatingPoint, Scenario};
use crate::channel::{draw_links, generate_received, BlockSeeds, BlockSequence, LinkChannel, LinkParams};
use crate::cyclo::{find_peaks, scan_grid, CccmEstimator, CyclePeakList, ObjectiveScan};
use crate::delay_gain::{build_phi, estimate_channels, DelayObjective, EstimatorConfig};
use crate::detector::{detect_block, DetectorKind, QrUpdate};
use crate::doppler::estimate_dopplers;
use crate::linalg::KahanSum;
use crate::signal::{build_matrices, substream, OfdmConfig, OfdmMatrices};
use crate::{Error, Result};

/// Everything a run needs that does not change between runs.
pub struct RunContext {
    pub scenario: Scenario,
    pub cfg: OfdmConfig,
    pub mats: OfdmMatrices,
    pub points: Vec<OperatingPoint>,
    pub detectors: Vec<DetectorKind>,
    pub csi: Vec<CsiMode>,
    pub update: QrUpdate,
    pub estimator: EstimatorConfig,
}

impl RunContext {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let cfg = scenario.ofdm()?;
        Ok(RunContext {
            mats: build_matrices(&cfg)?,
            cfg,
            points: scenario.points(),
            detectors: scenario.detector_kinds()?,
            csi: scenario.csi_modes()?,
            update: scenario.qr_update()?,
            estimator: scenario.estimator()?,
            scenario: scenario.clone(),
        })
    }

    /// Unit-variance channel draw and block seed of run `run`. Shared by
    /// every operating point so that points differ only in power.
    pub fn draw(&self, run: usize) -> Result<(LinkParams, LinkParams, u64)> {
        let (pu, pj) = self.scenario.profiles();
        let mut rng = substream(self.scenario.seed, 2 * run as u64);
        let (u, j) = draw_links(&pu, &pj, &self.cfg, &mut rng)?;
        let base = substream(self.scenario.seed, 2 * run as u64 + 1).next_u64();
        Ok((u, j, base))
    }

    fn scales(&self, point: &OperatingPoint) -> (MseScale, MseScale) {
        let (pu, pj) = self.scenario.profiles();
        (
            MseScale { gain_var: point.gain_var_u, max_doppler: pu.max_doppler, delay_spread: pu.delay_spread },
            MseScale { gain_var: point.gain_var_j, max_doppler: pj.max_doppler, delay_spread: pj.delay_spread },
        )
    }
}

fn scaled(link: &LinkParams, var: f64) -> LinkParams {
    let mut out = link.clone();
    for p in &mut out.paths {
        p.gain *= var.sqrt();
    }
    out
}

/// Detector outcome of one run at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub point: usize,
    pub run: usize,
    pub detector: DetectorKind,
    pub csi: CsiMode,
    pub counts: BitCounts,
    /// `ok`, or `failed:<reason>` for estimated CSI.
    pub status: String,
    pub est_k_j: Option<usize>,
    pub mse_uav: Option<ParamMse>,
    pub mse_jam: Option<ParamMse>,
}

/// Everything produced by one run at one operating point.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<RunRow>,
    pub truth: (LinkParams, LinkParams),
    pub estimate: Option<(LinkParams, LinkParams)>,
}

fn error_tag(e: &Error) -> &'static str {
    match e {
        Error::NoPeaks => "no-peaks",
        Error::InconsistentPeakCount(_) => "peak-count",
        Error::ModelMismatch(_) => "model-mismatch",
        Error::Classification(_) => "classification",
        Error::DegeneratePulse(_) => "degenerate-pulse",
        Error::NumericalRank(_) | Error::DegenerateChannel(_) => "numerical",
        _ => "other",
    }
}

/// Detect the first `count` blocks with each detector and channel pair.
fn detect_all(
    ctx: &RunContext,
    blocks: &BlockSequence,
    hu: &LinkChannel,
    hj: &LinkChannel,
    count: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = vec![Vec::with_capacity(count); ctx.detectors.len()];
    for n in 0..count {
        let y = blocks.y_vector(n);
        let (h_u, h_j) = (hu.h(n as i64), hj.h(n as i64));
        for (d, &kind) in ctx.detectors.iter().enumerate() {
            out[d].push(detect_block(&y, &h_u, &h_j, ctx.cfg.noise_var, kind, ctx.update)?.uav);
        }
    }
    Ok(out)
}

/// Flip the UAV decisions if that agrees better with the first `window`
/// transmitted blocks.
fn align_polarity(decisions: &mut [Vec<f64>], sent: &[crate::signal::SymbolBlock], window: usize) {
    let agree: f64 = decisions.iter().zip(sent).take(window).flat_map(|(d, s)| d.iter().zip(&s.0).map(|(a, b)| a * b)).sum();
    if agree < 0.0 {
        for d in decisions.iter_mut() {
            for v in d.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// One Monte Carlo run at one operating point.
pub fn simulate_run(ctx: &RunContext, point_idx: usize, run: usize, draw: &(LinkParams, LinkParams, u64)) -> Result<RunOutcome> {
    let point = &ctx.points[point_idx];
    let cfg = &ctx.cfg;
    let lu = scaled(&draw.0, point.gain_var_u);
    let lj = scaled(&draw.1, point.gain_var_j);
    let cu = LinkChannel::new(&lu, cfg, &ctx.mats)?;
    let cj = LinkChannel::new(&lj, cfg, &ctx.mats)?;
    let blocks = generate_received(&cu, &cj, ctx.scenario.n_blocks, BlockSeeds::from_base(draw.2), cfg);
    let count = ctx.scenario.detect_blocks();
    let mut rows = Vec::new();
    let mut estimate = None;
    let row = |detector, csi, counts, status: String, est_k_j, mse_uav, mse_jam| RunRow {
        point: point_idx,
        run,
        detector,
        csi,
        counts,
        status,
        est_k_j,
        mse_uav,
        mse_jam,
    };
    for &mode in &ctx.csi {
        match mode {
            CsiMode::Exact => {
                let dec = detect_all(ctx, &blocks, &cu, &cj, count)?;
                for (d, &kind) in ctx.detectors.iter().enumerate() {
                    let mut c = BitCounts::default();
                    for (x, s) in dec[d].iter().zip(&blocks.s_uav) {
                        c.add_block(x, &s.0);
                    }
                    rows.push(row(kind, mode, c, "ok".into(), None, None, None));
                }
            }
            CsiMode::Estimated => match estimate_channels(&blocks, lu.paths[0].nu, cfg, &ctx.mats, &ctx.estimator) {
                Err(e) => {
                    let tag = format!("failed:{}", error_tag(&e));
                    for &kind in &ctx.detectors {
                        rows.push(row(kind, mode, BitCounts::default(), tag.clone(), None, None, None));
                    }
                }
                Ok(est) => {
                    let (su, sj) = ctx.scales(point);
                    let mu = param_mse(&lu, est.uav(), &su, cfg);
                    let mj = param_mse(&lj, est.jam(), &sj, cfg);
                    let (eu, ej) = est.channels(cfg, &ctx.mats)?;
                    let mut dec = detect_all(ctx, &blocks, &eu, &ej, count)?;
                    for (d, &kind) in ctx.detectors.iter().enumerate() {
                        align_polarity(&mut dec[d], &blocks.s_uav, ctx.scenario.polarity_blocks);
                        let mut c = BitCounts::default();
                        for (x, s) in dec[d].iter().zip(&blocks.s_uav) {
                            c.add_block(x, &s.0);
                        }
                        rows.push(row(kind, mode, c, "ok".into(), Some(est.dopplers.k_j), mu, mj));
                    }
                    estimate = Some((est.uav().clone(), est.jam().clone()));
                }
            },
        }
    }
    Ok(RunOutcome { rows, truth: (lu, lj), estimate })
}

/// Aggregated records plus every per-run row, in deterministic order.
#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub points: Vec<OperatingPoint>,
    pub records: Vec<MetricsRecord>,
    pub rows: Vec<RunRow>,
}

fn mean_db(values: &[ParamMse]) -> Option<ParamMse> {
    if values.is_empty() {
        return None;
    }
    let mut s = [KahanSum::default(), KahanSum::default(), KahanSum::default()];
    for v in values {
        s[0].add(v.gain);
        s[1].add(v.doppler);
        s[2].add(v.delay);
    }
    let n = values.len() as f64;
    Some(ParamMse { gain: db(s[0].value() / n), doppler: db(s[1].value() / n), delay: db(s[2].value() / n) })
}

/// Run every Monte Carlo run at every operating point and aggregate.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult> {
    let ctx = RunContext::new(scenario)?;
    let per_run: Vec<Result<Vec<RunRow>>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| {
            let draw = ctx.draw(run)?;
            let mut rows = Vec::new();
            for p in 0..ctx.points.len() {
                rows.extend(simulate_run(&ctx, p, run, &draw)?.rows);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_run {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.point, r.csi, r.detector, r.run));
    let mut records = Vec::new();
    for (p, point) in ctx.points.iter().enumerate() {
        for &csi in &ctx.csi {
            for &det in &ctx.detectors {
                let cell: Vec<&RunRow> = rows.iter().filter(|r| r.point == p && r.csi == csi && r.detector == det).collect();
                let mut counts = BitCounts::default();
                let mut failures = 0;
                let (mut mu, mut mj) = (Vec::new(), Vec::new());
                for r in &cell {
                    if r.status == "ok" {
                        counts.merge(&r.counts);
                    } else {
                        failures += 1;
                    }
                    mu.extend(r.mse_uav);
                    mj.extend(r.mse_jam);
                }
                records.push(MetricsRecord {
                    scenario: scenario.name.clone(),
                    sjr_db: point.sjr_db,
                    snr_db: point.snr_db,
                    detector: det.name().into(),
                    csi: csi.name().into(),
                    runs: cell.len(),
                    failures,
                    counts,
                    aber: counts.aber(),
                    throughput: throughput_from_aber(&counts, &ctx.cfg),
                    mse_uav_db: mean_db(&mu),
                    mse_jam_db: mean_db(&mj),
                });
            }
        }
    }
    Ok(ScenarioResult { scenario: scenario.clone(), points: ctx.points.clone(), records, rows })
}

/// Diagnostic curves of one run: the cycle-frequency objective and the
/// delay cost of every estimated path.
pub struct ScanCurves {
    pub objective: ObjectiveScan,
    pub peaks: CyclePeakList,
    /// `(link, path index, [(beta in chips, I(beta))])`.
    pub delay: Vec<(&'static str, usize, Vec<(f64, f64)>)>,
    pub truth: (LinkParams, LinkParams),
}

pub fn scan_curves(scenario: &Scenario, point_idx: usize, run: usize) -> Result<ScanCurves> {
    let ctx = RunContext::new(scenario)?;
    if point_idx >= ctx.points.len() {
        return Err(Error::Config(format!("point {point_idx} out of range ({} points)", ctx.points.len())));
    }
    let draw = ctx.draw(run)?;
    let point = &ctx.points[point_idx];
    let cfg = &ctx.cfg;
    let lu = scaled(&draw.0, point.gain_var_u);
    let lj = scaled(&draw.1, point.gain_var_j);
    let cu = LinkChannel::new(&lu, cfg, &ctx.mats)?;
    let cj = LinkChannel::new(&lj, cfg, &ctx.mats)?;
    let blocks = generate_received(&cu, &cj, scenario.n_blocks, BlockSeeds::from_base(draw.2), cfg);
    let est = CccmEstimator::new(&blocks)?;
    let objective = scan_grid(&est, &ctx.estimator.scan);
    let peaks = find_peaks(&est, &objective, &ctx.estimator.scan)?;
    let mut delay = Vec::new();
    if let Ok((sets, _)) = estimate_dopplers(&peaks, scenario.k_u, lu.paths[0].nu) {
        let hi = ctx.estimator.delay.delta_max * cfg.sample_rate;
        let steps = (hi / 0.01).ceil() as usize;
        for (label, nus) in [("uav", &sets.uav), ("jammer", &sets.jam)] {
            for (k, &nu) in nus.iter().enumerate() {
                let phi = build_phi(&est.set(2.0 * nu), nu);
                let obj = DelayObjective::new(&phi, cfg, &ctx.mats, ctx.estimator.delay.cost);
                let curve = (0..=steps).map(|i| {
                    let b = (i as f64 * 0.01).min(hi);
                    (b, obj.eval(b / cfg.sample_rate))
                });
                delay.push((label, k, curve.collect()));
            }
        }
    }
    Ok(ScanCurves { objective, peaks, delay, truth: (lu, lj) })
}
