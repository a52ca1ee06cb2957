//! CSV emission. Every file starts with a versioned comment line and rows
//! follow a fixed order, so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::ParamMse;
use super::run::ScenarioResult;
use crate::Result;

pub const RESULTS_HEADER: &str = "# ajofdm-results v1";
pub const RUNS_HEADER: &str = "# ajofdm-runs v1";
pub const CURVE_HEADER: &str = "# ajofdm-curve v1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn mse_cols(m: Option<ParamMse>) -> String {
    format!("{},{},{}", opt(m.map(|x| x.gain)), opt(m.map(|x| x.doppler)), opt(m.map(|x| x.delay)))
}

fn fmt_db(x: f64) -> String {
    // Keep file names free of '.' and '-'.
    let s = format!("{x}");
    s.replace('-', "m").replace('.', "p")
}

/// Summary table: one row per (scenario, sjr, snr, detector, csi).
pub fn results_csv(res: &ScenarioResult) -> String {
    let mut s = String::new();
    writeln!(s, "{RESULTS_HEADER}").unwrap();
    writeln!(
        s,
        "scenario,sjr_db,snr_db,detector,csi,runs,failures,failure_rate,bit_errors,bits,error_free_blocks,blocks,aber,throughput_bps,\
mse_gain_u_db,mse_doppler_u_db,mse_delay_u_db,mse_gain_j_db,mse_doppler_j_db,mse_delay_j_db"
    )
    .unwrap();
    for r in &res.records {
        let c = &r.counts;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.sjr_db,
            r.snr_db,
            r.detector,
            r.csi,
            r.runs,
            r.failures,
            r.failures as f64 / r.runs.max(1) as f64,
            c.bit_errors,
            c.bits,
            c.error_free_blocks,
            c.blocks,
            r.aber,
            r.throughput,
            mse_cols(r.mse_uav_db),
            mse_cols(r.mse_jam_db),
        )
        .unwrap();
    }
    s
}

/// Per-run rows; MSEs are linear here.
pub fn runs_csv(res: &ScenarioResult) -> String {
    let mut s = String::new();
    writeln!(s, "{RUNS_HEADER}").unwrap();
    writeln!(
        s,
        "scenario,sjr_db,snr_db,run,detector,csi,status,est_k_j,bit_errors,bits,error_free_blocks,blocks,\
mse_gain_u,mse_doppler_u,mse_delay_u,mse_gain_j,mse_doppler_j,mse_delay_j"
    )
    .unwrap();
    for r in &res.rows {
        let p = &res.points[r.point];
        let c = &r.counts;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            res.scenario.name,
            p.sjr_db,
            p.snr_db,
            r.run,
            r.detector.name(),
            r.csi.name(),
            r.status,
            r.est_k_j.map(|k| k.to_string()).unwrap_or_default(),
            c.bit_errors,
            c.bits,
            c.error_free_blocks,
            c.blocks,
            mse_cols(r.mse_uav),
            mse_cols(r.mse_jam),
        )
        .unwrap();
    }
    s
}

/// Write an `(x, y)` curve with named columns.
pub fn write_curve(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{CURVE_HEADER}").unwrap();
    writeln!(s, "{x_name},{y_name}").unwrap();
    for (x, y) in points {
        writeln!(s, "{x},{y}").unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Write `results.csv`, `runs.csv`, and ABER/throughput-versus-SNR curves
/// into `dir`. Returns the written paths in order.
pub fn emit_results(res: &ScenarioResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let p = dir.join("results.csv");
    std::fs::write(&p, results_csv(res))?;
    out.push(p);
    let p = dir.join("runs.csv");
    std::fs::write(&p, runs_csv(res))?;
    out.push(p);
    let mut keys: Vec<(f64, String, String)> = Vec::new();
    for r in &res.records {
        let k = (r.sjr_db, r.detector.clone(), r.csi.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (sjr, det, csi) in keys {
        let cell: Vec<_> = res.records.iter().filter(|r| r.sjr_db == sjr && r.detector == det && r.csi == csi).collect();
        let stem = format!("{}_sjr{}_{}_{}", res.scenario.name, fmt_db(sjr), det, csi);
        let aber: Vec<(f64, f64)> = cell.iter().map(|r| (r.snr_db, r.aber)).collect();
        let thr: Vec<(f64, f64)> = cell.iter().map(|r| (r.snr_db, r.throughput)).collect();
        let pa = dir.join(format!("aber_{stem}.csv"));
        write_curve(&pa, "snr_db", "aber", &aber)?;
        out.push(pa);
        let pt = dir.join(format!("throughput_{stem}.csv"));
        write_curve(&pt, "snr_db", "throughput_bps", &thr)?;
        out.push(pt);
    }
    Ok(out)
}
