use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ajofdm::channel::{check_dopplers, DOPPLER_COLLISION_TOL};
use ajofdm::harness::output::write_curve;
use ajofdm::harness::run::{scan_curves, RunContext};
use ajofdm::harness::{emit_results, run_scenario, Scenario};

#[derive(Parser)]
#[command(name = "ajofdm", version, about = "Anti-jamming OFDM link simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write CSV results.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        /// Override the number of Monte Carlo runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the cycle-frequency objective and delay-cost curves of one run.
    Scan {
        scenario: PathBuf,
        #[arg(short, long, default_value = "scan")]
        out: PathBuf,
        /// Operating point index (SJR-major order).
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Check a scenario file and the channel draws it produces.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> ajofdm::Result<()> {
    match cli.cmd {
        Cmd::Run { scenario, out, runs, seed } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(r) = runs {
                s.runs = r;
            }
            if let Some(x) = seed {
                s.seed = x;
            }
            let res = run_scenario(&s)?;
            for p in emit_results(&res, &out)? {
                println!("{}", p.display());
            }
        }
        Cmd::Scan { scenario, out, point, run } => {
            let s = Scenario::load(&scenario)?;
            let curves = scan_curves(&s, point, run)?;
            std::fs::create_dir_all(&out)?;
            let obj: Vec<(f64, f64)> = curves.objective.alphas.iter().copied().zip(curves.objective.values.iter().copied()).collect();
            let p = out.join("objective.csv");
            write_curve(&p, "alpha", "j", &obj)?;
            println!("{}", p.display());
            let peaks: Vec<(f64, f64)> = curves.peaks.alphas.iter().copied().zip(curves.peaks.scores.iter().copied()).collect();
            let p = out.join("peaks.csv");
            write_curve(&p, "alpha", "j", &peaks)?;
            println!("{}", p.display());
            for (label, k, c) in &curves.delay {
                let p = out.join(format!("delay_{label}_{k}.csv"));
                write_curve(&p, "beta_chips", "cost", c)?;
                println!("{}", p.display());
            }
        }
        Cmd::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            let ctx = RunContext::new(&s)?;
            let (pu, pj) = s.profiles();
            let t = ctx.cfg.block_period();
            println!("P = {}, T = {} s, payload rate = {} bit/s", ctx.cfg.p(), t, ctx.cfg.payload_rate());
            println!("D_U = {} Hz (nu <= {}), D_J = {} Hz (nu <= {})", pu.max_doppler, pu.max_doppler * t, pj.max_doppler, pj.max_doppler * t);
            for p in &ctx.points {
                println!("point: sjr = {} dB, snr = {} dB", p.sjr_db, p.snr_db);
            }
            for run in 0..s.runs {
                let (u, j, _) = ctx.draw(run)?;
                u.validate(s.delta_u())?;
                j.validate(s.delta_j())?;
                check_dopplers(&[&u, &j], DOPPLER_COLLISION_TOL)?;
            }
            println!("ok: {} channel draws satisfy the delay and Doppler conditions", s.runs);
        }
    }
    Ok(())
}
