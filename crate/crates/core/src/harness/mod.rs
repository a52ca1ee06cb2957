//! Monte Carlo experiment driver: scenario files, per-run simulation,
//! metrics, and CSV emission.

pub mod metrics;
pub mod output;
pub mod run;
pub mod scenario;

pub use metrics::{throughput_from_aber, BitCounts, MetricsRecord, ParamMse};
pub use output::{emit_results, write_curve};
pub use run::{run_scenario, scan_curves, simulate_run, RunContext, RunOutcome, RunRow, ScanCurves, ScenarioResult};
pub use scenario::{CsiMode, OperatingPoint, Scenario};
