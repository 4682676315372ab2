use super::config::{ExperimentConfig, Method, SweepVariable};
use super::pipeline::run_pipeline_with;
use crate::metrics::MetricsReport;
use crate::{derive_seed, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_var: f64,
    pub method: Method,
    pub report: MetricsReport,
    pub runtime_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub sweep_var: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    /// Sorted by sweep value, then by method.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Run seed of the sweep point at `value`. Depends only on the master seed
/// and the value, so adding or reordering points leaves the others intact.
pub fn point_seed(master: u64, value: f64) -> u64 {
    derive_seed(master, value.to_bits())
}

/// Runs the pipeline at every value of the configured sweep.
pub fn sweep(cfg: &ExperimentConfig, master_seed: u64) -> Result<SweepResult> {
    let var = cfg.sweep_variable()?;
    Ok(sweep_values(cfg, var, &cfg.run.sweep_values, master_seed, |_| {}))
}

/// Runs the pipeline at each of `values`. A failing point is recorded and
/// the remaining points still run. `log` receives one progress line per
/// point.
pub fn sweep_values(
    cfg: &ExperimentConfig,
    var: SweepVariable,
    values: &[f64],
    master_seed: u64,
    mut log: impl FnMut(&str),
) -> SweepResult {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for v in sorted {
        let seed = point_seed(master_seed, v);
        let outcome = cfg
            .at_point(var, v)
            .and_then(|c| run_pipeline_with(&c, seed, |m, e, l| log(&format!("  {} epoch {e}: loss {l:.4e}", m.as_str()))));
        match outcome {
            Ok(out) => {
                for m in out.methods {
                    log(&format!(
                        "{}={v} {}: BER {:.3e}, Q {:.2} dB",
                        var.as_str(),
                        m.method.as_str(),
                        m.report.ber,
                        m.report.q_db
                    ));
                    rows.push(SweepRow {
                        sweep_var: v,
                        method: m.method,
                        report: m.report,
                        runtime_s: m.runtime_s,
                        seed,
                    });
                }
            }
            Err(e) => {
                log(&format!("{}={v} failed: {e}", var.as_str()));
                failures.push(SweepFailure {
                    sweep_var: v,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    SweepResult {
        variable: var,
        rows,
        failures,
    }
}
