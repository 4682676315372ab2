//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, Method};
use super::output::{axis_label, emit_constellation, emit_csv, emit_plot, emit_runtime_csv, render_svg, series_from_csv};
use super::pipeline::{
    apply_checkpoint, receive, run_pipeline_with, scored_range, test_seed, train_method, training_set, transmit,
    PipelineOutput,
};
use super::selftest;
use super::sweep::{sweep_values, SweepResult, SweepRow};
use crate::dsp::DspMode;
use crate::metrics::evaluate;
use crate::nn::{Architecture, Checkpoint};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fiberlab", version, about = "Coherent DP-16QAM fiber link simulator with neural equalizers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, replacing `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Replace one configuration value, e.g. `run.n_symbols=4096`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transmit, propagate and run the classical receivers once.
    Simulate,
    /// Train a neural equalizer and save its checkpoint.
    Train {
        /// `transformer` or `fcnn`.
        #[arg(long, default_value = "transformer")]
        method: String,
    },
    /// Score a saved checkpoint on a fresh test transmission.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full pipeline over the configured sweep values.
    Sweep,
    /// Render a results CSV as an SVG chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Sweep variable named on the x axis.
        #[arg(long, default_value = "launch_power_dbm")]
        variable: String,
    },
    /// Run the analytic-oracle checks.
    Selftest,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            1
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.run.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
    Ok(&c.out_dir)
}

fn single_point(cfg: &ExperimentConfig, out: &PipelineOutput) -> Result<SweepResult> {
    let var = cfg.sweep_variable()?;
    let value = match var {
        super::config::SweepVariable::LaunchPowerDbm => cfg.tx.launch_power_dbm,
        super::config::SweepVariable::NSpans => cfg.link.n_spans as f64,
    };
    Ok(SweepResult {
        variable: var,
        rows: out
            .methods
            .iter()
            .map(|m| SweepRow {
                sweep_var: value,
                method: m.method,
                report: m.report,
                runtime_s: m.runtime_s,
                seed: out.seed,
            })
            .collect(),
        failures: vec![],
    })
}

fn print_rows(result: &SweepResult) {
    for r in &result.rows {
        println!(
            "{:>6} {:<12} BER {:.3e}{}  SER {:.3e}  Q {:6.2} dB  EVM {:5.2}%",
            r.sweep_var,
            r.method.as_str(),
            r.report.ber,
            if r.report.ber_is_floor { " (floor)" } else { "" },
            r.report.ser,
            r.report.q_db,
            r.report.evm_pct
        );
    }
}

fn write_results(cfg: &ExperimentConfig, dir: &Path, stem: &str, result: &SweepResult) -> Result<()> {
    emit_csv(result, &dir.join(format!("{stem}.csv")), cfg.run.runtime_in_csv)?;
    if !cfg.run.runtime_in_csv {
        emit_runtime_csv(result, &dir.join(format!("{stem}_runtime.csv")))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    let c = &cli.common;
    match &cli.command {
        Command::Selftest => {
            let checks = selftest::run_all();
            for ch in &checks {
                println!("[{}] {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
        Command::Plot { input, output, variable } => {
            let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let series = series_from_csv(&text)?;
            let out = output.clone().unwrap_or_else(|| input.with_extension("svg"));
            let svg = render_svg("Q factor", axis_label(variable), "Q (dB)", &series);
            std::fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Simulate => {
            let mut cfg = load_config(c)?;
            cfg.run.methods.retain(|m| !Method::parse(m).map(Method::is_neural).unwrap_or(false));
            if cfg.run.methods.is_empty() {
                cfg.run.methods = vec!["linear-eq".into()];
            }
            let dir = out_dir(c)?;
            let out = run_pipeline_with(&cfg, cfg.run.seed, |_, _, _| {})?;
            let result = single_point(&cfg, &out)?;
            write_results(&cfg, dir, "simulate", &result)?;
            for m in &out.methods {
                emit_constellation(&out.unequalized, &m.symbols, &dir.join(format!("constellation_{}.csv", m.method.as_str())))?;
            }
            print_rows(&result);
            Ok(0)
        }
        Command::Train { method } => {
            let cfg = load_config(c)?;
            let m = Method::parse(method)?;
            if !m.is_neural() {
                return Err(Error::Config(format!("{method} is not a trainable method")));
            }
            let dir = out_dir(c)?;
            let ds = training_set(&cfg, cfg.run.seed)?;
            eprintln!("training {} on {} sequences", m.as_str(), ds.len());
            let out = train_method(&cfg, m, &ds, cfg.run.seed, |e, l| eprintln!("epoch {e:>4}: loss {l:.6e}"))?;
            let path = dir.join(format!("{}.flck", m.as_str()));
            out.checkpoint.save(&path)?;
            let mut hist = String::from("epoch,loss\n");
            for (e, l) in out.history.iter().enumerate() {
                hist.push_str(&format!("{e},{l}\n"));
            }
            let hist_path = dir.join(format!("{}_loss.csv", m.as_str()));
            std::fs::write(&hist_path, hist).map_err(|e| Error::io(&hist_path, e))?;
            println!(
                "saved {} (best epoch {}, loss {:.6e})",
                path.display(),
                out.checkpoint.meta.best_epoch,
                out.checkpoint.meta.best_loss
            );
            Ok(0)
        }
        Command::Evaluate { checkpoint } => {
            let cfg = load_config(c)?;
            let ck = Checkpoint::load(checkpoint)?;
            let method = match ck.model.arch {
                Architecture::Transformer(_) => Method::Transformer,
                Architecture::Fcnn(_) => Method::Fcnn,
            };
            let dir = out_dir(c)?;
            let t = transmit(&cfg, test_seed(cfg.run.seed))?;
            let linear = receive(&cfg, &t, DspMode::LinearEq)?;
            let eq = apply_checkpoint(&cfg, &ck, &linear)?;
            let g = cfg.dsp.edge_guard;
            let tx = scored_range(&t.tx, g);
            let (before, after) = (scored_range(&linear, g), scored_range(&eq, g));
            let value = cfg.tx.launch_power_dbm;
            let rows = [(Method::LinearEq, &before), (method, &after)]
                .iter()
                .map(|(m, f)| {
                    Ok(SweepRow {
                        sweep_var: value,
                        method: *m,
                        report: evaluate(&tx, f)?,
                        runtime_s: 0.0,
                        seed: cfg.run.seed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let result = SweepResult {
                variable: super::config::SweepVariable::LaunchPowerDbm,
                rows,
                failures: vec![],
            };
            emit_csv(&result, &dir.join("evaluate.csv"), false)?;
            emit_constellation(&before, &after, &dir.join(format!("constellation_{}.csv", method.as_str())))?;
            print_rows(&result);
            Ok(0)
        }
        Command::Sweep => {
            let cfg = load_config(c)?;
            let dir = out_dir(c)?;
            let var = cfg.sweep_variable()?;
            let result = sweep_values(&cfg, var, &cfg.run.sweep_values, cfg.run.seed, |l| eprintln!("{l}"));
            write_results(&cfg, dir, "sweep", &result)?;
            emit_plot(&result, &dir.join("sweep.svg"))?;
            if !result.failures.is_empty() {
                let mut s = String::from("sweep_var,seed,error\n");
                for f in &result.failures {
                    s.push_str(&format!("{},{},\"{}\"\n", f.sweep_var, f.seed, f.message.replace('"', "'")));
                }
                let p = dir.join("sweep_failures.csv");
                std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
                eprintln!("{} sweep point(s) failed; see {}", result.failures.len(), p.display());
            }
            print_rows(&result);
            Ok(if result.rows.is_empty() { 1 } else { 0 })
        }
    }
}
