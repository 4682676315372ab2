//! End-to-end experiment: transmitter, link, receiver DSP, optional neural
//! equalizers and metrics.
//!
//! All methods of one run see the same received test waveform and are
//! scored on the same symbols: both polarizations, each with an edge guard
//! removed. Neural
//! equalizers are trained on a second, independently seeded transmission
//! through the same link.

use std::time::Instant;

use super::config::{ExperimentConfig, Method};
use crate::channel::{add_awgn_for_snr, link_propagate};
use crate::dataset::{build_windows, TokenDataset};
use crate::dsp::{
    align_constellation, cdc, cpr_bps, dbp, estimate_frequency_offset, matched_filter_downsample,
    remove_frequency_offset, DspMode,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{equalize, train, Checkpoint, TrainOutcome};
use crate::txrx::{
    apply_frequency_offset, apply_laser_phase_noise, dbm_to_watts, prbs_generate, qam16_map, shape_pulse,
    ComplexWaveform, SymbolFrame,
};
use crate::{derive_seed, Error, Result};

/// Seed streams derived from a run seed.
const STREAM_TEST: u64 = 0x7e57;
const STREAM_TRAIN: u64 = 0x7a19;
const STREAM_MODEL: u64 = 0x30de;

/// One transmission through the link.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub seed: u64,
    /// Transmitted symbols of the x and y polarizations.
    pub tx: [SymbolFrame; 2],
    /// Received optical field (after noise loading, before DSP).
    pub rx: ComplexWaveform,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: MetricsReport,
    pub runtime_s: f64,
    /// Output symbols over the scored range.
    pub symbols: SymbolFrame,
    pub training: Option<TrainOutcome>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub seed: u64,
    pub config_hash: u64,
    /// Transmitted symbols over the scored range.
    pub tx: SymbolFrame,
    /// Linear-equalization output over the scored range, i.e. the input the
    /// neural equalizers see.
    pub unequalized: SymbolFrame,
    pub methods: Vec<MethodOutcome>,
}

impl PipelineOutput {
    pub fn get(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

fn stage<T>(name: &'static str, cfg: &ExperimentConfig, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            config_hash: cfg.hash(),
            source: Box::new(e),
        },
    })
}

/// Data seed of the test transmission of a run.
pub fn test_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, STREAM_TEST)
}

/// Transmitter and link for data seed `seed`.
pub fn transmit(cfg: &ExperimentConfig, seed: u64) -> Result<Transmission> {
    let run = || -> Result<Transmission> {
        let shape = cfg.pulse_shape();
        let n = cfg.run.n_symbols;
        let per_pol = dbm_to_watts(cfg.tx.launch_power_dbm) / 2.0;
        let mut tx = Vec::with_capacity(2);
        let mut pols = Vec::with_capacity(2);
        for p in 0..2 {
            let bits = prbs_generate(derive_seed(seed, 1 + p), 4 * n)?;
            let frame = qam16_map(&bits)?;
            pols.push(shape_pulse(&frame, &shape, cfg.symbol_rate(), cfg.wavelength(), per_pol)?);
            tx.push(frame);
        }
        let y = pols.pop().expect("two polarizations");
        let x = pols.pop().expect("two polarizations");
        let w = ComplexWaveform::dual(x, y)?;
        let w = apply_laser_phase_noise(&w, cfg.tx.linewidth_hz, derive_seed(seed, 3))?;
        let w = apply_frequency_offset(&w, cfg.tx.frequency_offset_hz);
        Ok(Transmission {
            seed,
            tx: [tx.remove(0), tx.remove(0)],
            rx: w,
        })
    };
    let mut t = stage("transmitter", cfg, run())?;
    let link = stage("link", cfg, cfg.link_config())?;
    let mut rx = stage("link", cfg, link_propagate(&t.rx, &link, derive_seed(seed, 4)))?;
    if cfg.rx.noise_loading {
        rx = add_awgn_for_snr(&rx, cfg.rx.snr_db, cfg.symbol_rate(), derive_seed(seed, 5));
    }
    t.rx = rx;
    Ok(t)
}

/// Receiver DSP: dispersion compensation or DBP over both polarizations,
/// then per polarization matched filter, frequency-offset removal, blind
/// phase search, data-aided alignment and gain normalization against the
/// transmitted frame.
pub fn receive(cfg: &ExperimentConfig, t: &Transmission, mode: DspMode) -> Result<[SymbolFrame; 2]> {
    let dsp = cfg.dsp_config(mode);
    stage("dsp", cfg, dsp.validate())?;
    let link = stage("link", cfg, cfg.link_config())?;
    let compensated = match mode {
        DspMode::LinearEq => cdc(&t.rx, &link.span, link.total_length()),
        DspMode::Dbp => stage(
            "dbp",
            cfg,
            dbp(&t.rx, &link, dsp.dbp_steps_per_span, dsp.dbp_nl_scaling),
        )?,
    };
    let pol = |p: usize| -> Result<SymbolFrame> {
        let mut frame = stage(
            "matched_filter",
            cfg,
            matched_filter_downsample(&compensated, p, &cfg.pulse_shape(), 0),
        )?;
        if cfg.dsp.frequency_offset_compensation {
            let f = estimate_frequency_offset(&frame, cfg.symbol_rate());
            frame = remove_frequency_offset(&frame, f, cfg.symbol_rate());
        }
        let cpr = stage("cpr", cfg, cpr_bps(&frame, dsp.cpr_test_phases, dsp.cpr_window))?;
        let aligned = stage("alignment", cfg, align_constellation(&cpr.frame, &t.tx[p]))?;
        Ok(normalize_gain(aligned.frame, &t.tx[p]))
    };
    Ok([pol(0)?, pol(1)?])
}

/// Scales `rx` so that its projection onto the reference has the
/// reference's power.
fn normalize_gain(mut rx: SymbolFrame, reference: &SymbolFrame) -> SymbolFrame {
    let cross: f64 = rx
        .symbols
        .iter()
        .zip(&reference.symbols)
        .map(|(r, t)| (r * t.conj()).re)
        .sum();
    let power: f64 = reference.symbols.iter().map(|t| t.norm_sqr()).sum();
    if cross > 0.0 {
        let g = power / cross;
        for s in &mut rx.symbols {
            *s *= g;
        }
    }
    rx
}

/// Drops `guard` symbols at both ends of each polarization and joins what
/// is left, x first.
pub fn scored_range(frames: &[SymbolFrame; 2], guard: usize) -> SymbolFrame {
    let mut symbols = Vec::new();
    for f in frames {
        symbols.extend_from_slice(&f.symbols[guard..f.len() - guard]);
    }
    SymbolFrame {
        symbols,
        modulation: frames[0].modulation,
    }
}

/// Training sequences built from an independently seeded transmission.
pub fn training_set(cfg: &ExperimentConfig, run_seed: u64) -> Result<TokenDataset> {
    let seed = derive_seed(run_seed, STREAM_TRAIN);
    let t = transmit(cfg, seed)?;
    let [rx_x, rx_y] = receive(cfg, &t, DspMode::LinearEq)?;
    let n = cfg.model.window_n;
    let mut ds = stage("dataset", cfg, build_windows(&rx_x, &t.tx[0], n, None))?;
    let mut y = stage("dataset", cfg, build_windows(&rx_y, &t.tx[1], n, Some(ds.normalization)))?;
    y.polarization = 1;
    stage("dataset", cfg, ds.extend(&y))?;
    ds.source_seed = seed;
    Ok(ds)
}

/// Trains the architecture of `method` on `ds`; `on_epoch` sees each
/// epoch's training loss.
pub fn train_method(
    cfg: &ExperimentConfig,
    method: Method,
    ds: &TokenDataset,
    run_seed: u64,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let arch = cfg
        .architecture(method)
        .ok_or_else(|| Error::invalid(format!("{} is not a trainable method", method.as_str())))?;
    let tc = cfg.train_config(derive_seed(run_seed, STREAM_MODEL + method as u64));
    stage("train", cfg, train(arch, ds, &tc, on_epoch))
}

/// Applies a trained checkpoint to the linear-equalizer output of each
/// polarization.
pub fn apply_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint, rx: &[SymbolFrame; 2]) -> Result<[SymbolFrame; 2]> {
    let eq = |f: &SymbolFrame| {
        stage(
            "equalize",
            cfg,
            equalize(&ck.model, f, ck.meta.window_n as usize, ck.meta.normalization),
        )
    };
    Ok([eq(&rx[0])?, eq(&rx[1])?])
}

/// Runs every configured method on one test transmission with run seed
/// `seed`.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<PipelineOutput> {
    run_pipeline_with(cfg, seed, |_, _, _| {})
}

/// As [`run_pipeline`], reporting training progress through `on_epoch`
/// (method, epoch, loss).
pub fn run_pipeline_with(
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(Method, usize, f64),
) -> Result<PipelineOutput> {
    stage("config", cfg, cfg.validate())?;
    let methods = cfg.methods()?;
    let guard = cfg.dsp.edge_guard;
    let test = transmit(cfg, test_seed(seed))?;
    let tx = scored_range(&test.tx, guard);

    let start = Instant::now();
    let linear = receive(cfg, &test, DspMode::LinearEq)?;
    let linear_time = start.elapsed().as_secs_f64();
    let unequalized = scored_range(&linear, guard);

    let mut outcomes = Vec::new();
    let score = |frames: [SymbolFrame; 2]| -> Result<(MetricsReport, SymbolFrame)> {
        let f = scored_range(&frames, guard);
        Ok((stage("metrics", cfg, evaluate(&tx, &f))?, f))
    };
    let needs_training = methods.iter().any(|m| m.is_neural());
    let ds = if needs_training {
        Some(training_set(cfg, seed)?)
    } else {
        None
    };
    for &m in &methods {
        let start = Instant::now();
        let (frame, training) = match m {
            Method::LinearEq => (linear.clone(), None),
            Method::Dbp => (receive(cfg, &test, DspMode::Dbp)?, None),
            Method::Fcnn | Method::Transformer => {
                let ds = ds.as_ref().expect("training set built for neural methods");
                let out = train_method(cfg, m, ds, seed, |e, l| on_epoch(m, e, l))?;
                let eq = apply_checkpoint(cfg, &out.checkpoint, &linear)?;
                (eq, Some(out))
            }
        };
        let mut runtime_s = start.elapsed().as_secs_f64();
        if m == Method::LinearEq {
            runtime_s = linear_time;
        }
        let (report, symbols) = score(frame)?;
        outcomes.push(MethodOutcome {
            method: m,
            report,
            runtime_s,
            symbols,
            training,
        });
    }
    Ok(PipelineOutput {
        seed,
        config_hash: cfg.hash(),
        tx,
        unequalized,
        methods: outcomes,
    })
}
