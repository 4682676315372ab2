//! Fast analytic-oracle checks run by the `selftest` subcommand.

use crate::channel::{
    convert_units, link_propagate, ssfm_propagate, EngineeringFiber, FiberParams, LinkConfig,
    PolarizationModel,
};
use crate::dataset::{bits_to_float, float_to_bits, float_to_word};
use crate::dsp::{dbp, matched_filter_downsample};
use crate::metrics::{evm, q_factor};
use crate::txrx::{
    dbm_to_watts, prbs_generate, qam16_constellation, qam16_decide, qam16_map, shape_pulse,
    ComplexWaveform, PulseShape,
};
use crate::{Result, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Gaussian field `sqrt(P0) exp(-t^2 / 2 T0^2)` on an `n`-point grid.
fn gaussian(n: usize, dt: f64, t0: f64, p0: f64) -> ComplexWaveform {
    let samples = (0..n)
        .map(|k| {
            let t = (k as f64 - n as f64 / 2.0) * dt;
            C64::new(p0.sqrt() * (-t * t / (2.0 * t0 * t0)).exp(), 0.0)
        })
        .collect();
    ComplexWaveform::single(samples, 1.0 / dt, 1550e-9)
}

fn table_fiber() -> Result<FiberParams> {
    convert_units(&EngineeringFiber::default())
}

fn rms_width(w: &ComplexWaveform) -> f64 {
    let p: Vec<f64> = w.pols[0].iter().map(|s| s.norm_sqr()).collect();
    let total: f64 = p.iter().sum();
    let t = |k: usize| k as f64 * w.dt();
    let mean = p.iter().enumerate().map(|(k, v)| t(k) * v).sum::<f64>() / total;
    (p.iter().enumerate().map(|(k, v)| (t(k) - mean).powi(2) * v).sum::<f64>() / total).sqrt()
}

/// Energy after one lossy, dispersion- and Kerr-free span versus
/// `exp(-alpha L)`.
pub fn attenuation_only() -> Result<Check> {
    let f = FiberParams {
        beta2: 0.0,
        gamma: 0.0,
        ..table_fiber()?
    };
    let w = gaussian(1024, 1e-12, 20e-12, 1e-3);
    let out = ssfm_propagate(&w, &f, 1e3, PolarizationModel::IndependentScalar)?;
    let ratio = out.energy() / w.energy();
    let want = (-f.alpha * f.length).exp();
    let err = (ratio / want - 1.0).abs();
    Ok(check("attenuation-only energy decay", err < 1e-12, format!("relative error {err:.2e}")))
}

/// RMS width of a Gaussian after pure dispersion versus
/// `T0 sqrt(1 + (beta2 z / T0^2)^2)`.
pub fn dispersion_only() -> Result<Check> {
    let f = FiberParams {
        alpha: 0.0,
        gamma: 0.0,
        ..table_fiber()?
    };
    let t0 = 20e-12;
    let w = gaussian(8192, 0.5e-12, t0, 1e-3);
    let out = ssfm_propagate(&w, &f, 1e3, PolarizationModel::IndependentScalar)?;
    let measured = rms_width(&out) / rms_width(&w);
    let want = (1.0 + (f.beta2 * f.length / (t0 * t0)).powi(2)).sqrt();
    let err = (measured / want - 1.0).abs();
    Ok(check("dispersion-only Gaussian broadening", err < 0.01, format!("relative error {err:.2e}")))
}

/// Peak nonlinear phase after a lossy dispersion-free span versus
/// `gamma P0 L_eff`.
pub fn spm_only() -> Result<Check> {
    let f = FiberParams {
        beta2: 0.0,
        beta3: 0.0,
        ..table_fiber()?
    };
    let p0 = 10e-3;
    let w = gaussian(1024, 1e-12, 20e-12, p0);
    let out = ssfm_propagate(&w, &f, 100.0, PolarizationModel::IndependentScalar)?;
    let peak = 512;
    let phase = (out.pols[0][peak] / w.pols[0][peak]).arg();
    let want = f.gamma * p0 * f.effective_length();
    let err = (phase / want - 1.0).abs();
    Ok(check("SPM-only peak phase", err < 5e-3, format!("relative error {err:.2e}")))
}

/// Discrepancy ratio between successive step halvings on one span.
pub fn step_halving() -> Result<Check> {
    let f = table_fiber()?;
    let w = gaussian(2048, 1e-12, 25e-12, 50e-3);
    let run = |h: f64| ssfm_propagate(&w, &f, h, PolarizationModel::IndependentScalar);
    let (a, b, c) = (run(8e3)?, run(4e3)?, run(2e3)?);
    let diff = |x: &ComplexWaveform, y: &ComplexWaveform| {
        let d: f64 = x.pols[0].iter().zip(&y.pols[0]).map(|(p, q)| (p - q).norm_sqr()).sum();
        (d / y.energy() * y.dt()).sqrt()
    };
    let ratio = diff(&a, &b) / diff(&b, &c);
    Ok(check("SSFM step-halving order", ratio >= 3.0, format!("discrepancy ratio {ratio:.2}")))
}

/// Noiseless nonlinear two-span link undone by DBP with matched steps.
pub fn dbp_inverse() -> Result<Check> {
    dbp_inverse_over(2, 4096)
}

/// As [`dbp_inverse`] over `n_spans` 80 km spans and `n_symbols` symbols at
/// 0 dBm, one polarization, 1 km steps both ways.
pub fn dbp_inverse_over(n_spans: usize, n_symbols: usize) -> Result<Check> {
    let bits = prbs_generate(7, 4 * n_symbols)?;
    let mut frame = qam16_map(&bits)?;
    frame.normalize();
    let shape = PulseShape::default();
    let w = shape_pulse(&frame, &shape, 10e9, 1550e-9, dbm_to_watts(0.0))?;
    let link = LinkConfig::new(table_fiber()?, n_spans, f64::NEG_INFINITY, 1550e-9, 1e3, PolarizationModel::IndependentScalar);
    let rx = link_propagate(&w, &link, 0)?;
    let back = dbp(&rx, &link, 80, 1.0)?;
    let out = matched_filter_downsample(&back, 0, &shape, 0)?;
    let errors = out
        .symbols
        .iter()
        .zip(&frame.symbols)
        .filter(|(a, b)| qam16_decide(**a) != qam16_decide(**b))
        .count();
    let e = evm(&out.symbols, &frame.symbols)?;
    Ok(check(
        "DBP inverts a noiseless link",
        errors == 0 && e < 1.0,
        format!("{errors} symbol errors, EVM {e:.3}%"),
    ))
}

pub fn q_references() -> Result<Check> {
    let a = q_factor(1e-3)?;
    let b = q_factor(libm::erfc(3.0 / 2f64.sqrt()) / 2.0)?;
    Ok(check(
        "Q factor reference points",
        (a - 9.80).abs() <= 0.01 && (b - 9.54).abs() <= 0.01,
        format!("Q(1e-3) = {a:.4} dB, Q(erfc(3/sqrt2)/2) = {b:.4} dB"),
    ))
}

pub fn float_bits() -> Result<Check> {
    let one = float_to_word(1.0)? == 0x3F80_0000;
    let zero = float_to_word(0.0)? == 0;
    let minus_two = float_to_word(-2.0)? == 0xC000_0000;
    let round = [0.5, -0.316_227_766, 3.0 / 10f64.sqrt()]
        .iter()
        .all(|&x| float_to_bits(x).map(|b| bits_to_float(&b) == x as f32).unwrap_or(false));
    Ok(check(
        "binary32 feature encoding",
        one && zero && minus_two && round,
        "fixed vectors 0.0, 1.0, -2.0 and round trips".into(),
    ))
}

pub fn gray_mapping() -> Result<Check> {
    let pts = qam16_constellation();
    let step = 2.0 / 10f64.sqrt();
    let mut pairs = 0;
    let mut ok = true;
    for a in 0..16u8 {
        for b in (a + 1)..16u8 {
            if ((pts[a as usize] - pts[b as usize]).norm() - step).abs() < 1e-9 {
                pairs += 1;
                ok &= (a ^ b).count_ones() == 1;
            }
        }
    }
    Ok(check(
        "16QAM Gray labelling",
        ok && pairs == 24,
        format!("{pairs} nearest-neighbour pairs"),
    ))
}

/// Runs every check; an error inside a check counts as a failure.
pub fn run_all() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<Check>); 8] = [
        ("attenuation-only energy decay", attenuation_only),
        ("dispersion-only Gaussian broadening", dispersion_only),
        ("SPM-only peak phase", spm_only),
        ("SSFM step-halving order", step_halving),
        ("DBP inverts a noiseless link", dbp_inverse),
        ("Q factor reference points", q_references),
        ("binary32 feature encoding", float_bits),
        ("16QAM Gray labelling", gray_mapping),
    ];
    checks
        .iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, e.to_string())))
        .collect()
}
