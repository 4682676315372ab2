//! Fiber channel: split-step Fourier integration of the scalar or Manakov
//! nonlinear Schrödinger equation over amplified spans.
//!
//! The field obeys
//!
//! ```text
//! dA/dz = -alpha/2 A - i beta2/2 d2A/dt2 + beta3/6 d3A/dt3 + i gamma |A|^2 A
//! ```
//!
//! so with `A(t) = sum_k A_k exp(+i w_k t)` the linear operator per step `h`
//! is `exp((i beta2/2 w^2 - i beta3/6 w^3 - alpha/2) h)` and the Kerr step is a
//! pure phase rotation `exp(i gamma_eff |A|^2 h)`.

use std::f64::consts::{LN_10, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::fft::{angular_frequencies, FftPair};
use crate::txrx::ComplexWaveform;
use crate::{derive_seed, Error, Result, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Physical fiber constants, SI units.
///
/// `alpha` is the power attenuation coefficient (1/m); the field decays as
/// `exp(-alpha z / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberParams {
    pub alpha: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub gamma: f64,
    pub length: f64,
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::invalid(format!("fiber length {} <= 0", self.length)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("attenuation {} < 0", self.alpha)));
        }
        Ok(())
    }

    /// Span loss in dB.
    pub fn loss_db(&self) -> f64 {
        10.0 / LN_10 * self.alpha * self.length
    }

    /// Effective nonlinear length `(1 - exp(-alpha L)) / alpha`.
    pub fn effective_length(&self) -> f64 {
        if self.alpha == 0.0 {
            self.length
        } else {
            (1.0 - (-self.alpha * self.length).exp()) / self.alpha
        }
    }
}

/// Fiber description in datasheet units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineeringFiber {
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    /// Third-order dispersion in ps^3/km.
    pub beta3_ps3_per_km: f64,
    /// Nonlinear refractive index, m^2/W.
    pub n2: f64,
    pub core_area_um2: f64,
    pub wavelength_nm: f64,
    pub length_km: f64,
}

impl Default for EngineeringFiber {
    fn default() -> Self {
        Self {
            attenuation_db_per_km: 0.2,
            dispersion_ps_per_nm_km: 17.0,
            beta3_ps3_per_km: 0.0,
            n2: 2.6e-20,
            core_area_um2: 80.0,
            wavelength_nm: 1550.0,
            length_km: 80.0,
        }
    }
}

/// `gamma = 2 pi n2 / (lambda A_eff)`.
pub fn derive_gamma(n2: f64, a_eff: f64, wavelength: f64) -> Result<f64> {
    if !(n2 >= 0.0 && a_eff > 0.0 && wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "gamma needs n2 >= 0, A_eff > 0, lambda > 0 (got {n2}, {a_eff}, {wavelength})"
        )));
    }
    Ok(2.0 * PI * n2 / (wavelength * a_eff))
}

/// Power attenuation in 1/m from dB/km: `alpha = (dB/km) ln(10)/10 / 1000`.
pub fn attenuation_from_db_per_km(db_per_km: f64) -> f64 {
    db_per_km * LN_10 / 10.0 / 1e3
}

/// `beta2 = -D lambda^2 / (2 pi c)`, with D in ps/(nm km); result in s^2/m.
pub fn beta2_from_dispersion(d_ps_per_nm_km: f64, wavelength: f64) -> f64 {
    // ps/(nm km) -> s/m^2
    let d_si = d_ps_per_nm_km * 1e-12 / (1e-9 * 1e3);
    -d_si * wavelength * wavelength / (2.0 * PI * SPEED_OF_LIGHT)
}

pub fn convert_units(eng: &EngineeringFiber) -> Result<FiberParams> {
    let wavelength = eng.wavelength_nm * 1e-9;
    Ok(FiberParams {
        alpha: attenuation_from_db_per_km(eng.attenuation_db_per_km),
        beta2: beta2_from_dispersion(eng.dispersion_ps_per_nm_km, wavelength),
        beta3: eng.beta3_ps3_per_km * 1e-36 / 1e3,
        gamma: derive_gamma(eng.n2, eng.core_area_um2 * 1e-12, wavelength)?,
        length: eng.length_km * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarizationModel {
    /// Each polarization sees only its own Kerr phase, `gamma |A_p|^2`.
    IndependentScalar,
    /// Both polarizations rotate by `(8/9) gamma (|A_x|^2 + |A_y|^2)`.
    Manakov,
}

impl PolarizationModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "manakov" => Ok(Self::Manakov),
            "independent-scalar" | "scalar" => Ok(Self::IndependentScalar),
            other => Err(Error::Config(format!("unknown polarization model {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Manakov => "manakov",
            Self::IndependentScalar => "independent-scalar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifierParams {
    pub gain_db: f64,
    /// `f64::NEG_INFINITY` disables ASE entirely.
    pub noise_figure_db: f64,
    pub center_frequency: f64,
}

impl AmplifierParams {
    pub fn gain_linear(&self) -> f64 {
        10f64.powf(self.gain_db / 10.0)
    }

    /// One-sided ASE power spectral density per polarization (W/Hz):
    /// `S_ASE = (G - 1) h nu NF / 2`, i.e. `n_sp = NF / 2`.
    pub fn ase_psd(&self) -> f64 {
        let nf = 10f64.powf(self.noise_figure_db / 10.0);
        (self.gain_linear() - 1.0) * PLANCK * self.center_frequency * nf / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    pub span: FiberParams,
    pub n_spans: usize,
    pub amplifier: AmplifierParams,
    pub ssfm_step: f64,
    pub polarization_model: PolarizationModel,
}

impl LinkConfig {
    /// Amplifier gain set to exactly compensate the span loss.
    pub fn new(
        span: FiberParams,
        n_spans: usize,
        noise_figure_db: f64,
        wavelength: f64,
        ssfm_step: f64,
        polarization_model: PolarizationModel,
    ) -> Self {
        Self {
            span,
            n_spans,
            amplifier: AmplifierParams {
                gain_db: span.loss_db(),
                noise_figure_db,
                center_frequency: SPEED_OF_LIGHT / wavelength,
            },
            ssfm_step,
            polarization_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.span.validate()?;
        if self.n_spans == 0 {
            return Err(Error::invalid("link needs at least one span"));
        }
        if !(self.ssfm_step > 0.0 && self.ssfm_step <= self.span.length) {
            return Err(Error::invalid(format!(
                "SSFM step {} outside (0, span length]",
                self.ssfm_step
            )));
        }
        if !(self.amplifier.gain_db >= 0.0) {
            return Err(Error::invalid("amplifier gain must be >= 0 dB"));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.span.length * self.n_spans as f64
    }

    /// Analytic OSNR (linear) after all spans for `signal_power` watts,
    /// referred to `ref_bandwidth` Hz, with noise counted in both
    /// polarizations.
    pub fn analytic_osnr(&self, signal_power: f64, ref_bandwidth: f64) -> f64 {
        let noise = self.n_spans as f64 * 2.0 * self.amplifier.ase_psd() * ref_bandwidth;
        signal_power / noise
    }
}

/// Precomputed per-step propagation data for one fiber and grid.
pub(crate) struct SplitStep {
    fft: FftPair,
    half: Vec<C64>,
    full: Vec<C64>,
    n_steps: usize,
    h: f64,
    gamma_eff: f64,
    model: PolarizationModel,
}

impl SplitStep {
    /// `n_steps` symmetric steps over `length`; `sign` is `+1` for forward
    /// propagation and `-1` to run every operator backwards (dispersion,
    /// loss and Kerr phase), as backpropagation does.
    pub(crate) fn new(
        len: usize,
        sample_rate: f64,
        f: &FiberParams,
        length: f64,
        n_steps: usize,
        gamma: f64,
        model: PolarizationModel,
        sign: f64,
    ) -> Self {
        let w = angular_frequencies(len, sample_rate);
        let h = length / n_steps as f64;
        let op = |dz: f64| -> Vec<C64> {
            w.iter()
                .map(|&w| {
                    let phase = (f.beta2 / 2.0 * w * w - f.beta3 / 6.0 * w * w * w) * dz * sign;
                    C64::from_polar((-f.alpha / 2.0 * dz * sign).exp(), phase)
                })
                .collect()
        };
        let gamma_eff = sign
            * match model {
                PolarizationModel::Manakov => 8.0 / 9.0 * gamma,
                PolarizationModel::IndependentScalar => gamma,
            };
        Self {
            fft: FftPair::new(len),
            half: op(h / 2.0),
            full: op(h),
            n_steps,
            h,
            gamma_eff,
            model,
        }
    }

    fn kerr(&self, pols: &mut [Vec<C64>]) {
        let k = self.gamma_eff * self.h;
        if k == 0.0 {
            return;
        }
        match self.model {
            PolarizationModel::IndependentScalar => {
                for p in pols.iter_mut() {
                    for s in p.iter_mut() {
                        *s *= C64::from_polar(1.0, k * s.norm_sqr());
                    }
                }
            }
            PolarizationModel::Manakov => {
                let n = pols[0].len();
                for i in 0..n {
                    let power: f64 = pols.iter().map(|p| p[i].norm_sqr()).sum();
                    let rot = C64::from_polar(1.0, k * power);
                    for p in pols.iter_mut() {
                        p[i] *= rot;
                    }
                }
            }
        }
    }

    fn apply_linear(&mut self, pols: &mut [Vec<C64>], op_full: bool, to_time: bool) {
        let op = if op_full { &self.full } else { &self.half };
        for p in pols.iter_mut() {
            for (s, o) in p.iter_mut().zip(op) {
                *s *= o;
            }
            if to_time {
                self.fft.inverse(p);
            }
        }
    }

    /// Runs all steps; `on_step(i, pols)` sees the time-domain field after
    /// each Kerr rotation and may abort.
    pub(crate) fn run(
        &mut self,
        pols: &mut [Vec<C64>],
        mut check: impl FnMut(usize, &[Vec<C64>]) -> Result<()>,
    ) -> Result<()> {
        for p in pols.iter_mut() {
            self.fft.forward(p);
        }
        self.apply_linear(pols, false, true);
        for i in 0..self.n_steps {
            self.kerr(pols);
            check(i, pols)?;
            for p in pols.iter_mut() {
                self.fft.forward(p);
            }
            let last = i + 1 == self.n_steps;
            self.apply_linear(pols, !last, true);
        }
        Ok(())
    }

    pub(crate) fn step_length(&self) -> f64 {
        self.h
    }
}

fn all_finite(pols: &[Vec<C64>]) -> bool {
    pols.iter()
        .flat_map(|p| p.iter())
        .all(|s| s.re.is_finite() && s.im.is_finite())
}

/// Number of uniform steps used to cover `length` with steps no longer than
/// `max_step`.
pub fn step_count(length: f64, max_step: f64) -> usize {
    ((length / max_step) - 1e-9).ceil().max(1.0) as usize
}

/// Symmetric split-step propagation through one fiber.
///
/// The fiber length is divided into `ceil(length / step)` equal steps, each
/// applied as half linear step, full Kerr rotation, half linear step
/// (adjacent half steps are merged).
pub fn ssfm_propagate(
    w: &ComplexWaveform,
    f: &FiberParams,
    step: f64,
    model: PolarizationModel,
) -> Result<ComplexWaveform> {
    f.validate()?;
    if !(step > 0.0) {
        return Err(Error::invalid(format!("SSFM step {step} <= 0")));
    }
    if !w.len().is_power_of_two() {
        return Err(Error::invalid(format!(
            "waveform length {} is not a power of two",
            w.len()
        )));
    }
    let n_steps = step_count(f.length, step);
    let mut ss = SplitStep::new(w.len(), w.sample_rate, f, f.length, n_steps, f.gamma, model, 1.0);
    let h = ss.step_length();
    let mut out = w.clone();
    ss.run(&mut out.pols, |i, pols| {
        if all_finite(pols) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                distance_m: (i as f64 + 0.5) * h,
            })
        }
    })?;
    Ok(out)
}

/// Lumped amplifier: gain `G` on the field power plus circular Gaussian ASE
/// of PSD [`AmplifierParams::ase_psd`] per polarization across the full
/// simulation bandwidth, i.e. complex variance `S_ASE * sample_rate` per
/// sample.
pub fn edfa_amplify(w: &ComplexWaveform, a: &AmplifierParams, rng_seed: u64) -> ComplexWaveform {
    let g = a.gain_linear().sqrt();
    let mut out = w.clone();
    let var = a.ase_psd() * w.sample_rate;
    let noise = (var > 0.0).then(|| Normal::new(0.0, (var / 2.0).sqrt()).expect("finite std"));
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    for p in &mut out.pols {
        for s in p.iter_mut() {
            *s *= g;
            if let Some(n) = &noise {
                *s += C64::new(n.sample(&mut rng), n.sample(&mut rng));
            }
        }
    }
    out
}

/// One span (fiber then amplifier), using the sub-seed of `span_index`.
pub fn propagate_span(
    w: &ComplexWaveform,
    link: &LinkConfig,
    span_index: usize,
    rng_seed: u64,
) -> Result<ComplexWaveform> {
    let out = ssfm_propagate(w, &link.span, link.ssfm_step, link.polarization_model)?;
    Ok(edfa_amplify(
        &out,
        &link.amplifier,
        derive_seed(rng_seed, span_index as u64),
    ))
}

pub fn link_propagate(
    w: &ComplexWaveform,
    link: &LinkConfig,
    rng_seed: u64,
) -> Result<ComplexWaveform> {
    link.validate()?;
    let mut cur = w.clone();
    for i in 0..link.n_spans {
        cur = propagate_span(&cur, link, i, rng_seed)?;
    }
    Ok(cur)
}

/// Adds circular white Gaussian noise so that the per-polarization SNR over
/// `signal_bandwidth` Hz equals `snr_db`, given the waveform's own power.
pub fn add_awgn_for_snr(
    w: &ComplexWaveform,
    snr_db: f64,
    signal_bandwidth: f64,
    rng_seed: u64,
) -> ComplexWaveform {
    let mut out = w.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    for p in &mut out.pols {
        let power = p.iter().map(|s| s.norm_sqr()).sum::<f64>() / p.len() as f64;
        let in_band = power / 10f64.powf(snr_db / 10.0);
        let var = in_band * w.sample_rate / signal_bandwidth;
        let n = Normal::new(0.0, (var / 2.0).sqrt()).expect("finite std");
        for s in p.iter_mut() {
            *s += C64::new(n.sample(&mut rng), n.sample(&mut rng));
        }
    }
    out
}
