//! Transmitter: seeded bit generation, Gray-coded 16QAM mapping,
//! root-raised-cosine pulse shaping and laser impairments.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::fft::cyclic_convolve_real;
use crate::{Error, Result, C64};

/// `1/sqrt(10)`: scales the {±1, ±3} grid to unit average power.
pub const QAM16_SCALE: f64 = 0.316_227_766_016_837_94;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    pub bits: Vec<u8>,
    pub seed: u64,
}

impl BitStream {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Pseudo-random bits from a ChaCha20 stream keyed by `seed`.
///
/// Each 64-bit output word contributes its bits LSB first. The generator is
/// platform independent, so a seed fully determines the stream.
pub fn prbs_generate(seed: u64, n_bits: usize) -> Result<BitStream> {
    if n_bits == 0 {
        return Err(Error::invalid("PRBS length must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n_bits);
    while bits.len() < n_bits {
        let word = rng.next_u64();
        let take = (n_bits - bits.len()).min(64);
        bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
    }
    Ok(BitStream { bits, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Qam16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<C64>,
    pub modulation: Modulation,
}

impl SymbolFrame {
    pub fn new(symbols: Vec<C64>) -> Self {
        Self {
            symbols,
            modulation: Modulation::Qam16,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.symbols)
    }

    /// Rescales to unit average power and returns the factor applied.
    pub fn normalize(&mut self) -> f64 {
        let p = self.mean_power();
        if p <= 0.0 {
            return 1.0;
        }
        let scale = 1.0 / p.sqrt();
        for s in &mut self.symbols {
            *s *= scale;
        }
        scale
    }
}

pub(crate) fn mean_power(samples: &[C64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

// Two-bit Gray code per axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
const GRAY_LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

fn level_to_gray(level_index: usize) -> u8 {
    // level_index 0..4 for -3, -1, +1, +3
    [0b00, 0b01, 0b11, 0b10][level_index]
}

/// Constellation point for a 4-bit label `b3 b2 b1 b0`.
///
/// `b3 b2` select the in-phase level, `b1 b0` the quadrature level, each with
/// the per-axis Gray code `00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3`, scaled by
/// `1/sqrt(10)`. Label `0000` is `(-3-3j)/sqrt(10)`.
pub fn qam16_point(label: u8) -> C64 {
    let i = GRAY_LEVELS[((label >> 2) & 0b11) as usize];
    let q = GRAY_LEVELS[(label & 0b11) as usize];
    C64::new(i, q) * QAM16_SCALE
}

/// All 16 points, indexed by label.
pub fn qam16_constellation() -> [C64; 16] {
    std::array::from_fn(|l| qam16_point(l as u8))
}

pub fn qam16_map(bits: &BitStream) -> Result<SymbolFrame> {
    if bits.len() % 4 != 0 {
        return Err(Error::invalid(format!(
            "16QAM mapping needs a multiple of 4 bits, got {}",
            bits.len()
        )));
    }
    let symbols = bits
        .bits
        .chunks_exact(4)
        .map(|b| qam16_point((b[0] << 3) | (b[1] << 2) | (b[2] << 1) | b[3]))
        .collect();
    Ok(SymbolFrame::new(symbols))
}

fn decide_level(x: f64) -> usize {
    // Boundaries at -2, 0, 2 (unscaled); ties go to the smaller level.
    if x <= -2.0 {
        0
    } else if x <= 0.0 {
        1
    } else if x <= 2.0 {
        2
    } else {
        3
    }
}

/// Nearest-point label. For a square grid the 2-D minimum distance decision
/// separates into per-axis thresholds; ties resolve toward the smaller real
/// part, then the smaller imaginary part.
pub fn qam16_decide(s: C64) -> u8 {
    let i = decide_level(s.re / QAM16_SCALE);
    let q = decide_level(s.im / QAM16_SCALE);
    (level_to_gray(i) << 2) | level_to_gray(q)
}

/// Hard decision onto the constellation.
pub fn qam16_slice(s: C64) -> C64 {
    qam16_point(qam16_decide(s))
}

pub fn qam16_demap(frame: &SymbolFrame) -> BitStream {
    let mut bits = Vec::with_capacity(frame.len() * 4);
    for &s in &frame.symbols {
        let l = qam16_decide(s);
        bits.extend([(l >> 3) & 1, (l >> 2) & 1, (l >> 1) & 1, l & 1]);
    }
    BitStream { bits, seed: 0 }
}

/// Complex baseband field, one sample vector per polarization.
///
/// Amplitudes are in sqrt(W): `|x|^2 + |y|^2` is instantaneous power.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexWaveform {
    pub pols: Vec<Vec<C64>>,
    pub sample_rate: f64,
    pub center_wavelength: f64,
}

impl ComplexWaveform {
    pub fn single(samples: Vec<C64>, sample_rate: f64, center_wavelength: f64) -> Self {
        Self {
            pols: vec![samples],
            sample_rate,
            center_wavelength,
        }
    }

    pub fn dual(x: ComplexWaveform, y: ComplexWaveform) -> Result<Self> {
        if x.len() != y.len() || x.n_pols() != 1 || y.n_pols() != 1 {
            return Err(Error::invalid(
                "dual-polarization waveform needs two single-pol inputs of equal length",
            ));
        }
        if x.sample_rate != y.sample_rate {
            return Err(Error::invalid("polarizations disagree on sample rate"));
        }
        let sample_rate = x.sample_rate;
        let center_wavelength = x.center_wavelength;
        let mut pols = x.pols;
        pols.extend(y.pols);
        Ok(Self {
            pols,
            sample_rate,
            center_wavelength,
        })
    }

    pub fn n_pols(&self) -> usize {
        self.pols.len()
    }

    pub fn len(&self) -> usize {
        self.pols.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Mean total power over time, summed over polarizations (W).
    pub fn mean_power(&self) -> f64 {
        self.pols.iter().map(|p| mean_power(p)).sum()
    }

    /// Sum of `|sample|^2` over every sample of every polarization.
    pub fn energy(&self) -> f64 {
        self.pols
            .iter()
            .flat_map(|p| p.iter())
            .map(|s| s.norm_sqr())
            .sum()
    }

    pub fn pol(&self, i: usize) -> ComplexWaveform {
        ComplexWaveform::single(self.pols[i].clone(), self.sample_rate, self.center_wavelength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub rolloff: f64,
    pub sps: usize,
    pub span_symbols: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            rolloff: 0.18,
            sps: 8,
            span_symbols: 16,
        }
    }
}

impl PulseShape {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::invalid(format!(
                "roll-off {} outside [0, 1]",
                self.rolloff
            )));
        }
        if self.sps < 2 {
            return Err(Error::invalid(format!("sps {} < 2", self.sps)));
        }
        if self.span_symbols == 0 {
            return Err(Error::invalid("RRC span must be at least one symbol"));
        }
        Ok(())
    }

    pub fn n_taps(&self) -> usize {
        2 * self.span_symbols * self.sps + 1
    }

    /// Index of the tap at `t = 0`.
    pub fn center(&self) -> usize {
        self.span_symbols * self.sps
    }

    /// Root-raised-cosine taps, sampled at `sps` per symbol over
    /// `±span_symbols` symbols and normalized to unit energy.
    pub fn taps(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let beta = self.rolloff;
        let c = self.center() as isize;
        let mut taps: Vec<f64> = (0..self.n_taps() as isize)
            .map(|i| rrc_impulse((i - c) as f64 / self.sps as f64, beta))
            .collect();
        let energy: f64 = taps.iter().map(|t| t * t).sum();
        let norm = energy.sqrt();
        for t in &mut taps {
            *t /= norm;
        }
        Ok(taps)
    }
}

/// Closed-form RRC impulse response at `t` symbol periods (unnormalized).
fn rrc_impulse(t: f64, beta: f64) -> f64 {
    if t == 0.0 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Zero-stuffs `frame` to `sps` samples per symbol and filters it with the
/// RRC taps (cyclic convolution, so the frame is treated as one period of a
/// periodic sequence). Output is scaled to a mean power of `power_w` watts.
///
/// Symbol `k` sits at sample `k * sps`.
pub fn shape_pulse(
    frame: &SymbolFrame,
    shape: &PulseShape,
    symbol_rate: f64,
    center_wavelength: f64,
    power_w: f64,
) -> Result<ComplexWaveform> {
    let taps = shape.taps()?;
    if frame.is_empty() {
        return Err(Error::invalid("cannot shape an empty frame"));
    }
    let mut up = vec![C64::default(); frame.len() * shape.sps];
    for (k, &s) in frame.symbols.iter().enumerate() {
        up[k * shape.sps] = s;
    }
    let mut samples = cyclic_convolve_real(&up, &taps, shape.center());
    let p = mean_power(&samples);
    if p > 0.0 {
        let scale = (power_w / p).sqrt();
        for s in &mut samples {
            *s *= scale;
        }
    }
    Ok(ComplexWaveform::single(
        samples,
        symbol_rate * shape.sps as f64,
        center_wavelength,
    ))
}

/// Wiener phase walk: `theta[0] = 0`, increments `N(0, 2*pi*linewidth*dt)`.
pub fn wiener_phase(n: usize, linewidth: f64, dt: f64, rng_seed: u64) -> Vec<f64> {
    let mut theta = vec![0.0; n];
    let var = 2.0 * PI * linewidth * dt;
    if var <= 0.0 || n == 0 {
        return theta;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, var.sqrt()).expect("finite std");
    for k in 1..n {
        theta[k] = theta[k - 1] + normal.sample(&mut rng);
    }
    theta
}

/// Multiplies every polarization by the same laser phase walk.
pub fn apply_laser_phase_noise(
    w: &ComplexWaveform,
    linewidth: f64,
    rng_seed: u64,
) -> Result<ComplexWaveform> {
    if !(linewidth >= 0.0) {
        return Err(Error::invalid(format!("linewidth {linewidth} < 0")));
    }
    if linewidth == 0.0 {
        return Ok(w.clone());
    }
    let theta = wiener_phase(w.len(), linewidth, w.dt(), rng_seed);
    let mut out = w.clone();
    for pol in &mut out.pols {
        for (s, &th) in pol.iter_mut().zip(&theta) {
            *s *= C64::from_polar(1.0, th);
        }
    }
    Ok(out)
}

pub fn apply_frequency_offset(w: &ComplexWaveform, offset_hz: f64) -> ComplexWaveform {
    if offset_hz == 0.0 {
        return w.clone();
    }
    let mut out = w.clone();
    let dt = w.dt();
    for pol in &mut out.pols {
        for (k, s) in pol.iter_mut().enumerate() {
            *s *= C64::from_polar(1.0, 2.0 * PI * offset_hz * k as f64 * dt);
        }
    }
    out
}

/// Random constellation points drawn uniformly, for tests and baselines.
pub fn random_symbols(n: usize, rng: &mut impl Rng) -> SymbolFrame {
    SymbolFrame::new((0..n).map(|_| qam16_point(rng.random_range(0..16u8))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prbs_is_deterministic() {
        let a = prbs_generate(7, 16).unwrap();
        let b = prbs_generate(7, 16).unwrap();
        assert_eq!(a, b);
        assert!(matches!(prbs_generate(7, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn prbs_seeds_are_uncorrelated() {
        let n = 1usize << 16;
        let a = prbs_generate(7, n).unwrap();
        let b = prbs_generate(8, n).unwrap();
        let hamming = a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count() as f64;
        // Binomial(n, 1/2): mean n/2, std sqrt(n)/2.
        let tol = 3.0 * (n as f64).sqrt() / 2.0;
        assert!((hamming - n as f64 / 2.0).abs() < tol, "hamming {hamming}");
    }

    #[test]
    fn prbs_is_balanced() {
        let n = 1usize << 20;
        let a = prbs_generate(1234, n).unwrap();
        let ones = a.bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 0.002, "{ones}");
    }

    #[test]
    fn gray_table_fixed_points() {
        assert_eq!(qam16_point(0b0000), C64::new(-3.0, -3.0) * QAM16_SCALE);
        assert_eq!(qam16_point(0b1010), C64::new(3.0, 3.0) * QAM16_SCALE);
        assert_eq!(qam16_point(0b0111), C64::new(-1.0, 1.0) * QAM16_SCALE);
    }

    #[test]
    fn gray_adjacency_exhaustive() {
        let pts = qam16_constellation();
        let dmin = 2.0 * QAM16_SCALE;
        let mut pairs = 0;
        for a in 0..16 {
            for b in (a + 1)..16 {
                let d = (pts[a] - pts[b]).norm();
                if (d - dmin).abs() < 1e-9 {
                    pairs += 1;
                    assert_eq!((a ^ b).count_ones(), 1, "labels {a:04b} {b:04b}");
                }
            }
        }
        assert_eq!(pairs, 24);
    }

    #[test]
    fn constellation_is_unit_power_and_distinct() {
        let pts = qam16_constellation();
        let p: f64 = pts.iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((p - 1.0).abs() < 1e-12);
        for a in 0..16 {
            for b in (a + 1)..16 {
                assert!((pts[a] - pts[b]).norm() > 0.1);
            }
        }
    }

    #[test]
    fn demap_inverts_map() {
        let bits: Vec<u8> = (0..16u8)
            .flat_map(|l| [(l >> 3) & 1, (l >> 2) & 1, (l >> 1) & 1, l & 1])
            .collect();
        let stream = BitStream { bits, seed: 0 };
        let frame = qam16_map(&stream).unwrap();
        assert!((frame.mean_power() - 1.0).abs() < 1e-12);
        assert_eq!(qam16_demap(&frame).bits, stream.bits);
        let bad = BitStream {
            bits: vec![0; 6],
            seed: 0,
        };
        assert!(qam16_map(&bad).is_err());
    }

    #[test]
    fn decision_matches_brute_force_nearest_point() {
        let pts = qam16_constellation();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let s = C64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let mut best = 0;
            for l in 1..16 {
                if (s - pts[l]).norm_sqr() < (s - pts[best]).norm_sqr() {
                    best = l;
                }
            }
            assert_eq!(qam16_decide(s) as usize, best);
        }
    }

    #[test]
    fn decision_regions_and_ties() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for label in 0..16u8 {
            let p = qam16_point(label);
            for _ in 0..50 {
                let r = rng.random_range(0.0..0.99) * QAM16_SCALE;
                let th: f64 = rng.random_range(0.0..2.0 * PI);
                assert_eq!(qam16_decide(p + C64::from_polar(r, th)), label);
            }
        }
        // Origin is equidistant from the four inner points.
        assert_eq!(qam16_slice(C64::new(0.0, 0.0)), C64::new(-1.0, -1.0) * QAM16_SCALE);
    }

    #[test]
    fn rrc_taps_symmetric_unit_energy() {
        let shape = PulseShape::default();
        let taps = shape.taps().unwrap();
        let c = shape.center();
        for k in 1..=c {
            assert!((taps[c + k] - taps[c - k]).abs() < 1e-12);
        }
        let e: f64 = taps.iter().map(|t| t * t).sum();
        assert!((e - 1.0).abs() < 1e-12);
        // beta = 0.25 with sps 8 hits the t = 1/(4 beta) singular points.
        let special = PulseShape {
            rolloff: 0.25,
            ..shape
        };
        assert!(special.taps().unwrap().iter().all(|t| t.is_finite()));
        let bad = PulseShape {
            rolloff: 1.5,
            ..shape
        };
        assert!(bad.taps().is_err());
    }

    #[test]
    fn single_symbol_yields_impulse_response() {
        let shape = PulseShape::default();
        let n = 64;
        let mut syms = vec![C64::default(); n];
        syms[n / 2] = C64::new(1.0, 0.0);
        let frame = SymbolFrame::new(syms);
        let w = shape_pulse(&frame, &shape, 10e9, 1550e-9, 1.0).unwrap();
        let taps = shape.taps().unwrap();
        // Undo the power normalization: one unit-energy pulse over n*sps samples.
        let scale = (1.0 / (n * shape.sps) as f64).sqrt();
        let origin = n / 2 * shape.sps;
        for (i, &t) in taps.iter().enumerate() {
            let idx = origin + i - shape.center();
            assert!((w.pols[0][idx].re * scale - t).abs() < 1e-12);
        }
    }

    #[test]
    fn shaping_hits_requested_power() {
        let bits = prbs_generate(11, 4 * 4096).unwrap();
        let frame = qam16_map(&bits).unwrap();
        let p = dbm_to_watts(2.0);
        let w = shape_pulse(&frame, &PulseShape::default(), 10e9, 1550e-9, p).unwrap();
        assert!((w.mean_power() / p - 1.0).abs() < 1e-3);
        assert_eq!(w.sample_rate, 80e9);
    }

    #[test]
    fn phase_noise_is_pure_rotation() {
        let frame = SymbolFrame::new(qam16_constellation().repeat(8));
        let w = shape_pulse(&frame, &PulseShape::default(), 10e9, 1550e-9, 1e-3).unwrap();
        assert_eq!(apply_laser_phase_noise(&w, 0.0, 1).unwrap(), w);
        let noisy = apply_laser_phase_noise(&w, 1e5, 1).unwrap();
        for (a, b) in noisy.pols[0].iter().zip(&w.pols[0]) {
            assert!((a.norm() - b.norm()).abs() < 1e-15);
        }
        assert!(apply_laser_phase_noise(&w, -1.0, 1).is_err());
    }

    #[test]
    fn wiener_increment_variance() {
        let (lw, dt) = (1e5, 1.0 / 80e9);
        let theta = wiener_phase(1_000_001, lw, dt, 5);
        let inc: Vec<f64> = theta.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        let want = 2.0 * PI * lw * dt;
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn frequency_offset_round_trip_and_tone_shift() {
        let n = 1024;
        let fs = 1024.0;
        let tone: Vec<C64> = (0..n)
            .map(|k| C64::from_polar(1.0, 2.0 * PI * 10.0 * k as f64 / fs))
            .collect();
        let w = ComplexWaveform::single(tone, fs, 1550e-9);
        assert_eq!(apply_frequency_offset(&w, 0.0), w);
        let there = apply_frequency_offset(&w, 37.0);
        let back = apply_frequency_offset(&there, -37.0);
        for (a, b) in back.pols[0].iter().zip(&w.pols[0]) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut spec = there.pols[0].clone();
        crate::fft::FftPair::new(n).forward(&mut spec);
        let peak = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        // Bin spacing is 1 Hz: the peak moves from bin 10 to 10 + 37.
        assert_eq!(peak, 47);
    }
}
