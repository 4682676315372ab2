//! Coherent receiver DSP: dispersion compensation, digital backpropagation,
//! matched filtering, blind phase search and data-aided constellation
//! alignment.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::channel::{FiberParams, LinkConfig, SplitStep};
use crate::fft::{angular_frequencies, cyclic_convolve_real, FftPair};
use crate::txrx::{qam16_slice, ComplexWaveform, PulseShape, SymbolFrame};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DspMode {
    LinearEq,
    Dbp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DspChainConfig {
    pub mode: DspMode,
    pub dbp_steps_per_span: usize,
    pub dbp_nl_scaling: f64,
    pub cpr_test_phases: usize,
    /// Half-width of the BPS averaging window, in symbols.
    pub cpr_window: usize,
}

impl Default for DspChainConfig {
    fn default() -> Self {
        Self {
            mode: DspMode::LinearEq,
            dbp_steps_per_span: 10,
            dbp_nl_scaling: 1.0,
            cpr_test_phases: 64,
            cpr_window: 32,
        }
    }
}

impl DspChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == DspMode::Dbp && self.dbp_steps_per_span == 0 {
            return Err(Error::invalid("DBP needs at least one step per span"));
        }
        if self.cpr_test_phases < 4 {
            return Err(Error::invalid("BPS needs at least 4 test phases"));
        }
        Ok(())
    }
}

/// Removes the accumulated dispersion of `total_length` metres of `f` by
/// applying the inverse all-pass transfer function (no amplitude change).
pub fn cdc(w: &ComplexWaveform, f: &FiberParams, total_length: f64) -> ComplexWaveform {
    if total_length == 0.0 {
        return w.clone();
    }
    let omega = angular_frequencies(w.len(), w.sample_rate);
    let h: Vec<C64> = omega
        .iter()
        .map(|&w| {
            let phase = (f.beta2 / 2.0 * w * w - f.beta3 / 6.0 * w * w * w) * total_length;
            C64::from_polar(1.0, -phase)
        })
        .collect();
    let mut fft = FftPair::new(w.len());
    let mut out = w.clone();
    for p in &mut out.pols {
        fft.forward(p);
        for (s, g) in p.iter_mut().zip(&h) {
            *s *= g;
        }
        fft.inverse(p);
    }
    out
}

/// Digital backpropagation through `link` with `steps_per_span` symmetric
/// steps per span and Kerr coefficient scaled by `xi`.
///
/// Spans are processed last to first: the amplifier gain is divided out,
/// then the span is integrated backwards (negated dispersion and Kerr
/// phase, gain in place of loss).
pub fn dbp(
    w: &ComplexWaveform,
    link: &LinkConfig,
    steps_per_span: usize,
    xi: f64,
) -> Result<ComplexWaveform> {
    if steps_per_span == 0 {
        return Err(Error::invalid("DBP needs at least one step per span"));
    }
    let mut ss = SplitStep::new(
        w.len(),
        w.sample_rate,
        &link.span,
        link.span.length,
        steps_per_span,
        link.span.gamma * xi,
        link.polarization_model,
        -1.0,
    );
    let inv_gain = 1.0 / link.amplifier.gain_linear().sqrt();
    let mut out = w.clone();
    for span in (0..link.n_spans).rev() {
        for p in &mut out.pols {
            for s in p.iter_mut() {
                *s *= inv_gain;
            }
        }
        ss.run(&mut out.pols, |_, pols| {
            let finite = pols
                .iter()
                .flat_map(|p| p.iter())
                .all(|s| s.re.is_finite() && s.im.is_finite());
            if finite {
                Ok(())
            } else {
                Err(Error::DbpNonFinite { span })
            }
        })?;
    }
    Ok(out)
}

/// RRC matched filter, then one sample per symbol starting at
/// `timing_offset`, normalized to unit mean power.
///
/// Filtering is cyclic like the transmitter, so there is no filter edge
/// transient and every symbol period yields a sample.
pub fn matched_filter_downsample(
    w: &ComplexWaveform,
    pol: usize,
    shape: &PulseShape,
    timing_offset: usize,
) -> Result<SymbolFrame> {
    let taps = shape.taps()?;
    if pol >= w.n_pols() {
        return Err(Error::invalid(format!("no polarization {pol}")));
    }
    if timing_offset >= shape.sps {
        return Err(Error::invalid(format!(
            "timing offset {timing_offset} outside one symbol ({} samples)",
            shape.sps
        )));
    }
    let filtered = cyclic_convolve_real(&w.pols[pol], &taps, shape.center());
    let symbols = filtered
        .iter()
        .skip(timing_offset)
        .step_by(shape.sps)
        .copied()
        .collect();
    let mut frame = SymbolFrame::new(symbols);
    frame.normalize();
    Ok(frame)
}

#[derive(Debug, Clone)]
pub struct CprOutput {
    pub frame: SymbolFrame,
    /// Per-symbol BPS decision in `[-pi/4, pi/4)`.
    pub raw_phase: Vec<f64>,
    /// `raw_phase` unwrapped across the `pi/2` symmetry; this is what is
    /// removed from the symbols.
    pub phase: Vec<f64>,
}

/// Blind phase search.
///
/// Test phases `-pi/4 + b * (pi/2) / B` for `b` in `0..B`. For every symbol
/// the squared distance from the rotated symbol to its nearest constellation
/// point is summed over `k - window ..= k + window`, and the minimizing test
/// phase is kept. Estimates are unwrapped in multiples of `pi/2` and
/// subtracted; the remaining quadrant ambiguity is left to
/// [`align_constellation`].
pub fn cpr_bps(frame: &SymbolFrame, n_test_phases: usize, window: usize) -> Result<CprOutput> {
    if n_test_phases < 4 {
        return Err(Error::invalid("BPS needs at least 4 test phases"));
    }
    if window == 0 {
        return Err(Error::invalid("BPS window must be >= 1"));
    }
    let n = frame.len();
    let b = n_test_phases;
    let phases: Vec<f64> = (0..b)
        .map(|i| -FRAC_PI_4 + i as f64 * FRAC_PI_2 / b as f64)
        .collect();
    let rot: Vec<C64> = phases.iter().map(|&p| C64::from_polar(1.0, -p)).collect();

    // dist[k * b + i]
    let mut dist = vec![0.0; n * b];
    for (k, &s) in frame.symbols.iter().enumerate() {
        for (i, r) in rot.iter().enumerate() {
            let z = s * r;
            dist[k * b + i] = (z - qam16_slice(z)).norm_sqr();
        }
    }
    // Sliding window sums via prefix sums per test phase.
    let mut prefix = vec![0.0; (n + 1) * b];
    for k in 0..n {
        for i in 0..b {
            prefix[(k + 1) * b + i] = prefix[k * b + i] + dist[k * b + i];
        }
    }
    let mut raw_phase = Vec::with_capacity(n);
    for k in 0..n {
        let lo = k.saturating_sub(window);
        let hi = (k + window + 1).min(n);
        let mut best = (f64::INFINITY, 0);
        for i in 0..b {
            let cost = prefix[hi * b + i] - prefix[lo * b + i];
            if cost < best.0 {
                best = (cost, i);
            }
        }
        raw_phase.push(phases[best.1]);
    }

    let mut phase = Vec::with_capacity(n);
    let mut prev = 0.0;
    for (k, &p) in raw_phase.iter().enumerate() {
        let unwrapped = if k == 0 {
            p
        } else {
            p + FRAC_PI_2 * ((prev - p) / FRAC_PI_2).round()
        };
        phase.push(unwrapped);
        prev = unwrapped;
    }
    let symbols = frame
        .symbols
        .iter()
        .zip(&phase)
        .map(|(&s, &p)| s * C64::from_polar(1.0, -p))
        .collect();
    Ok(CprOutput {
        frame: SymbolFrame::new(symbols),
        raw_phase,
        phase,
    })
}

/// Estimates a carrier frequency offset from symbol-rate samples by locating
/// the spectral peak of the fourth power (the 16QAM pattern is invariant
/// under `pi/2` rotations, leaving a tone at four times the offset).
pub fn estimate_frequency_offset(frame: &SymbolFrame, symbol_rate: f64) -> f64 {
    let n = frame.len().next_power_of_two();
    let mut buf = vec![C64::default(); n];
    for (b, s) in buf.iter_mut().zip(&frame.symbols) {
        *b = s.powi(4);
    }
    FftPair::new(n).forward(&mut buf);
    let peak = buf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let signed = if peak < n.div_ceil(2) {
        peak as f64
    } else {
        peak as f64 - n as f64
    };
    signed * symbol_rate / n as f64 / 4.0
}

pub fn remove_frequency_offset(frame: &SymbolFrame, offset: f64, symbol_rate: f64) -> SymbolFrame {
    if offset == 0.0 {
        return frame.clone();
    }
    SymbolFrame::new(
        frame
            .symbols
            .iter()
            .enumerate()
            .map(|(k, &s)| s * C64::from_polar(1.0, -2.0 * PI * offset * k as f64 / symbol_rate))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub frame: SymbolFrame,
    /// Applied rotation `k * pi/2`, `k` in `0..4`.
    pub quarter_turns: u8,
    pub conjugated: bool,
    /// Cyclic delay of the input relative to the reference, in symbols.
    pub delay: usize,
    pub correlation: f64,
}

/// Data-aided alignment against the known transmitted frame.
///
/// Every combination of `k * pi/2` rotation and optional conjugation is
/// cross-correlated (cyclically, via FFT) with the reference; the candidate
/// and lag with the largest real correlation win and the output is rotated
/// and shifted so that index `k` lines up with `reference[k]`. If the best
/// value of any other candidate comes within 1% of the winner the alignment
/// is reported as ambiguous.
pub fn align_constellation(frame: &SymbolFrame, reference: &SymbolFrame) -> Result<Alignment> {
    let n = frame.len();
    if n != reference.len() || n == 0 {
        return Err(Error::invalid(format!(
            "alignment needs equal non-empty frames ({n} vs {})",
            reference.len()
        )));
    }
    let mut fft = FftPair::new(n);
    let mut r = reference.symbols.clone();
    fft.forward(&mut r);

    let mut scores = Vec::with_capacity(8);
    for conj in [false, true] {
        let mut x: Vec<C64> = if conj {
            frame.symbols.iter().map(|s| s.conj()).collect()
        } else {
            frame.symbols.clone()
        };
        fft.forward(&mut x);
        // c[d] = sum_k x[k + d] conj(r[k])
        let mut c: Vec<C64> = x.iter().zip(&r).map(|(a, b)| a * b.conj()).collect();
        fft.inverse(&mut c);
        for q in 0..4u8 {
            let rot = C64::from_polar(1.0, q as f64 * FRAC_PI_2);
            let (delay, value) = c
                .iter()
                .enumerate()
                .map(|(d, v)| (d, (v * rot).re))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            scores.push((q, conj, delay, value));
        }
    }
    scores.sort_by(|a, b| b.3.total_cmp(&a.3));
    let (q, conj, delay, best) = scores[0];
    let runner_up = scores[1].3;
    if runner_up >= 0.99 * best {
        return Err(Error::AmbiguousAlignment { best, runner_up });
    }
    let rot = C64::from_polar(1.0, q as f64 * FRAC_PI_2);
    let symbols = (0..n)
        .map(|k| {
            let s = frame.symbols[(k + delay) % n];
            (if conj { s.conj() } else { s }) * rot
        })
        .collect();
    Ok(Alignment {
        frame: SymbolFrame::new(symbols),
        quarter_turns: q,
        conjugated: conj,
        delay,
        correlation: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ssfm_propagate, PolarizationModel};
    use crate::metrics::evm;
    use crate::txrx::{prbs_generate, qam16_map, random_symbols, shape_pulse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn tx_frame(seed: u64, n: usize) -> SymbolFrame {
        qam16_map(&prbs_generate(seed, 4 * n).unwrap()).unwrap()
    }

    fn awgn(frame: &SymbolFrame, snr_db: f64, seed: u64) -> SymbolFrame {
        let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        SymbolFrame::new(
            frame
                .symbols
                .iter()
                .map(|&s| s + C64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect(),
        )
    }

    #[test]
    fn cdc_inverts_dispersion_only_channel() {
        let frame = tx_frame(1, 1024);
        let shape = PulseShape::default();
        let w = shape_pulse(&frame, &shape, 10e9, 1550e-9, 1e-3).unwrap();
        let f = FiberParams {
            alpha: 0.0,
            beta2: -2.17e-26,
            beta3: 1e-40,
            gamma: 0.0,
            length: 80e3,
        };
        let rx = ssfm_propagate(&w, &f, 20e3, PolarizationModel::IndependentScalar).unwrap();
        let eq = cdc(&rx, &f, f.length);
        let err = evm(&eq.pols[0], &w.pols[0]).unwrap();
        assert!(err < 1e-6, "{err}");
        assert!((eq.energy() / rx.energy() - 1.0).abs() < 1e-10);
        assert_eq!(cdc(&rx, &f, 0.0), rx);
        let there_and_back = cdc(&cdc(&rx, &f, 5e3), &f, -5e3);
        for (a, b) in there_and_back.pols[0].iter().zip(&rx.pols[0]) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn back_to_back_matched_filter() {
        let frame = tx_frame(2, 4096);
        let shape = PulseShape::default();
        let w = shape_pulse(&frame, &shape, 10e9, 1550e-9, 1e-3).unwrap();
        let rx = matched_filter_downsample(&w, 0, &shape, 0).unwrap();
        assert_eq!(rx.len(), frame.len());
        assert!((rx.mean_power() - 1.0).abs() < 1e-6);
        // Both sides at unit power: a finite random frame is not exactly 1.
        let mut reference = frame.clone();
        reference.normalize();
        let e = evm(&rx.symbols, &reference.symbols).unwrap();
        assert!(e < 0.5, "EVM {e}%");
        assert!(matched_filter_downsample(&w, 0, &shape, 8).is_err());
        assert!(matched_filter_downsample(&w, 1, &shape, 0).is_err());
    }

    #[test]
    fn shaping_and_matched_filter_are_nyquist() {
        // Direct (non-FFT) convolution oracle of the RRC cascade: the raised
        // cosine sampled at symbol instants must be a unit impulse.
        let shape = PulseShape::default();
        let taps = shape.taps().unwrap();
        let c = shape.center() as isize;
        let tap = |i: isize| -> f64 {
            let j = i + c;
            if j < 0 || j >= taps.len() as isize {
                0.0
            } else {
                taps[j as usize]
            }
        };
        let sps = shape.sps as isize;
        for m in -8..=8isize {
            let t = m * sps;
            let rc: f64 = (-2 * c..=2 * c).map(|k| tap(k) * tap(t - k)).sum();
            let want = if m == 0 { 1.0 } else { 0.0 };
            assert!((rc - want).abs() < 1e-3, "m={m}: {rc}");
        }
    }

    #[test]
    fn bps_constant_offset() {
        let frame = tx_frame(3, 2048);
        let offset = PI / 16.0;
        let rotated = SymbolFrame::new(
            frame.symbols.iter().map(|s| s * C64::from_polar(1.0, offset)).collect(),
        );
        let out = cpr_bps(&rotated, 64, 32).unwrap();
        let quantum = PI / (2.0 * 64.0);
        for &p in &out.phase {
            assert!((p - offset).abs() <= quantum + 1e-12, "{p}");
        }
        for &p in &out.raw_phase {
            assert!((-FRAC_PI_4..FRAC_PI_4).contains(&p));
        }
        let zero = cpr_bps(&frame, 64, 32).unwrap();
        for (a, b) in zero.frame.symbols.iter().zip(&frame.symbols) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(cpr_bps(&frame, 3, 32).is_err());
        assert!(cpr_bps(&frame, 64, 0).is_err());
    }

    #[test]
    fn bps_exhaustive_oracle_agrees() {
        // Brute-force: for each symbol, try every test phase over the full
        // window directly.
        let frame = awgn(&tx_frame(4, 300), 18.0, 1);
        let rotated = SymbolFrame::new(
            frame.symbols.iter().map(|s| s * C64::from_polar(1.0, 0.2)).collect(),
        );
        let (b, win) = (16, 5);
        let out = cpr_bps(&rotated, b, win).unwrap();
        for k in 0..rotated.len() {
            let lo = k.saturating_sub(win);
            let hi = (k + win + 1).min(rotated.len());
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..b {
                let phi = -FRAC_PI_4 + i as f64 * FRAC_PI_2 / b as f64;
                let cost: f64 = (lo..hi)
                    .map(|j| {
                        let z = rotated.symbols[j] * C64::from_polar(1.0, -phi);
                        (z - qam16_slice(z)).norm_sqr()
                    })
                    .sum();
                if cost < best.0 - 1e-12 {
                    best = (cost, phi);
                }
            }
            assert!((out.raw_phase[k] - best.1).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn alignment_recovers_rotation_conjugation_and_delay() {
        let reference = tx_frame(5, 1024);
        let n = reference.len();
        let rotated = SymbolFrame::new(
            reference.symbols.iter().map(|s| s * C64::new(0.0, 1.0)).collect(),
        );
        let a = align_constellation(&rotated, &reference).unwrap();
        assert_eq!((a.quarter_turns, a.delay), (3, 0));
        for (x, y) in a.frame.symbols.iter().zip(&reference.symbols) {
            assert!((x - y).norm() < 1e-12);
        }

        let delayed = SymbolFrame::new((0..n).map(|k| reference.symbols[(k + n - 3) % n]).collect());
        let a = align_constellation(&delayed, &reference).unwrap();
        assert_eq!(a.delay, 3);
        for (x, y) in a.frame.symbols.iter().zip(&reference.symbols) {
            assert!((x - y).norm() < 1e-12);
        }

        let conj = SymbolFrame::new(reference.symbols.iter().map(|s| s.conj() * C64::new(-1.0, 0.0)).collect());
        let a = align_constellation(&conj, &reference).unwrap();
        assert!(a.conjugated);
        for (x, y) in a.frame.symbols.iter().zip(&reference.symbols) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn alignment_margin_at_20db() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for trial in 0..5 {
            let reference = random_symbols(4096, &mut rng);
            let noisy = awgn(&reference, 20.0, trial);
            let a = align_constellation(&noisy, &reference).unwrap();
            assert_eq!((a.quarter_turns, a.conjugated, a.delay), (0, false, 0));
            // Runner-up of any other candidate.
            let mut worst_other: f64 = 0.0;
            for conj in [false, true] {
                for q in 0..4 {
                    if !conj && q == 0 {
                        continue;
                    }
                    let rot = C64::from_polar(1.0, q as f64 * FRAC_PI_2);
                    let cand = noisy
                        .symbols
                        .iter()
                        .map(|s| if conj { s.conj() } else { *s } * rot);
                    let c: f64 = cand.zip(&reference.symbols).map(|(x, y)| (x * y.conj()).re).sum();
                    worst_other = worst_other.max(c);
                }
            }
            assert!(a.correlation >= 10.0 * worst_other, "{} vs {}", a.correlation, worst_other);
        }
    }

    #[test]
    fn alignment_flags_ambiguity() {
        let constant = SymbolFrame::new(vec![C64::new(1.0, 1.0); 64]);
        let err = align_constellation(&constant, &constant);
        assert!(matches!(err, Err(Error::AmbiguousAlignment { .. })));
    }

    #[test]
    fn frequency_offset_estimator() {
        let frame = tx_frame(6, 8192);
        let rs = 10e9;
        let off = 50e6;
        let shifted = SymbolFrame::new(
            frame
                .symbols
                .iter()
                .enumerate()
                .map(|(k, &s)| s * C64::from_polar(1.0, 2.0 * PI * off * k as f64 / rs))
                .collect(),
        );
        let est = estimate_frequency_offset(&shifted, rs);
        let resolution = rs / 8192.0 / 4.0;
        assert!((est - off).abs() <= resolution, "{est}");
        let back = remove_frequency_offset(&shifted, off, rs);
        for (a, b) in back.symbols.iter().zip(&frame.symbols) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
