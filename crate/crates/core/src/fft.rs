//! Thin wrapper around `rustfft` with the conventions used across the crate:
//! unnormalized forward transform, `1/N`-normalized inverse, and the
//! matching angular-frequency grid.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

pub struct FftPair {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            len,
            forward,
            inverse,
            scratch: vec![C64::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&mut self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    pub fn inverse(&mut self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Angular frequencies (rad/s) of the FFT bins for `len` samples at
/// `sample_rate`, in FFT order (DC first, negative frequencies in the upper
/// half).
pub fn angular_frequencies(len: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / len as f64;
    (0..len)
        .map(|k| {
            let signed = if k < len.div_ceil(2) {
                k as f64
            } else {
                k as f64 - len as f64
            };
            2.0 * PI * signed * df
        })
        .collect()
}

/// Cyclic convolution of `signal` with a real, centered kernel.
///
/// `kernel[i]` is the tap at offset `i - center`. The result has the length
/// of `signal`.
pub fn cyclic_convolve_real(signal: &[C64], kernel: &[f64], center: usize) -> Vec<C64> {
    let n = signal.len();
    let mut fft = FftPair::new(n);
    let mut h = vec![C64::default(); n];
    for (i, &tap) in kernel.iter().enumerate() {
        let offset = i as isize - center as isize;
        let idx = offset.rem_euclid(n as isize) as usize;
        h[idx] += tap;
    }
    let mut x = signal.to_vec();
    fft.forward(&mut x);
    fft.forward(&mut h);
    for (a, b) in x.iter_mut().zip(&h) {
        *a *= b;
    }
    fft.inverse(&mut x);
    x
}
