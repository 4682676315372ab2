//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::Result;

const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probed: usize,
    /// Coordinates whose stencil `x ± h` crossed a ReLU kink. The function is
    /// not differentiable on such an interval, so the difference quotient
    /// says nothing about the gradient at `x` and the probe is dropped.
    pub skipped_kinks: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`.
///
/// For every input tensor the error is `max |analytic - numeric|` divided by
/// the largest gradient magnitude in that tensor. The divisor is floored at
/// 1e-6 so that a tensor whose true gradient vanishes is judged in absolute
/// terms. The report carries the maximum over tensors. At most `max_coords`
/// coordinates per tensor are probed, chosen with `seed`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    f: F,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.track_kinks();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_kinks = g.kink_hash();
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |ts: &[Tensor]| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::new();
        g.track_kinks();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).data[0], g.kink_hash()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probed: 0,
        skipped_kinks: 0,
    };
    for k in 0..inputs.len() {
        let n = inputs[k].len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for &i in &coords {
            let x0 = inputs[k].data[i];
            work[k].data[i] = x0 + h;
            let (plus, kp) = eval(&work)?;
            work[k].data[i] = x0 - h;
            let (minus, km) = eval(&work)?;
            work[k].data[i] = x0;
            if kp != base_kinks || km != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }
            report.probed += 1;
            let numeric = (plus - minus) / (2.0 * h);
            diff = diff.max((analytic[k][i] - numeric).abs());
            scale = scale.max(numeric.abs()).max(analytic[k][i].abs());
        }
        report.max_rel_error = report.max_rel_error.max(diff / scale.max(ABS_FLOOR));
    }
    Ok(report)
}
