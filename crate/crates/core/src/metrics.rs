//! Error counting, EVM and the BER-derived Q factor.

use std::f64::consts::PI;

use crate::txrx::{qam16_decide, BitStream, SymbolFrame};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub n_symbols: usize,
    pub n_bits: usize,
    pub symbol_errors: usize,
    pub bit_errors: usize,
    pub ser: f64,
    pub ber: f64,
    pub q_db: f64,
    pub evm_pct: f64,
    /// Set when no bit errors were observed; `q_db` is then the lower bound
    /// evaluated at `ber = 1 / (2 n_bits)`.
    pub ber_is_floor: bool,
}

/// Inverse complementary error function on `(0, 2)`.
///
/// Starts from Giles' rational approximation of `erfinv(1 - y)` (or the
/// asymptotic tail expansion for tiny `y`) and refines
/// with Halley iterations against `libm::erfc`; the result satisfies
/// `|erfc(x) / y - 1| < 1e-12` across the domain.
pub fn erfc_inv(y: f64) -> f64 {
    if y <= 0.0 {
        return f64::INFINITY;
    }
    if y >= 2.0 {
        return f64::NEG_INFINITY;
    }
    if y == 1.0 {
        return 0.0;
    }
    let mut x = if y < 1e-12 {
        tail_guess(y)
    } else {
        giles_erfinv_guess(1.0 - y, y)
    };
    for _ in 0..50 {
        let err = libm::erfc(x) - y;
        // d/dx erfc = -2/sqrt(pi) exp(-x^2); second derivative adds -2x factor.
        let deriv = -2.0 / PI.sqrt() * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let newton = err / deriv;
        let step = newton / (1.0 + x * newton);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

// erfc(x) ~ exp(-x^2) / (x sqrt(pi)) for large x.
fn tail_guess(y: f64) -> f64 {
    let mut x = (-y.ln()).sqrt();
    for _ in 0..3 {
        x = (-(y * x * PI.sqrt()).ln()).sqrt();
    }
    x
}

// `x = 1 - y` and `y` are passed separately to keep precision near y ~ 0.
fn giles_erfinv_guess(x: f64, y: f64) -> f64 {
    let w = -((2.0 - y) * y).ln();
    if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        for c in [
            3.432_739_39e-07,
            -3.523_387_7e-06,
            -4.391_506_54e-06,
            0.000_218_580_87,
            -0.001_253_725_03,
            -0.004_177_681_64,
            0.246_640_727,
            1.501_409_41,
        ] {
            p = c + p * w;
        }
        p * x
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        for c in [
            0.000_100_950_558,
            0.001_349_343_22,
            -0.003_673_428_44,
            0.005_739_507_73,
            -0.007_622_461_3,
            0.009_438_870_47,
            1.001_674_06,
            2.832_976_82,
        ] {
            p = c + p * w;
        }
        p * x
    }
}

/// `Q = 20 log10(sqrt(2) erfc^-1(2 BER))`, defined for `0 < ber < 0.5`.
pub fn q_factor(ber: f64) -> Result<f64> {
    if !(ber > 0.0 && ber < 0.5) {
        return Err(Error::UndefinedQ(ber));
    }
    Ok(20.0 * (2f64.sqrt() * erfc_inv(2.0 * ber)).log10())
}

/// Inverse of [`q_factor`].
pub fn ber_from_q(q_db: f64) -> f64 {
    libm::erfc(10f64.powf(q_db / 20.0) / 2f64.sqrt()) / 2.0
}

/// Q factor with the zero-error convention: when `ber == 0` the value is
/// computed at the floor `1 / (2 n_bits)` and the flag is set.
pub fn q_factor_with_floor(ber: f64, n_bits: usize) -> Result<(f64, bool)> {
    if ber == 0.0 {
        if n_bits == 0 {
            return Err(Error::invalid("Q floor needs a positive bit count"));
        }
        Ok((q_factor(1.0 / (2.0 * n_bits as f64))?, true))
    } else {
        Ok((q_factor(ber)?, false))
    }
}

/// `sqrt(mean |rx - ref|^2 / mean |ref|^2) * 100`.
pub fn evm(rx: &[C64], reference: &[C64]) -> Result<f64> {
    if rx.len() != reference.len() {
        return Err(Error::invalid(format!(
            "EVM length mismatch: {} vs {}",
            rx.len(),
            reference.len()
        )));
    }
    let err: f64 = rx.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    let p: f64 = reference.iter().map(|s| s.norm_sqr()).sum();
    if p == 0.0 {
        return Err(Error::invalid("EVM reference has zero power"));
    }
    Ok((err / p).sqrt() * 100.0)
}

/// Counts bit and symbol errors between transmitted and received data.
///
/// `rx_syms` may be soft (they are sliced before comparison); `tx_syms` are
/// the ideal transmitted points and also serve as the EVM reference.
pub fn count_errors(
    tx_bits: &BitStream,
    rx_bits: &BitStream,
    tx_syms: &SymbolFrame,
    rx_syms: &SymbolFrame,
) -> Result<MetricsReport> {
    if tx_bits.len() != rx_bits.len() || tx_syms.len() != rx_syms.len() {
        return Err(Error::invalid(format!(
            "error counting needs equal lengths (bits {} vs {}, symbols {} vs {})",
            tx_bits.len(),
            rx_bits.len(),
            tx_syms.len(),
            rx_syms.len()
        )));
    }
    if tx_bits.is_empty() || tx_syms.is_empty() {
        return Err(Error::invalid("error counting needs non-empty streams"));
    }
    let bit_errors = tx_bits
        .bits
        .iter()
        .zip(&rx_bits.bits)
        .filter(|(a, b)| a != b)
        .count();
    let symbol_errors = tx_syms
        .symbols
        .iter()
        .zip(&rx_syms.symbols)
        .filter(|(a, b)| qam16_decide(**a) != qam16_decide(**b))
        .count();
    let n_bits = tx_bits.len();
    let n_symbols = tx_syms.len();
    let ber = bit_errors as f64 / n_bits as f64;
    let ser = symbol_errors as f64 / n_symbols as f64;
    let (q_db, ber_is_floor) = if ber < 0.5 {
        q_factor_with_floor(ber, n_bits)?
    } else {
        (f64::NAN, false)
    };
    Ok(MetricsReport {
        n_symbols,
        n_bits,
        symbol_errors,
        bit_errors,
        ser,
        ber,
        q_db,
        evm_pct: evm(&rx_syms.symbols, &tx_syms.symbols)?,
        ber_is_floor,
    })
}

/// Convenience: demaps `rx` and counts errors against the transmitted frame.
pub fn evaluate(tx: &SymbolFrame, rx: &SymbolFrame) -> Result<MetricsReport> {
    let tx_bits = crate::txrx::qam16_demap(tx);
    let rx_bits = crate::txrx::qam16_demap(rx);
    count_errors(&tx_bits, &rx_bits, tx, rx)
}

/// Mean distance from each symbol to its nearest constellation point.
pub fn mean_distance_to_grid(symbols: &[C64]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    symbols
        .iter()
        .map(|&s| (s - crate::txrx::qam16_slice(s)).norm())
        .sum::<f64>()
        / symbols.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txrx::{prbs_generate, qam16_map, random_symbols};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Independent oracle: bisection on erfc, which is strictly decreasing.
    fn erfc_inv_bisect(y: f64) -> f64 {
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if libm::erfc(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn erfc_inv_matches_bisection() {
        for &y in &[1e-300, 1e-100, 1e-20, 1e-9, 2e-3, 0.1, 0.5, 0.999, 1.0, 1.3, 1.9, 1.999_999] {
            let a = erfc_inv(y);
            let b = erfc_inv_bisect(y);
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "y={y:e}: {a} vs {b}");
            if y != 1.0 {
                assert!((libm::erfc(a) / y - 1.0).abs() < 1e-12, "y={y}");
            }
        }
    }

    #[test]
    fn q_reference_values() {
        // Bisection oracle: sqrt(2) * erfc^-1(2e-3) = 3.0902, 20 log10 = 9.7998.
        let oracle = 20.0 * (2f64.sqrt() * erfc_inv_bisect(2e-3)).log10();
        let q = q_factor(1e-3).unwrap();
        assert!((q - oracle).abs() < 1e-9);
        assert!((q - 9.80).abs() < 0.01, "{q}");
        // Forward-evaluated erfc at 3/sqrt(2).
        let ber = libm::erfc(3.0 / 2f64.sqrt()) / 2.0;
        assert!((ber - 1.35e-3).abs() < 1e-5);
        let q = q_factor(ber).unwrap();
        assert!((q - 20.0 * 3f64.log10()).abs() < 1e-9, "{q}");
        assert!(matches!(q_factor(0.5), Err(Error::UndefinedQ(_))));
        assert!(q_factor(0.7).is_err());
        assert!(q_factor(0.0).is_err());
    }

    #[test]
    fn zero_errors_use_floor() {
        let (q, floor) = q_factor_with_floor(0.0, 10_000).unwrap();
        assert!(floor);
        assert!((q - q_factor(5e-5).unwrap()).abs() < 1e-12);
        let (_, floor) = q_factor_with_floor(1e-3, 10_000).unwrap();
        assert!(!floor);
    }

    #[test]
    fn identical_streams() {
        let bits = prbs_generate(1, 4000).unwrap();
        let syms = qam16_map(&bits).unwrap();
        let r = count_errors(&bits, &bits, &syms, &syms).unwrap();
        assert_eq!((r.ber, r.ser, r.evm_pct), (0.0, 0.0, 0.0));
        assert!(r.ber_is_floor);
    }

    #[test]
    fn single_bit_flip() {
        let bits = prbs_generate(2, 10_000).unwrap();
        let syms = qam16_map(&bits).unwrap();
        let mut flipped = bits.clone();
        flipped.bits[1234] ^= 1;
        let rx = qam16_map(&flipped).unwrap();
        let r = count_errors(&bits, &flipped, &syms, &rx).unwrap();
        assert_eq!(r.ber, 1e-4);
        assert_eq!(r.symbol_errors, 1);
        assert!(!r.ber_is_floor);
        let short = prbs_generate(2, 9_996).unwrap();
        assert!(count_errors(&bits, &short, &syms, &rx).is_err());
    }

    #[test]
    fn uniform_guessing_ser() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let tx = random_symbols(100_000, &mut rng);
        let rx = random_symbols(100_000, &mut rng);
        let r = evaluate(&tx, &rx).unwrap();
        assert!((r.ser - 15.0 / 16.0).abs() < 0.01, "{}", r.ser);
        let ratio = r.ber / r.ser;
        assert!((0.25..=1.0).contains(&ratio));
    }

    #[test]
    fn evm_direct_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let reference = random_symbols(4096, &mut rng);
        let mut tx = reference.clone();
        tx.normalize();
        assert_eq!(evm(&tx.symbols, &tx.symbols).unwrap(), 0.0);
        let shifted: Vec<C64> = tx.symbols.iter().map(|s| s + C64::new(0.1, 0.0)).collect();
        assert!((evm(&shifted, &tx.symbols).unwrap() - 10.0).abs() < 1e-9);
        assert!(evm(&shifted[1..], &tx.symbols).is_err());
    }

    #[test]
    fn evm_grows_with_noise() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let tx = random_symbols(20_000, &mut rng);
        let mut last = 0.0;
        for sigma in [0.01, 0.03, 0.1, 0.3] {
            let n = Normal::new(0.0, sigma).unwrap();
            let rx: Vec<C64> = tx
                .symbols
                .iter()
                .map(|s| s + C64::new(n.sample(&mut rng), n.sample(&mut rng)))
                .collect();
            let e = evm(&rx, &tx.symbols).unwrap();
            assert!(e > last);
            last = e;
        }
    }

    proptest::proptest! {
        #[test]
        fn q_strictly_decreasing(a in 1e-12f64..0.499, b in 1e-12f64..0.499) {
            proptest::prop_assume!((a - b).abs() > 1e-9 * a.max(b));
            let (qa, qb) = (q_factor(a).unwrap(), q_factor(b).unwrap());
            proptest::prop_assert_eq!(a < b, qa > qb);
        }

        #[test]
        fn q_round_trip(ber in 1e-12f64..0.49) {
            let q = q_factor(ber).unwrap();
            proptest::prop_assert!((ber_from_q(q) / ber - 1.0).abs() < 1e-9);
        }
    }
}
