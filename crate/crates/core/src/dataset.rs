//! Equalizer training corpus: symbol windows expanded into single-precision
//! bit tokens.
//!
//! A window of half-width `n` around symbol `t` becomes the token sequence
//! `[I(t-n), Q(t-n), ..., I(t), Q(t), ..., I(t+n), Q(t+n)]` (time-major, I
//! before Q). Each token is the 32-bit IEEE-754 single-precision encoding of
//! the value, emitted MSB first as 0.0/1.0 features.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::txrx::SymbolFrame;
use crate::{Error, Result};

pub const FEATURES_PER_TOKEN: usize = 32;

/// [`TokenDataset::polarization`] tag of a two-polarization dataset.
pub const BOTH_POLARIZATIONS: u8 = 2;
const MAGIC: &[u8; 4] = b"FLDS";
const VERSION: u32 = 1;

/// Single-precision bit pattern of `x` (rounded to nearest).
pub fn float_to_word(x: f64) -> Result<u32> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("cannot encode non-finite value {x}")));
    }
    Ok((x as f32).to_bits())
}

/// The 32 bits of `x` as binary32, MSB (sign) first.
pub fn float_to_bits(x: f64) -> Result<[f64; FEATURES_PER_TOKEN]> {
    Ok(word_to_features(float_to_word(x)?))
}

pub fn word_to_features(word: u32) -> [f64; FEATURES_PER_TOKEN] {
    std::array::from_fn(|i| ((word >> (31 - i)) & 1) as f64)
}

/// Reassembles a token into the single-precision value it encodes.
pub fn bits_to_float(bits: &[f64; FEATURES_PER_TOKEN]) -> f32 {
    let word = bits
        .iter()
        .fold(0u32, |acc, &b| (acc << 1) | u32::from(b != 0.0));
    f32::from_bits(word)
}

pub fn tokens_per_sequence(n: usize) -> usize {
    2 * (2 * n + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub n: usize,
    /// Raw binary32 words, one per token.
    pub words: Vec<u32>,
    pub target: [f64; 2],
}

impl TokenSequence {
    /// Row-major `[tokens, 32]` feature matrix.
    pub fn features(&self) -> Vec<f64> {
        self.words.iter().flat_map(|&w| word_to_features(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    pub n: usize,
    /// Concatenated token words, `tokens_per_sequence(n)` per sequence.
    pub words: Vec<u32>,
    pub targets: Vec<[f64; 2]>,
    pub source_seed: u64,
    /// Source polarization: 0 for x, 1 for y, [`BOTH_POLARIZATIONS`] for a
    /// concatenation of the two.
    pub polarization: u8,
    /// Factor applied to the received symbols before encoding.
    pub normalization: f64,
}

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn tokens_per_sequence(&self) -> usize {
        tokens_per_sequence(self.n)
    }

    pub fn sequence(&self, i: usize) -> TokenSequence {
        let t = self.tokens_per_sequence();
        TokenSequence {
            n: self.n,
            words: self.words[i * t..(i + 1) * t].to_vec(),
            target: self.targets[i],
        }
    }

    /// Writes the features of sequence `i` into `out` (`t * 32` values).
    pub fn write_features(&self, i: usize, out: &mut [f64]) {
        let t = self.tokens_per_sequence();
        for (k, &w) in self.words[i * t..(i + 1) * t].iter().enumerate() {
            out[k * FEATURES_PER_TOKEN..(k + 1) * FEATURES_PER_TOKEN]
                .copy_from_slice(&word_to_features(w));
        }
    }

    /// Appends the sequences of `other`, which must share the window
    /// half-width and normalization.
    pub fn extend(&mut self, other: &TokenDataset) -> Result<()> {
        if other.n != self.n || other.normalization != self.normalization {
            return Err(Error::invalid(format!(
                "cannot join datasets with (n, normalization) = ({}, {}) and ({}, {})",
                self.n, self.normalization, other.n, other.normalization
            )));
        }
        self.words.extend_from_slice(&other.words);
        self.targets.extend_from_slice(&other.targets);
        if other.polarization != self.polarization {
            self.polarization = BOTH_POLARIZATIONS;
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> TokenDataset {
        let t = self.tokens_per_sequence();
        let mut words = Vec::with_capacity(idx.len() * t);
        let mut targets = Vec::with_capacity(idx.len());
        for &i in idx {
            words.extend_from_slice(&self.words[i * t..(i + 1) * t]);
            targets.push(self.targets[i]);
        }
        TokenDataset {
            words,
            targets,
            ..*self
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.words.len() * 4 + self.targets.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.source_seed.to_le_bytes());
        out.push(self.polarization);
        out.extend_from_slice(&self.normalization.to_le_bytes());
        let t = self.tokens_per_sequence();
        for (i, target) in self.targets.iter().enumerate() {
            for w in &self.words[i * t..(i + 1) * t] {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&target[0].to_le_bytes());
            out.extend_from_slice(&target[1].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            what: "dataset",
            detail: detail.to_string(),
        };
        let mut take = |k: usize| -> Result<&[u8]> {
            if bytes.len() < k {
                return Err(bad("truncated"));
            }
            let (head, tail) = bytes.split_at(k);
            bytes = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let source_seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let polarization = take(1)?[0];
        let normalization = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let t = tokens_per_sequence(n);
        let mut words = Vec::with_capacity(count * t);
        let mut targets = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..t {
                words.push(u32::from_le_bytes(take(4)?.try_into().unwrap()));
            }
            let i = f64::from_le_bytes(take(8)?.try_into().unwrap());
            let q = f64::from_le_bytes(take(8)?.try_into().unwrap());
            targets.push([i, q]);
        }
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            n,
            words,
            targets,
            source_seed,
            polarization,
            normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Tab-separated dump: target I/Q followed by the decoded token values.
    pub fn to_text(&self) -> String {
        let t = self.tokens_per_sequence();
        let mut s = String::from("index\ttarget_i\ttarget_q");
        for k in 0..t {
            s.push_str(&format!("\ttoken_{k}"));
        }
        s.push('\n');
        for (i, target) in self.targets.iter().enumerate() {
            s.push_str(&format!("{i}\t{}\t{}", target[0], target[1]));
            for w in &self.words[i * t..(i + 1) * t] {
                s.push_str(&format!("\t{}", f32::from_bits(*w)));
            }
            s.push('\n');
        }
        s
    }

    /// FNV-1a over the serialized bytes.
    pub fn content_hash(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Builds one sequence per symbol `t` in `n..L-n`.
///
/// `rx` is scaled by `normalization` when given, otherwise by the factor
/// that brings it to unit mean power; the factor used is recorded. Targets
/// are the transmitted symbols, taken as-is.
pub fn build_windows(
    rx: &SymbolFrame,
    tx: &SymbolFrame,
    n: usize,
    normalization: Option<f64>,
) -> Result<TokenDataset> {
    if rx.len() != tx.len() {
        return Err(Error::invalid(format!(
            "received and transmitted frames differ in length ({} vs {})",
            rx.len(),
            tx.len()
        )));
    }
    let len = rx.len();
    if len <= 2 * n {
        return Err(Error::invalid(format!(
            "frame of {len} symbols too short for window half-width {n}"
        )));
    }
    let scale = match normalization {
        Some(s) => s,
        None => {
            let p = rx.mean_power();
            if p > 0.0 {
                1.0 / p.sqrt()
            } else {
                1.0
            }
        }
    };
    let per_symbol: Vec<[u32; 2]> = rx
        .symbols
        .iter()
        .map(|s| Ok([float_to_word(s.re * scale)?, float_to_word(s.im * scale)?]))
        .collect::<Result<_>>()?;
    let count = len - 2 * n;
    let mut words = Vec::with_capacity(count * tokens_per_sequence(n));
    let mut targets = Vec::with_capacity(count);
    for t in n..len - n {
        for pair in &per_symbol[t - n..=t + n] {
            words.extend_from_slice(pair);
        }
        targets.push([tx.symbols[t].re, tx.symbols[t].im]);
    }
    Ok(TokenDataset {
        n,
        words,
        targets,
        source_seed: 0,
        polarization: 0,
        normalization: scale,
    })
}

/// Deterministic shuffled split; the first part holds
/// `round(fraction * len)` sequences.
pub fn split_shuffle(
    ds: &TokenDataset,
    seed: u64,
    fraction: f64,
) -> Result<(TokenDataset, TokenDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let cut = (fraction * ds.len() as f64).round() as usize;
    Ok((ds.subset(&idx[..cut]), ds.subset(&idx[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txrx::{prbs_generate, qam16_map};
    use crate::C64;

    fn frame(seed: u64, n: usize) -> SymbolFrame {
        qam16_map(&prbs_generate(seed, 4 * n).unwrap()).unwrap()
    }

    #[test]
    fn fixed_encodings() {
        assert!(float_to_bits(0.0).unwrap().iter().all(|&b| b == 0.0));
        let one = float_to_bits(1.0).unwrap();
        let mut want = [0.0; 32];
        for b in &mut want[2..9] {
            *b = 1.0;
        }
        assert_eq!(one, want);
        assert_eq!(float_to_word(1.0).unwrap(), 0x3F80_0000);
        let m2 = float_to_bits(-2.0).unwrap();
        assert_eq!(m2[0], 1.0);
        assert_eq!(&m2[1..9], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(m2[9..].iter().all(|&b| b == 0.0));
        assert!(float_to_bits(f64::NAN).is_err());
        assert!(float_to_bits(f64::INFINITY).is_err());
    }

    #[test]
    fn window_shapes() {
        let tx = frame(1, 100);
        let ds = build_windows(&tx, &tx, 2, None).unwrap();
        assert_eq!(ds.len(), 96);
        assert_eq!(ds.sequence(0).words.len(), 10);
        assert_eq!(ds.sequence(0).features().len(), 320);
        let ds0 = build_windows(&tx, &tx, 0, None).unwrap();
        assert_eq!(ds0.len(), 100);
        assert_eq!(ds0.tokens_per_sequence(), 2);
        assert!(build_windows(&tx, &tx, 50, None).is_err());
        let short = frame(1, 99);
        assert!(build_windows(&short, &tx, 2, None).is_err());
    }

    #[test]
    fn window_center_matches_target() {
        let tx = frame(2, 64);
        let rx = SymbolFrame::new(tx.symbols.iter().map(|s| s * C64::new(0.9, 0.1)).collect());
        let n = 3;
        let ds = build_windows(&rx, &tx, n, None).unwrap();
        for i in 0..ds.len() {
            let seq = ds.sequence(i);
            let t = i + n;
            let re = f32::from_bits(seq.words[2 * n]) as f64;
            let im = f32::from_bits(seq.words[2 * n + 1]) as f64;
            let want = rx.symbols[t] * ds.normalization;
            assert_eq!(re, (want.re as f32) as f64);
            assert_eq!(im, (want.im as f32) as f64);
            assert_eq!(seq.target, [tx.symbols[t].re, tx.symbols[t].im]);
        }
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let tx = frame(3, 1004);
        let ds = build_windows(&tx, &tx, 2, None).unwrap();
        assert_eq!(ds.len(), 1000);
        let (a, b) = split_shuffle(&ds, 5, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (800, 200));
        let (a2, b2) = split_shuffle(&ds, 5, 0.8).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let key = |d: &TokenDataset, i: usize| (d.sequence(i).words, d.targets[i].map(f64::to_bits));
        let mut all: Vec<_> = (0..a.len()).map(|i| key(&a, i)).chain((0..b.len()).map(|i| key(&b, i))).collect();
        let mut orig: Vec<_> = (0..ds.len()).map(|i| key(&ds, i)).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert!(split_shuffle(&ds, 5, 1.0).is_err());
        assert!(split_shuffle(&ds, 5, 0.0).is_err());
    }

    #[test]
    fn binary_and_text_formats() {
        let tx = frame(4, 40);
        let mut ds = build_windows(&tx, &tx, 1, None).unwrap();
        ds.source_seed = 99;
        ds.polarization = 1;
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[..4], b"FLDS");
        let back = TokenDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert!(TokenDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let text = ds.to_text();
        assert_eq!(text.lines().count(), ds.len() + 1);
        assert!(text.starts_with("index\ttarget_i\ttarget_q\ttoken_0"));
        assert_eq!(build_windows(&tx, &tx, 1, None).unwrap().content_hash(), {
            let mut d = build_windows(&tx, &tx, 1, None).unwrap();
            d.source_seed = 0;
            d.content_hash()
        });
    }

    proptest::proptest! {
        #[test]
        fn bits_round_trip_to_single_precision(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let bits = float_to_bits(x).unwrap();
            proptest::prop_assert!(bits.iter().all(|&b| b == 0.0 || b == 1.0));
            let back = bits_to_float(&bits);
            proptest::prop_assert_eq!(back.to_bits(), (x as f32).to_bits());
        }
    }
}
