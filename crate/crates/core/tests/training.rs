//! Training-loop behaviour on small synthetic tasks with known solutions.

use fiberlab::dataset::build_windows;
use fiberlab::metrics::{evm, mean_distance_to_grid};
use fiberlab::nn::{equalize, evaluate_mse, train, AdamConfig, Architecture, FcnnConfig, TrainConfig};
use fiberlab::txrx::{random_symbols, SymbolFrame};
use fiberlab::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fcnn() -> Architecture {
    Architecture::Fcnn(FcnnConfig::default())
}

fn small_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        epochs,
        seed,
        adam: AdamConfig::default(),
        ..Default::default()
    }
}

#[test]
fn fcnn_learns_to_decode_the_first_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rx = random_symbols(2004, &mut rng);
    let mut ds = build_windows(&rx, &rx, 2, Some(1.0)).unwrap();
    // Target: the float pair encoded by the first two tokens.
    for (i, t) in ds.targets.iter_mut().enumerate() {
        let s = rx.symbols[i];
        *t = [f64::from(s.re as f32), f64::from(s.im as f32)];
    }
    let out = train(fcnn(), &ds, &small_cfg(50, 3), |_, _| {}).unwrap();
    let mse = evaluate_mse(&out.checkpoint.model, &ds).unwrap();
    println!("identity task: final training loss {:.3e}, eval MSE {mse:.3e}", out.history[49]);
    assert!(mse < 1e-3, "{mse}");
    assert_eq!(out.history.len(), 50);
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tx = random_symbols(300, &mut rng);
    let ds = build_windows(&tx, &tx, 2, None).unwrap();
    let a = train(fcnn(), &ds, &small_cfg(3, 11), |_, _| {}).unwrap();
    let b = train(fcnn(), &ds, &small_cfg(3, 11), |_, _| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let c = train(fcnn(), &ds, &small_cfg(3, 12), |_, _| {}).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
}

#[test]
fn best_epoch_is_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tx = random_symbols(300, &mut rng);
    let ds = build_windows(&tx, &tx, 2, None).unwrap();
    let out = train(fcnn(), &ds, &small_cfg(6, 5), |_, _| {}).unwrap();
    let meta = &out.checkpoint.meta;
    let min = out.history.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(meta.best_loss, min);
    assert_eq!(out.history[meta.best_epoch as usize], min);
    assert_eq!(meta.dataset_hash, ds.content_hash());
    assert_eq!(meta.loss_history, out.history);
}

/// Static three-tap intersymbol interference plus mild noise.
fn isi_channel(tx: &SymbolFrame, seed: u64) -> SymbolFrame {
    let taps = [C64::new(0.15, 0.05), C64::new(1.0, 0.0), C64::new(-0.2, 0.1)];
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tx.len();
    let symbols = (0..n)
        .map(|k| {
            let mut y = C64::new(noise.sample(&mut rng), noise.sample(&mut rng));
            for (j, t) in taps.iter().enumerate() {
                y += t * tx.symbols[(k + n + 1 - j) % n];
            }
            y
        })
        .collect();
    SymbolFrame::new(symbols)
}

#[test]
fn equalizer_reduces_evm_and_squeezes_constellation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tx_train = random_symbols(20000, &mut rng);
    let tx_test = random_symbols(2000, &mut rng);
    let rx_train = isi_channel(&tx_train, 8);
    let rx_test = isi_channel(&tx_test, 9);
    let ds = build_windows(&rx_train, &tx_train, 2, None).unwrap();
    let out = train(fcnn(), &ds, &small_cfg(30, 10), |_, _| {}).unwrap();
    let norm = ds.normalization;
    let eq = equalize(&out.checkpoint.model, &rx_test, 2, norm).unwrap();
    assert_eq!(eq.len(), rx_test.len());
    assert_eq!(eq.symbols[..2], rx_test.symbols[..2]);

    let inner = 2..rx_test.len() - 2;
    let scaled: Vec<C64> = rx_test.symbols[inner.clone()].iter().map(|s| s * norm).collect();
    let before = evm(&scaled, &tx_test.symbols[inner.clone()]).unwrap();
    let after = evm(&eq.symbols[inner.clone()], &tx_test.symbols[inner.clone()]).unwrap();
    let d_before = mean_distance_to_grid(&scaled);
    let d_after = mean_distance_to_grid(&eq.symbols[inner]);
    println!("EVM {before:.2}% -> {after:.2}%, grid distance {d_before:.4} -> {d_after:.4}");
    assert!(after < before);
    assert!(d_after < d_before);
}

#[test]
fn mismatched_window_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tx = random_symbols(100, &mut rng);
    let ds = build_windows(&tx, &tx, 3, None).unwrap();
    assert!(train(fcnn(), &ds, &small_cfg(1, 0), |_, _| {}).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    let ds2 = build_windows(&tx, &tx, 2, None).unwrap();
    assert!(train(fcnn(), &ds2, &bad, |_, _| {}).is_err());
}
