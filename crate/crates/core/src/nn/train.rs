use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{Checkpoint, TrainingMeta};
use super::graph::{Graph, Mode};
use super::model::{Architecture, Model};
use super::tensor::Tensor;
use crate::dataset::{build_windows, TokenDataset, FEATURES_PER_TOKEN};
use crate::txrx::SymbolFrame;
use crate::{derive_seed, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Rows per forward/backward pass. Gradients of the chunks making up one
    /// minibatch are summed before the optimiser step, which bounds memory
    /// without changing the update.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            adam: AdamConfig::default(),
            epochs: 100,
            seed: 0,
            chunk_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size, chunk_size and epochs must be positive"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.adam.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest training loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<f64>,
}

/// Trains a freshly initialised `arch` on `ds`.
///
/// Seeds for initialisation, shuffling and dropout are all derived from
/// `cfg.seed`. `on_epoch` is called with the epoch index and its mean
/// training loss.
pub fn train(
    arch: Architecture,
    ds: &TokenDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let dim = ds.tokens_per_sequence() * FEATURES_PER_TOKEN;
    if dim != arch.input_dim() || arch.output_dim() != 2 {
        return Err(Error::invalid(format!(
            "dataset provides {dim} features per sequence but the {} expects {}",
            arch.name(),
            arch.input_dim()
        )));
    }
    let mut model = Model::init(arch, derive_seed(cfg.seed, 0))?;
    let mut opt = Adam::new(cfg.adam, &model.tensors)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut feat = Vec::new();
    let mut targets = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + 2 * epoch as u64));
        order.shuffle(&mut rng);
        let dropout_base = derive_seed(cfg.seed, 2 + 2 * epoch as u64);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = model.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            for (c, chunk) in batch.chunks(cfg.chunk_size).enumerate() {
                let m = chunk.len();
                feat.resize(m * dim, 0.0);
                targets.clear();
                for (row, &i) in chunk.iter().enumerate() {
                    ds.write_features(i, &mut feat[row * dim..(row + 1) * dim]);
                    targets.extend_from_slice(&ds.targets[i]);
                }
                let mut g = Graph::new();
                let params = model.bind(&mut g, true);
                let x = g.constant(Tensor::new(vec![m, dim], feat.clone())?);
                let y = g.constant(Tensor::new(vec![m, 2], targets.clone())?);
                let seed = derive_seed(dropout_base, ((b as u64) << 20) | c as u64);
                let pred = model.forward(&mut g, &params, x, Mode::Train, seed)?;
                let loss = g.mse_loss(pred, y)?;
                let weight = m as f64 / batch.len() as f64;
                let scaled = g.scale(loss, weight);
                g.backward(scaled)?;
                loss_sum += g.value(loss).data[0] * m as f64;
                for (acc, p) in grads.iter_mut().zip(&params) {
                    if let Some(gr) = g.grad(*p) {
                        for (a, v) in acc.iter_mut().zip(gr) {
                            *a += v;
                        }
                    }
                }
            }
            opt.step(&mut model.tensors, &grads)?;
        }
        let epoch_loss = loss_sum / ds.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.push(epoch_loss);
        on_epoch(epoch, epoch_loss);
        if best.as_ref().is_none_or(|(l, _, _)| epoch_loss < *l) {
            best = Some((epoch_loss, epoch, model.tensors.clone()));
        }
    }

    let (best_loss, best_epoch, tensors) = best.expect("at least one epoch ran");
    model.tensors = tensors;
    let meta = TrainingMeta {
        epochs_run: cfg.epochs as u32,
        best_epoch: best_epoch as u32,
        final_loss: *history.last().unwrap(),
        best_loss,
        train_seed: cfg.seed,
        dataset_hash: ds.content_hash(),
        window_n: ds.n as u32,
        normalization: ds.normalization,
        loss_history: history.clone(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, meta },
        history,
    })
}

/// Mean squared error of `model` over `ds` in evaluation mode.
pub fn evaluate_mse(model: &Model, ds: &TokenDataset) -> Result<f64> {
    let dim = model.arch.input_dim();
    let mut feat = vec![0.0; ds.len() * dim];
    for i in 0..ds.len() {
        ds.write_features(i, &mut feat[i * dim..(i + 1) * dim]);
    }
    let pred = model.predict(&feat, ds.len())?;
    let sum: f64 = pred
        .iter()
        .zip(&ds.targets)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok(sum / (2 * ds.len()) as f64)
}

/// Applies a trained model to every symbol that has a full window of `n`
/// neighbours on each side. The first and last `n` symbols are copied
/// unchanged.
pub fn equalize(model: &Model, rx: &SymbolFrame, n: usize, normalization: f64) -> Result<SymbolFrame> {
    let windows = build_windows(rx, rx, n, Some(normalization))?;
    let dim = windows.tokens_per_sequence() * FEATURES_PER_TOKEN;
    if dim != model.arch.input_dim() {
        return Err(Error::invalid(format!(
            "window half-width {n} gives {dim} features but the model expects {}",
            model.arch.input_dim()
        )));
    }
    let mut feat = vec![0.0; windows.len() * dim];
    for i in 0..windows.len() {
        windows.write_features(i, &mut feat[i * dim..(i + 1) * dim]);
    }
    let pred = model.predict(&feat, windows.len())?;
    let mut symbols = rx.symbols.clone();
    for (s, p) in symbols[n..rx.len() - n].iter_mut().zip(pred) {
        *s = C64::new(p[0], p[1]);
    }
    Ok(SymbolFrame {
        symbols,
        modulation: rx.modulation,
    })
}
