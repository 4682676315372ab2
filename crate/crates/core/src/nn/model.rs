//! Encoder-only Transformer and fully-connected equalizer models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::tensor::Tensor;
use crate::dataset::FEATURES_PER_TOKEN;
use crate::{derive_seed, Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub d_out: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            seq_len: 10,
            d_model: FEATURES_PER_TOKEN,
            n_heads: 8,
            n_layers: 1,
            d_ff: 1024,
            dropout: 0.1,
            d_out: 2,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.seq_len, self.d_model, self.n_heads, self.n_layers, self.d_ff, self.d_out];
        if positive.contains(&0) {
            return Err(Error::invalid("transformer dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::invalid("positional encoding needs an even d_model"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.seq_len * self.d_model
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcnnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        Self {
            input_dim: 10 * FEATURES_PER_TOKEN,
            hidden: 100,
            d_out: 2,
        }
    }
}

impl FcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::invalid("fcnn dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Architecture {
    Transformer(TransformerConfig),
    Fcnn(FcnnConfig),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Transformer(_) => "transformer",
            Architecture::Fcnn(_) => "fcnn",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Transformer(c) => c.input_dim(),
            Architecture::Fcnn(c) => c.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Transformer(c) => c.d_out,
            Architecture::Fcnn(c) => c.d_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Transformer(c) => c.validate(),
            Architecture::Fcnn(c) => c.validate(),
        }
    }

    /// Names and shapes of all trainable tensors, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        match self {
            Architecture::Fcnn(c) => {
                out.push(("hidden.w".into(), vec![c.input_dim, c.hidden]));
                out.push(("hidden.b".into(), vec![c.hidden]));
                out.push(("out.w".into(), vec![c.hidden, c.d_out]));
                out.push(("out.b".into(), vec![c.d_out]));
            }
            Architecture::Transformer(c) => {
                let d = c.d_model;
                for l in 0..c.n_layers {
                    for p in ["q", "k", "v", "o"] {
                        out.push((format!("enc{l}.attn.w{p}"), vec![d, d]));
                        out.push((format!("enc{l}.attn.b{p}"), vec![d]));
                    }
                    out.push((format!("enc{l}.ln1.gamma"), vec![d]));
                    out.push((format!("enc{l}.ln1.beta"), vec![d]));
                    out.push((format!("enc{l}.ff1.w"), vec![d, c.d_ff]));
                    out.push((format!("enc{l}.ff1.b"), vec![c.d_ff]));
                    out.push((format!("enc{l}.ff2.w"), vec![c.d_ff, d]));
                    out.push((format!("enc{l}.ff2.b"), vec![d]));
                    out.push((format!("enc{l}.ln2.gamma"), vec![d]));
                    out.push((format!("enc{l}.ln2.beta"), vec![d]));
                }
                out.push(("head.w".into(), vec![c.input_dim(), c.d_out]));
                out.push(("head.b".into(), vec![c.d_out]));
            }
        }
        out
    }
}

/// Sinusoidal position table of shape `[seq_len, d_model]`.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::invalid(format!("positional encoding needs even d_model, got {d_model}")));
    }
    Ok(Tensor::from_fn(&[seq_len, d_model], |idx| {
        let (pos, j) = (idx / d_model, idx % d_model);
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Graph handles for one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Unmasked multi-head self-attention over `x: [batch * seq, d]`.
///
/// Returns the projected output and the attention weights
/// `[batch * heads, seq, seq]`.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    batch: usize,
    seq: usize,
    n_heads: usize,
    w: &AttentionVars,
) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != batch * seq || n_heads == 0 || shape[1] % n_heads != 0 {
        return Err(Error::Shape {
            op: "multi_head_attention",
            lhs: shape,
            rhs: vec![batch, seq, n_heads],
        });
    }
    let d = shape[1];
    let dh = d / n_heads;
    let split = |g: &mut Graph, v: Var| -> Result<Var> {
        let v = g.reshape(v, &[batch, seq, n_heads, dh])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        g.reshape(v, &[batch * n_heads, seq, dh])
    };
    let q = g.linear(x, w.wq, w.bq)?;
    let q = split(g, q)?;
    let k = g.linear(x, w.wk, w.bk)?;
    let k = split(g, k)?;
    let v = g.linear(x, w.wv, w.bv)?;
    let v = split(g, v)?;
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax(scores, 2)?;
    let ctx = g.batch_matmul(attn, v, false)?;
    let ctx = g.reshape(ctx, &[batch, n_heads, seq, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[batch * seq, d])?;
    let out = g.linear(ctx, w.wo, w.bo)?;
    Ok((out, attn))
}

/// Trainable weights plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Model {
    /// Uniform fan-in initialisation: weights and biases of a layer with
    /// fan-in `k` are drawn from `U(-1/sqrt(k), 1/sqrt(k))`; layer-norm
    /// scales start at one and shifts at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut fan_in = 1usize;
        for (name, shape) in arch.parameter_layout() {
            let t = if name.ends_with(".gamma") {
                Tensor::filled(&shape, 1.0)
            } else if name.ends_with(".beta") {
                Tensor::zeros(&shape)
            } else {
                if shape.len() == 2 {
                    fan_in = shape[0];
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { arch, names, tensors })
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Places the weights on `g`, as gradient-receiving leaves when
    /// `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Forward pass for `input: [batch, input_dim]`, returning `[batch, d_out]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        input: Var,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        if shape.len() != 2 || shape[1] != self.arch.input_dim() {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: shape,
                rhs: vec![self.arch.input_dim()],
            });
        }
        let batch = shape[0];
        match self.arch {
            Architecture::Fcnn(_) => {
                let h = g.linear(input, params[0], params[1])?;
                let h = g.relu(h);
                g.linear(h, params[2], params[3])
            }
            Architecture::Transformer(c) => {
                let pe = positional_encoding(c.seq_len, c.d_model)?;
                let tiled = Tensor::from_fn(&[batch * c.seq_len, c.d_model], |i| {
                    pe.data[i % pe.len()]
                });
                let pe = g.constant(tiled);
                let x = g.reshape(input, &[batch * c.seq_len, c.d_model])?;
                let mut x = g.add(x, pe)?;
                let mut p = params.iter().copied();
                let mut next = || p.next().expect("parameter layout matches architecture");
                for l in 0..c.n_layers as u64 {
                    let w = AttentionVars {
                        wq: next(),
                        bq: next(),
                        wk: next(),
                        bk: next(),
                        wv: next(),
                        bv: next(),
                        wo: next(),
                        bo: next(),
                    };
                    let (ln1_g, ln1_b) = (next(), next());
                    let (ff1_w, ff1_b, ff2_w, ff2_b) = (next(), next(), next(), next());
                    let (ln2_g, ln2_b) = (next(), next());

                    let (a, _) = multi_head_attention(g, x, batch, c.seq_len, c.n_heads, &w)?;
                    let a = g.dropout(a, c.dropout, derive_seed(dropout_seed, 2 * l), mode)?;
                    let h = g.add(x, a)?;
                    let h = affine_norm(g, h, ln1_g, ln1_b)?;

                    let f = g.linear(h, ff1_w, ff1_b)?;
                    let f = g.relu(f);
                    let f = g.linear(f, ff2_w, ff2_b)?;
                    let f = g.dropout(f, c.dropout, derive_seed(dropout_seed, 2 * l + 1), mode)?;
                    let h2 = g.add(h, f)?;
                    x = affine_norm(g, h2, ln2_g, ln2_b)?;
                }
                let flat = g.reshape(x, &[batch, c.input_dim()])?;
                let (hw, hb) = (next(), next());
                g.linear(flat, hw, hb)
            }
        }
    }

    /// Evaluation-mode predictions for `n` row-major input vectors.
    pub fn predict(&self, features: &[f64], n: usize) -> Result<Vec<[f64; 2]>> {
        const CHUNK: usize = 256;
        let dim = self.arch.input_dim();
        if features.len() != n * dim {
            return Err(Error::Shape {
                op: "predict",
                lhs: vec![features.len()],
                rhs: vec![n, dim],
            });
        }
        if self.arch.output_dim() != 2 {
            return Err(Error::invalid("predict expects a two-output model"));
        }
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - start);
            let mut g = Graph::new();
            let params = self.bind(&mut g, false);
            let x = g.constant(Tensor::new(vec![m, dim], features[start * dim..(start + m) * dim].to_vec())?);
            let y = self.forward(&mut g, &params, x, Mode::Eval, 0)?;
            out.extend(g.value(y).data.chunks_exact(2).map(|r| [r[0], r[1]]));
        }
        Ok(out)
    }
}

fn affine_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = g.layer_norm(x, 1, LAYER_NORM_EPS)?;
    let n = g.mul_row(n, gamma)?;
    g.add_row(n, beta)
}
