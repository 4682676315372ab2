//! Helpers shared by several integration-test targets.
#![allow(dead_code)]

use fiberlab::nn::gradcheck::{check_gradients, GradCheckReport};
use fiberlab::nn::{
    multi_head_attention, Architecture, AttentionVars, FcnnConfig, Graph, Mode, Model, Tensor,
    TransformerConfig, Var,
};
use fiberlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub type Named = (String, GradCheckReport);

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts a tensor with fixed random weights so every output element
/// contributes a distinct amount to the scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(random(&g.shape(y).to_vec(), seed ^ 0xabc));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op(name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Named {
    let r = check_gradients(inputs, |g, v| f(g, v).and_then(|y| project(g, y, 7)), GRAD_H, 64, 1).unwrap();
    (name.to_string(), r)
}

pub fn elementwise_ops() -> Vec<Named> {
    let a = random(&[5, 7], 1);
    let b = random(&[5, 7], 2);
    let row = random(&[7], 3);
    vec![
        op("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1])),
        op("mul", &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1])),
        op("scale", &[a.clone()], |g, v| Ok(g.scale(v[0], -1.7))),
        op("add_row", &[a.clone(), row.clone()], |g, v| g.add_row(v[0], v[1])),
        op("mul_row", &[a.clone(), row], |g, v| g.mul_row(v[0], v[1])),
        op("relu", &[a.clone()], |g, v| Ok(g.relu(v[0]))),
        op("sum", &[a.clone()], |g, v| Ok(g.sum(v[0]))),
        op("reshape", &[a.clone()], |g, v| g.reshape(v[0], &[7, 5])),
        op("mse_loss", &[a, b], |g, v| g.mse_loss(v[0], v[1])),
    ]
}

pub fn matrix_ops() -> Vec<Named> {
    let a = random(&[5, 7], 4);
    let b = random(&[7, 3], 5);
    let bias = random(&[3], 6);
    let x = random(&[2, 5, 7], 7);
    let y = random(&[2, 7, 4], 8);
    let yt = random(&[2, 4, 7], 9);
    vec![
        op("matmul", &[a.clone(), b.clone()], |g, v| g.matmul(v[0], v[1])),
        op("linear", &[a, b, bias], |g, v| g.linear(v[0], v[1], v[2])),
        op("batch_matmul", &[x.clone(), y], |g, v| g.batch_matmul(v[0], v[1], false)),
        op("batch_matmul_t", &[x.clone(), yt], |g, v| g.batch_matmul(v[0], v[1], true)),
        op("permute", &[x], |g, v| g.permute(v[0], &[1, 2, 0])),
    ]
}

pub fn normalisation_ops() -> Vec<Named> {
    let a = random(&[5, 7], 10);
    let mut out = Vec::new();
    for axis in 0..2 {
        out.push(op(&format!("softmax(axis={axis})"), &[a.clone()], |g, v| g.softmax(v[0], axis)));
        out.push(op(&format!("layer_norm(axis={axis})"), &[a.clone()], |g, v| {
            g.layer_norm(v[0], axis, 1e-5)
        }));
    }
    out.push(op("dropout(train)", &[a.clone()], |g, v| g.dropout(v[0], 0.3, 11, Mode::Train)));
    out.push(op("dropout(eval)", &[a], |g, v| g.dropout(v[0], 0.3, 11, Mode::Eval)));
    out
}

pub fn attention_layer() -> Named {
    let mut inputs = vec![random(&[10, 32], 20)];
    for k in 0..4 {
        inputs.push(random(&[32, 32], 21 + k).scaled(0.3));
        inputs.push(random(&[32], 31 + k));
    }
    op("multi_head_attention", &inputs, |g, v| {
        let w = AttentionVars {
            wq: v[1],
            bq: v[2],
            wk: v[3],
            bk: v[4],
            wv: v[5],
            bv: v[6],
            wo: v[7],
            bo: v[8],
        };
        Ok(multi_head_attention(g, v[0], 1, 10, 8, &w)?.0)
    })
}

/// Whole-model check on a batch of two random bit vectors, every parameter
/// tensor and the input probed.
pub fn model_check(name: &str, model: &Model, mode: Mode) -> Named {
    let batch = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let x = Tensor::from_fn(&[batch, model.arch.input_dim()], |_| f64::from(rng.random_bool(0.5) as u8));
    let y = random(&[batch, 2], 41);
    let mut inputs = model.tensors.clone();
    inputs.push(x);
    let n = model.tensors.len();
    let r = check_gradients(
        &inputs,
        |g, v| {
            let target = g.constant(y.clone());
            let pred = model.forward(g, &v[..n], v[n], mode, 99)?;
            g.mse_loss(pred, target)
        },
        GRAD_H,
        48,
        2,
    )
    .unwrap();
    (name.to_string(), r)
}

pub fn models() -> Vec<Named> {
    let f = Model::init(Architecture::Fcnn(FcnnConfig::default()), 3).unwrap();
    let t = Model::init(Architecture::Transformer(TransformerConfig::default()), 3).unwrap();
    vec![
        model_check("fcnn", &f, Mode::Eval),
        model_check("transformer(eval)", &t, Mode::Eval),
        model_check("transformer(train)", &t, Mode::Train),
    ]
}

/// A probe set passes when the error is within tolerance and ReLU kinks did
/// not swallow a quarter or more of the probes.
pub fn grad_ok(r: &GradCheckReport) -> bool {
    r.max_rel_error < GRAD_TOL && r.skipped_kinks * 4 < r.probed
}
