//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      b"FLCK"
//! version    u32 (currently 1)
//! arch tag   u8  (1 = transformer, 2 = fcnn)
//! config     transformer: seq_len, d_model, n_heads, n_layers, d_ff, d_out as u64, dropout f64
//!            fcnn:        input_dim, hidden, d_out as u64
//! metadata   epochs_run u32, best_epoch u32, final_loss f64, best_loss f64,
//!            train_seed u64, dataset_hash u64, window_n u32, normalization f64,
//!            history_len u32, history f64 * history_len
//! tensors    count u32, then per tensor:
//!            name_len u32, name (UTF-8), rank u32, dims u64 * rank, values f64 * prod(dims)
//! ```

use std::path::Path;

use super::model::{Architecture, FcnnConfig, Model, TransformerConfig};
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub epochs_run: u32,
    pub best_epoch: u32,
    pub final_loss: f64,
    pub best_loss: f64,
    pub train_seed: u64,
    pub dataset_hash: u64,
    pub window_n: u32,
    pub normalization: f64,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format {
                what: "checkpoint",
                detail: "unexpected end of data".into(),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("dimension overflows usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        match self.model.arch {
            Architecture::Transformer(c) => {
                b.push(1);
                for v in [c.seq_len, c.d_model, c.n_heads, c.n_layers, c.d_ff, c.d_out] {
                    b.extend_from_slice(&(v as u64).to_le_bytes());
                }
                b.extend_from_slice(&c.dropout.to_le_bytes());
            }
            Architecture::Fcnn(c) => {
                b.push(2);
                for v in [c.input_dim, c.hidden, c.d_out] {
                    b.extend_from_slice(&(v as u64).to_le_bytes());
                }
            }
        }
        let m = &self.meta;
        b.extend_from_slice(&m.epochs_run.to_le_bytes());
        b.extend_from_slice(&m.best_epoch.to_le_bytes());
        b.extend_from_slice(&m.final_loss.to_le_bytes());
        b.extend_from_slice(&m.best_loss.to_le_bytes());
        b.extend_from_slice(&m.train_seed.to_le_bytes());
        b.extend_from_slice(&m.dataset_hash.to_le_bytes());
        b.extend_from_slice(&m.window_n.to_le_bytes());
        b.extend_from_slice(&m.normalization.to_le_bytes());
        b.extend_from_slice(&(m.loss_history.len() as u32).to_le_bytes());
        for l in &m.loss_history {
            b.extend_from_slice(&l.to_le_bytes());
        }
        b.extend_from_slice(&(self.model.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.model.names.iter().zip(&self.model.tensors) {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in &t.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let arch = match r.u8()? {
            1 => {
                let mut d = [0usize; 6];
                for v in &mut d {
                    *v = r.usize()?;
                }
                Architecture::Transformer(TransformerConfig {
                    seq_len: d[0],
                    d_model: d[1],
                    n_heads: d[2],
                    n_layers: d[3],
                    d_ff: d[4],
                    d_out: d[5],
                    dropout: r.f64()?,
                })
            }
            2 => Architecture::Fcnn(FcnnConfig {
                input_dim: r.usize()?,
                hidden: r.usize()?,
                d_out: r.usize()?,
            }),
            t => return Err(bad(format!("unknown architecture tag {t}"))),
        };
        arch.validate().map_err(|e| bad(e.to_string()))?;
        let mut meta = TrainingMeta {
            epochs_run: r.u32()?,
            best_epoch: r.u32()?,
            final_loss: r.f64()?,
            best_loss: r.f64()?,
            train_seed: r.u64()?,
            dataset_hash: r.u64()?,
            window_n: r.u32()?,
            normalization: r.f64()?,
            loss_history: Vec::new(),
        };
        let h = r.u32()? as usize;
        if h > r.buf.len() / 8 {
            return Err(bad("loss history longer than file"));
        }
        meta.loss_history = (0..h).map(|_| r.f64()).collect::<Result<_>>()?;

        let layout = arch.parameter_layout();
        let count = r.u32()? as usize;
        if count != layout.len() {
            return Err(bad(format!("expected {} tensors, found {count}", layout.len())));
        }
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for (want_name, want_shape) in layout {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(format!("tensor {name} has rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
            if name != want_name || shape != want_shape {
                return Err(bad(format!(
                    "tensor {name} {shape:?} does not match expected {want_name} {want_shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            names.push(want_name);
            tensors.push(Tensor::new(shape, data)?);
        }
        if !r.buf.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self {
            model: Model { arch, names, tensors },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
