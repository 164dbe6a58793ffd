//! Parameterized building blocks recorded onto a [`Tape`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Mat, Scalar};

pub(crate) fn uniform<F: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    bound: f64,
) -> Mat<F> {
    let data = (0..rows * cols)
        .map(|_| F::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Mat::from_vec(rows, cols, data).expect("sized buffer")
}

/// Dropout state for one forward pass; `None` means evaluation mode.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn apply<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let (rows, cols) = tape.value(x).shape();
        let keep = F::from_f64_lossy(1.0 / (1.0 - self.rate));
        let data = (0..rows * cols)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        tape.mul_const(x, Mat::from_vec(rows, cols, data)?)
    }
}

/// `y = x·W + b`, `W` is `d_in × d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(d_in as f64);
        let weight = store.push(
            format!("{name}.weight"),
            uniform(rng, d_in, d_out, bound),
            true,
        );
        let bias = Some(store.push(format!("{name}.bias"), Mat::zeros(1, d_out), false));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// `y = x·W`.
    pub fn without_bias<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(d_in as f64);
        let weight = store.push(
            format!("{name}.weight"),
            uniform(rng, d_in, d_out, bound),
            true,
        );
        Self {
            weight,
            bias: None,
            d_in,
            d_out,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        widths: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        mut x: Var,
    ) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn d_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.d_in)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize) -> Self {
        Self {
            gain: store.push(
                format!("{name}.gain"),
                Mat::filled(1, width, F::one()),
                false,
            ),
            bias: store.push(format!("{name}.bias"), Mat::zeros(1, width), false),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product attention. Queries and keys/values may come
/// from different streams (cross-attention) or the same one.
///
/// The key projection has no bias: a key bias shifts every score in a query
/// row by the same amount, which the softmax cancels.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::without_bias(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            n_heads,
        }
    }

    /// Returns the attended output and the per-head attention matrices.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        queries: Var,
        keys_values: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, keys_values)?;
        let v = self.value.forward(tape, store, keys_values)?;
        let d_model = self.query.d_out;
        let d_k = d_model / self.n_heads;
        let scale = F::from_f64_lossy(1.0 / libm::sqrt(d_k as f64));
        let mut outs = Vec::with_capacity(self.n_heads);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * d_k, d_k)?,
                    tape.slice_cols(k, h * d_k, d_k)?,
                    tape.slice_cols(v, h * d_k, d_k)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let p = tape.softmax_rows(scores);
            outs.push(tape.matmul(p, vh)?);
            probs.push(p);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        Ok((self.output.forward(tape, store, merged)?, probs))
    }
}

/// `W_out · (silu(x·W_gate) ⊙ x·W_up)` with hidden width `dim_ff`.
#[derive(Clone, Debug)]
pub struct SwiGlu {
    pub gate: Linear,
    pub up: Linear,
    pub down: Linear,
}

impl SwiGlu {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        dim_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            gate: Linear::new(store, &format!("{name}.gate"), d_model, dim_ff, rng),
            up: Linear::new(store, &format!("{name}.up"), d_model, dim_ff, rng),
            down: Linear::new(store, &format!("{name}.down"), dim_ff, d_model, rng),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let g = self.gate.forward(tape, store, x)?;
        let g = tape.silu(g);
        let u = self.up.forward(tape, store, x)?;
        let h = tape.mul(g, u)?;
        self.down.forward(tape, store, h)
    }
}

/// Pre-norm self-attention block followed by a pre-norm SwiGLU block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: SwiGlu,
}

impl EncoderLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        dim_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d_model),
            attn: Attention::new(store, &format!("{name}.self_attn"), d_model, n_heads, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d_model),
            ffn: SwiGlu::new(store, &format!("{name}.ffn"), d_model, dim_ff, rng),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Var>)> {
        let n = self.attn_norm.forward(tape, store, x)?;
        let (a, probs) = self.attn.forward(tape, store, n, n)?;
        let a = dropout.apply(tape, a)?;
        let x = tape.add(x, a)?;
        let n = self.ffn_norm.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, n)?;
        let f = dropout.apply(tape, f)?;
        Ok((tape.add(x, f)?, probs))
    }
}

/// Pre-norm cross-attention block (queries from the future stream, keys and
/// values from the encoder output) followed by a pre-norm SwiGLU block.
/// There is no self-attention, so future steps never see each other.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub attn_norm: LayerNorm,
    pub cross_attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: SwiGlu,
}

impl DecoderLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        dim_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d_model),
            cross_attn: Attention::new(store, &format!("{name}.cross_attn"), d_model, n_heads, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d_model),
            ffn: SwiGlu::new(store, &format!("{name}.ffn"), d_model, dim_ff, rng),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        q: Var,
        memory: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Var>)> {
        let n = self.attn_norm.forward(tape, store, q)?;
        let (a, probs) = self.cross_attn.forward(tape, store, n, memory)?;
        let a = dropout.apply(tape, a)?;
        let q = tape.add(q, a)?;
        let n = self.ffn_norm.forward(tape, store, q)?;
        let f = self.ffn.forward(tape, store, n)?;
        let f = dropout.apply(tape, f)?;
        Ok((tape.add(q, f)?, probs))
    }
}

/// Per-dimension projection head: two ReLU hidden layers of width `d_model`
/// and a scalar output.
#[derive(Clone, Debug)]
pub struct Head {
    pub mlp: Mlp,
}

impl Head {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            mlp: Mlp::new(store, name, &[d_model, d_model, d_model, 1], rng),
        }
    }
}

pub(crate) fn name(prefix: &str, i: usize) -> String {
    format!("{prefix}.{i}")
}
