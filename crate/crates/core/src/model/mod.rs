//! The LUMOS network.
//!
//! ```text
//! [u_t | pad → u_pad] ─ user_mlp ─┐
//! x_static ─ static_mlp ─ bcast ──┼─ concat ─ proj_mlp ─ + PE_hist ─ encoder ─ H_enc
//! s_t ─ event_mlp ────────────────┘                                             │
//! s_fut ─ future_event_mlp ─ + PE_fut ─────────── decoder (cross-attn only) ◄───┘
//!                                                        │
//!                                             d_u projection heads ─ Û_fut
//! ```

mod config;
pub mod layers;

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, PositionalKind};
use layers::{uniform, DecoderLayer, Dropout, EncoderLayer, Head, LayerNorm, Mlp};

use crate::datamodel::TrainingSample;
use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Mat, Scalar};

/// Which positional table to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    History,
    Future,
}

#[derive(Clone, Debug)]
enum PositionTable<F> {
    Learned(ParamId),
    Fixed(Mat<F>),
}

/// Fixed positional table, or `None` for the learned kind (whose table is a
/// model parameter).
///
/// Sinusoidal interleaves `sin` on even and `cos` on odd channels; absolute
/// writes the raw position index into channel 0.
pub fn fixed_positional_table<F: Scalar>(
    kind: PositionalKind,
    length: usize,
    d_model: usize,
) -> Option<Mat<F>> {
    let mut table = Mat::zeros(length, d_model);
    match kind {
        PositionalKind::Learned => return None,
        PositionalKind::Sinusoidal => {
            for pos in 0..length {
                for i in (0..d_model).step_by(2) {
                    let angle = pos as f64 / libm::pow(10_000.0, i as f64 / d_model as f64);
                    table.set(pos, i, F::from_f64_lossy(libm::sin(angle)));
                    if i + 1 < d_model {
                        table.set(pos, i + 1, F::from_f64_lossy(libm::cos(angle)));
                    }
                }
            }
        }
        PositionalKind::Absolute => {
            for pos in 0..length {
                table.set(pos, 0, F::from_usize(pos).unwrap_or_else(F::zero));
            }
        }
    }
    Some(table)
}

/// Recorded results of one forward pass.
pub struct ForwardOutput {
    /// `T_fut × d_u` predictions (logits for binary dims).
    pub predictions: Var,
    /// One `T_fut × 1` column per behavioural dimension.
    pub head_outputs: Vec<Var>,
    pub h_enc: Var,
    pub h_dec: Var,
    /// `[layer][head]` encoder self-attention probabilities.
    pub self_attention: Vec<Vec<Var>>,
    /// `[layer][head]` decoder cross-attention probabilities.
    pub cross_attention: Vec<Vec<Var>>,
}

/// Cross-attention weights copied off a tape: `[layer][head]`, each
/// `T_fut × T_hist`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Mat<f64>>>,
}

impl AttentionTrace {
    pub fn from_vars<F: Scalar>(tape: &Tape<F>, vars: &[Vec<Var>]) -> Self {
        Self {
            layers: vars
                .iter()
                .map(|heads| heads.iter().map(|v| tape.value(*v).cast()).collect())
                .collect(),
        }
    }

    /// Mean over heads of one layer.
    pub fn head_average(&self, layer: usize) -> Option<Mat<f64>> {
        let heads = self.layers.get(layer)?;
        let first = heads.first()?;
        let mut acc = Mat::zeros(first.rows(), first.cols());
        for h in heads {
            acc.add_assign(h);
        }
        acc.scale_assign(1.0 / heads.len() as f64);
        Some(acc)
    }
}

/// All learnable state of the network.
#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    user_mlp: Mlp,
    static_mlp: Mlp,
    event_mlp: Mlp,
    future_event_mlp: Mlp,
    proj_mlp: Mlp,
    u_pad: ParamId,
    pe_hist: PositionTable<F>,
    pe_fut: PositionTable<F>,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    heads: Vec<Head>,
    log_vars: ParamId,
}

fn pathway_widths(d_in: usize, hidden: usize, d_out: usize, depth: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(depth + 1);
    w.push(d_in);
    for _ in 1..depth {
        w.push(hidden);
    }
    w.push(d_out);
    w
}

impl<F: Scalar> Model<F> {
    /// Builds a model with fan-in scaled uniform weights, zero biases, unit
    /// layer-norm gains, zero learned positional tables and zero log-variances.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut p = ParamStore::new();
        let depth = c.embedding_depth;

        let user_mlp = Mlp::new(
            &mut p,
            "user_mlp",
            &pathway_widths(c.d_u, c.dim_user_embed, c.dim_user_embed, depth),
            &mut rng,
        );
        let static_mlp = Mlp::new(
            &mut p,
            "static_mlp",
            &pathway_widths(c.d_static, c.dim_static_embed, c.dim_static_embed, depth),
            &mut rng,
        );
        let event_mlp = Mlp::new(
            &mut p,
            "event_mlp",
            &pathway_widths(c.d_s, c.dim_supply_embed, c.dim_supply_embed, depth),
            &mut rng,
        );
        let future_event_mlp = Mlp::new(
            &mut p,
            "future_event_mlp",
            &pathway_widths(c.d_s, c.dim_supply_embed, c.d_model, depth),
            &mut rng,
        );
        let token_width = c.dim_user_embed + c.dim_static_embed + c.dim_supply_embed;
        let proj_mlp = Mlp::new(
            &mut p,
            "proj_mlp",
            &pathway_widths(token_width, c.d_model, c.d_model, depth),
            &mut rng,
        );
        let u_pad = p.push(
            "u_pad",
            uniform(&mut rng, 1, c.d_u, 1.0 / libm::sqrt(c.d_u as f64)),
            false,
        );
        let (pe_hist, pe_fut) = match fixed_positional_table::<F>(c.positional, c.t_hist, c.d_model)
        {
            None => (
                PositionTable::Learned(p.push("pe_hist", Mat::zeros(c.t_hist, c.d_model), false)),
                PositionTable::Learned(p.push("pe_fut", Mat::zeros(c.t_fut, c.d_model), false)),
            ),
            Some(hist) => (
                PositionTable::Fixed(hist),
                PositionTable::Fixed(
                    fixed_positional_table(c.positional, c.t_fut, c.d_model).expect("fixed kind"),
                ),
            ),
        };
        let encoder = (0..c.n_enc_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut p,
                    &layers::name("encoder", i),
                    c.d_model,
                    c.n_heads,
                    c.dim_ff,
                    &mut rng,
                )
            })
            .collect();
        let encoder_norm = LayerNorm::new(&mut p, "encoder_norm", c.d_model);
        let decoder = (0..c.n_dec_layers)
            .map(|i| {
                DecoderLayer::new(
                    &mut p,
                    &layers::name("decoder", i),
                    c.d_model,
                    c.n_heads,
                    c.dim_ff,
                    &mut rng,
                )
            })
            .collect();
        let decoder_norm = LayerNorm::new(&mut p, "decoder_norm", c.d_model);
        let heads = (0..c.d_u)
            .map(|k| Head::new(&mut p, &layers::name("head", k), c.d_model, &mut rng))
            .collect();
        let log_vars = p.push("log_vars", Mat::zeros(1, c.d_u), false);

        Ok(Self {
            config,
            params: p,
            user_mlp,
            static_mlp,
            event_mlp,
            future_event_mlp,
            proj_mlp,
            u_pad,
            pe_hist,
            pe_fut,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            heads,
            log_vars,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Replaces every parameter tensor; shapes must match declaration order.
    pub fn load_params(&mut self, tensors: Vec<Mat<F>>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(shape_err(
                "parameter count",
                self.params.len(),
                tensors.len(),
            ));
        }
        for (id, t) in self
            .params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(tensors)
        {
            let slot = self.params.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(shape_err(
                    "parameter shape",
                    slot.shape_string(),
                    t.shape_string(),
                ));
            }
            *slot = t;
        }
        Ok(())
    }

    /// Exact number of scalar learnables.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn log_vars_id(&self) -> ParamId {
        self.log_vars
    }

    pub fn u_pad_id(&self) -> ParamId {
        self.u_pad
    }

    pub fn learned_pe_ids(&self) -> Vec<ParamId> {
        [&self.pe_hist, &self.pe_fut]
            .iter()
            .filter_map(|t| match t {
                PositionTable::Learned(id) => Some(*id),
                PositionTable::Fixed(_) => None,
            })
            .collect()
    }

    /// Learned log-variances `s_i = log σ_i²`.
    pub fn log_vars(&self) -> Vec<f64> {
        self.params
            .get(self.log_vars)
            .as_slice()
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect()
    }

    /// Parameter ids of the past-event pathway.
    pub fn event_mlp_ids(&self) -> Vec<ParamId> {
        mlp_ids(&self.event_mlp)
    }

    pub fn future_event_mlp_ids(&self) -> Vec<ParamId> {
        mlp_ids(&self.future_event_mlp)
    }

    pub fn head_ids(&self, k: usize) -> Vec<ParamId> {
        mlp_ids(&self.heads[k].mlp)
    }

    fn check(
        &self,
        tape: &Tape<F>,
        v: Var,
        rows: usize,
        cols: usize,
        what: &'static str,
    ) -> Result<()> {
        let m = tape.value(v);
        if m.shape() != (rows, cols) {
            return Err(shape_err(what, format!("{rows}x{cols}"), m.shape_string()));
        }
        Ok(())
    }

    /// Daily history tokens `z_t = proj([user(u_t or u_pad); static; event(s_t)])`.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape<F>,
        user_hist: Var,
        pad_mask: &[bool],
        x_static: Var,
        supply_hist: Var,
    ) -> Result<Var> {
        let c = &self.config;
        let t = tape.value(user_hist).rows();
        self.check(tape, user_hist, t, c.d_u, "embed_tokens user_hist")?;
        self.check(tape, supply_hist, t, c.d_s, "embed_tokens supply_hist")?;
        self.check(tape, x_static, 1, c.d_static, "embed_tokens x_static")?;
        let pad = tape.param(&self.params, self.u_pad);
        let user = tape.substitute_rows(user_hist, pad, pad_mask)?;
        let h_user = self.user_mlp.forward(tape, &self.params, user)?;
        let h_static = self.static_mlp.forward(tape, &self.params, x_static)?;
        let h_static = tape.broadcast_rows(h_static, t)?;
        let h_event = self.event_mlp.forward(tape, &self.params, supply_hist)?;
        let cat = tape.concat_cols(&[h_user, h_static, h_event])?;
        self.proj_mlp.forward(tape, &self.params, cat)
    }

    /// Static pathway output `h_static` for a `1 × d_static` input.
    pub fn embed_static(&self, tape: &mut Tape<F>, x_static: Var) -> Result<Var> {
        self.check(tape, x_static, 1, self.config.d_static, "embed_static")?;
        self.static_mlp.forward(tape, &self.params, x_static)
    }

    /// Past-event pathway applied per day.
    pub fn embed_supply(&self, tape: &mut Tape<F>, supply: Var) -> Result<Var> {
        let t = tape.value(supply).rows();
        self.check(tape, supply, t, self.config.d_s, "embed_supply")?;
        self.event_mlp.forward(tape, &self.params, supply)
    }

    /// Future tokens from the separate future-event pathway.
    pub fn embed_future(&self, tape: &mut Tape<F>, supply_fut: Var) -> Result<Var> {
        let t = tape.value(supply_fut).rows();
        self.check(tape, supply_fut, t, self.config.d_s, "embed_future")?;
        self.future_event_mlp
            .forward(tape, &self.params, supply_fut)
    }

    /// Positional table for `stream` (a parameter leaf for the learned kind).
    pub fn positional(&self, tape: &mut Tape<F>, stream: Stream) -> Var {
        let table = match stream {
            Stream::History => &self.pe_hist,
            Stream::Future => &self.pe_fut,
        };
        match table {
            PositionTable::Learned(id) => tape.param(&self.params, *id),
            PositionTable::Fixed(m) => tape.constant(m.clone()),
        }
    }

    /// `H_enc = Encoder(Z_hist + PE_hist)` with a final layer norm.
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        z_hist: Var,
        pe_hist: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        self.check(
            tape,
            z_hist,
            self.config.t_hist,
            self.config.d_model,
            "encode Z_hist",
        )?;
        let mut x = tape.add(z_hist, pe_hist)?;
        let mut attn = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (y, probs) = layer.forward(tape, &self.params, x, dropout)?;
            x = y;
            attn.push(probs);
        }
        Ok((self.encoder_norm.forward(tape, &self.params, x)?, attn))
    }

    /// Cross-attention-only decoder over `Z_fut + PE_fut` and `H_enc`.
    pub fn decode(
        &self,
        tape: &mut Tape<F>,
        z_fut: Var,
        pe_fut: Var,
        h_enc: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let c = &self.config;
        self.check(tape, z_fut, c.t_fut, c.d_model, "decode Z_fut")?;
        self.check(
            tape,
            h_enc,
            tape.value(h_enc).rows(),
            c.d_model,
            "decode H_enc",
        )?;
        let mut q = tape.add(z_fut, pe_fut)?;
        let mut attn = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (y, probs) = layer.forward(tape, &self.params, q, h_enc, dropout)?;
            q = y;
            attn.push(probs);
        }
        Ok((self.decoder_norm.forward(tape, &self.params, q)?, attn))
    }

    /// One `T × 1` output per behavioural dimension.
    pub fn project_heads(&self, tape: &mut Tape<F>, h_dec: Var) -> Result<Vec<Var>> {
        let rows = tape.value(h_dec).rows();
        self.check(tape, h_dec, rows, self.config.d_model, "project_heads")?;
        self.heads
            .iter()
            .map(|h| h.mlp.forward(tape, &self.params, h_dec))
            .collect()
    }

    /// Records the sample's inputs as tape constants:
    /// `(user_hist, x_static, supply_hist, supply_fut)`.
    pub fn sample_inputs(
        &self,
        tape: &mut Tape<F>,
        sample: &TrainingSample,
    ) -> Result<(Var, Var, Var, Var)> {
        let c = &self.config;
        let expect = |m: &Mat<f64>, rows: usize, cols: usize, what: &'static str| {
            if m.shape() != (rows, cols) {
                Err(shape_err(what, format!("{rows}x{cols}"), m.shape_string()))
            } else {
                Ok(())
            }
        };
        expect(&sample.user_hist, c.t_hist, c.d_u, "sample user_hist")?;
        expect(&sample.supply_hist, c.t_hist, c.d_s, "sample supply_hist")?;
        expect(&sample.supply_fut, c.t_fut, c.d_s, "sample supply_fut")?;
        if sample.static_features.len() != c.d_static || sample.pad_mask.len() != c.t_hist {
            return Err(shape_err(
                "sample static/pad",
                format!("{} static, {} pad", c.d_static, c.t_hist),
                format!(
                    "{} static, {} pad",
                    sample.static_features.len(),
                    sample.pad_mask.len()
                ),
            ));
        }
        let u = tape.constant(sample.user_hist.cast());
        let st = tape.constant(Mat::from_vec(
            1,
            c.d_static,
            sample
                .static_features
                .iter()
                .map(|v| F::from_f64_lossy(*v))
                .collect(),
        )?);
        let sh = tape.constant(sample.supply_hist.cast());
        let sf = tape.constant(sample.supply_fut.cast());
        Ok((u, st, sh, sf))
    }

    /// History half of the network: tokens, positions, encoder.
    pub fn forward_encoder(
        &self,
        tape: &mut Tape<F>,
        sample: &TrainingSample,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let (u, st, sh, _) = self.sample_inputs(tape, sample)?;
        let z = self.embed_tokens(tape, u, &sample.pad_mask, st, sh)?;
        let pe = self.positional(tape, Stream::History);
        self.encode(tape, z, pe, dropout)
    }

    /// Full forward pass. `rng = None` is evaluation mode (no dropout).
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        sample: &TrainingSample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let mut dropout = Dropout {
            rate: self.config.dropout,
            rng,
        };
        let (u, st, sh, sf) = self.sample_inputs(tape, sample)?;
        let z = self.embed_tokens(tape, u, &sample.pad_mask, st, sh)?;
        let pe = self.positional(tape, Stream::History);
        let (h_enc, self_attention) = self.encode(tape, z, pe, &mut dropout)?;
        let z_fut = self.embed_future(tape, sf)?;
        let pe_fut = self.positional(tape, Stream::Future);
        let (h_dec, cross_attention) = self.decode(tape, z_fut, pe_fut, h_enc, &mut dropout)?;
        let head_outputs = self.project_heads(tape, h_dec)?;
        let predictions = tape.concat_cols(&head_outputs)?;
        Ok(ForwardOutput {
            predictions,
            head_outputs,
            h_enc,
            h_dec,
            self_attention,
            cross_attention,
        })
    }

    /// Evaluation-mode predictions and cross-attention trace.
    pub fn predict(&self, sample: &TrainingSample) -> Result<(Mat<f64>, AttentionTrace)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, sample, None)?;
        Ok((
            tape.value(out.predictions).cast(),
            AttentionTrace::from_vars(&tape, &out.cross_attention),
        ))
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        let mut out = Model::<G>::new(self.config.clone()).expect("validated config");
        let tensors = self.params.iter().map(|(_, _, t)| t.cast()).collect();
        out.load_params(tensors).expect("identical layout");
        out
    }
}

fn mlp_ids(mlp: &Mlp) -> Vec<ParamId> {
    mlp.layers
        .iter()
        .flat_map(|l| core::iter::once(l.weight).chain(l.bias))
        .collect()
}
