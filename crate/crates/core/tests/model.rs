mod common;

use common::{kinds, sample_for, tiny_config};
use lumos_core::model::layers::Dropout;
use lumos_core::model::{fixed_positional_table, Model, ModelConfig, PositionalKind, Stream};
use lumos_core::params::ParamStore;
use lumos_core::tape::Tape;
use lumos_core::tensor::Mat;
use proptest::prelude::*;

fn bump(model: &mut Model<f64>, ids: &[lumos_core::params::ParamId], by: f64) {
    for id in ids {
        for v in model.params_mut().get_mut(*id).as_mut_slice() {
            *v += by;
        }
    }
}

fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn ledger(c: &ModelConfig) -> usize {
    let lin = |i: usize, o: usize| i * o + o;
    let path = |d_in: usize, hidden: usize, d_out: usize| {
        let mut w = vec![d_in];
        w.extend(std::iter::repeat_n(hidden, c.embedding_depth - 1));
        w.push(d_out);
        w.windows(2).map(|p| lin(p[0], p[1])).sum::<usize>()
    };
    let d = c.d_model;
    let attn = 3 * lin(d, d) + d * d;
    let ffn = 2 * lin(d, c.dim_ff) + lin(c.dim_ff, d);
    let block = 4 * d + attn + ffn;
    let embed = path(c.d_u, c.dim_user_embed, c.dim_user_embed)
        + path(c.d_static, c.dim_static_embed, c.dim_static_embed)
        + path(c.d_s, c.dim_supply_embed, c.dim_supply_embed)
        + path(c.d_s, c.dim_supply_embed, d)
        + path(
            c.dim_user_embed + c.dim_static_embed + c.dim_supply_embed,
            d,
            d,
        );
    let pe = match c.positional {
        PositionalKind::Learned => (c.t_hist + c.t_fut) * d,
        _ => 0,
    };
    let heads = c.d_u * (2 * lin(d, d) + lin(d, 1));
    embed + c.d_u + pe + (c.n_enc_layers + c.n_dec_layers) * block + 4 * d + heads + c.d_u
}

#[test]
fn count_params_matches_hand_ledger() {
    let mut store = ParamStore::<f64>::new();
    store.push("w", Mat::zeros(2, 3), true);
    store.push("b", Mat::zeros(1, 3), false);
    assert_eq!(store.scalar_count(), 9);

    let tiny = tiny_config();
    assert_eq!(
        Model::<f32>::new(tiny.clone()).unwrap().count_params(),
        ledger(&tiny)
    );
    assert_eq!(ledger(&tiny), 4_738);
    let small = ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_enc_layers: 2,
        dim_ff: 128,
        dim_user_embed: 32,
        dim_supply_embed: 16,
        dim_static_embed: 8,
        positional: PositionalKind::Sinusoidal,
        ..ModelConfig::default()
    };
    assert_eq!(
        Model::<f32>::new(small.clone()).unwrap().count_params(),
        ledger(&small)
    );
}

#[test]
fn init_is_deterministic_with_zero_tables() {
    let c = tiny_config();
    let a = Model::<f64>::new(c.clone()).unwrap();
    let b = Model::<f64>::new(c.clone()).unwrap();
    for ((_, _, x), (_, _, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x, y);
    }
    for id in a.learned_pe_ids() {
        assert!(a.params().get(id).as_slice().iter().all(|v| *v == 0.0));
    }
    assert_eq!(a.learned_pe_ids().len(), 2);
    assert_eq!(a.log_vars(), vec![0.0; c.d_u]);
    let other = Model::<f64>::new(ModelConfig { seed: 99, ..c }).unwrap();
    assert_ne!(
        a.params().get(a.u_pad_id()),
        other.params().get(other.u_pad_id())
    );
}

#[test]
fn forward_shapes_and_eval_determinism() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 2, 1);
    let (p1, trace) = model.predict(&s).unwrap();
    let (p2, _) = model.predict(&s).unwrap();
    assert_eq!(p1.shape(), (c.t_fut, c.d_u));
    assert_eq!(p1, p2);
    assert_eq!(trace.layers.len(), c.n_dec_layers);
    assert_eq!(trace.layers[0].len(), c.n_heads);
    assert_eq!(trace.layers[0][0].shape(), (c.t_fut, c.t_hist));

    let mut tape = Tape::new();
    let (u, st, sh, sf) = model.sample_inputs(&mut tape, &s).unwrap();
    let z = model
        .embed_tokens(&mut tape, u, &s.pad_mask, st, sh)
        .unwrap();
    assert_eq!(tape.value(z).shape(), (c.t_hist, c.d_model));
    let zf = model.embed_future(&mut tape, sf).unwrap();
    assert_eq!(tape.value(zf).shape(), (c.t_fut, c.d_model));

    let wrong = tape.constant(Mat::zeros(c.t_fut, c.d_s + 1));
    assert!(model.embed_future(&mut tape, wrong).is_err());
}

#[test]
fn identical_days_give_identical_tokens() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut s = sample_for(&c, 0, 2);
    let (a, b) = (2, 5);
    let row = s.user_hist.row(a).to_vec();
    s.user_hist.row_mut(b).copy_from_slice(&row);
    let srow = s.supply_hist.row(a).to_vec();
    s.supply_hist.row_mut(b).copy_from_slice(&srow);
    let mut tape = Tape::new();
    let (u, st, sh, _) = model.sample_inputs(&mut tape, &s).unwrap();
    let z = model
        .embed_tokens(&mut tape, u, &s.pad_mask, st, sh)
        .unwrap();
    assert_eq!(tape.value(z).row(a), tape.value(z).row(b));
}

#[test]
fn pad_flip_changes_only_that_token() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 3, 3);
    let tokens = |mask: &[bool]| {
        let mut tape = Tape::new();
        let (u, st, sh, _) = model.sample_inputs(&mut tape, &s).unwrap();
        let z = model.embed_tokens(&mut tape, u, mask, st, sh).unwrap();
        tape.value(z).clone()
    };
    let base = tokens(&s.pad_mask);
    let mut flipped = s.pad_mask.clone();
    flipped[1] = false;
    let changed = tokens(&flipped);
    for t in 0..c.t_hist {
        if t == 1 {
            assert_ne!(base.row(t), changed.row(t));
        } else {
            assert_eq!(base.row(t), changed.row(t));
        }
    }
}

#[test]
fn padded_history_content_never_reaches_the_output() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 4, 4);
    let mut scrambled = s.clone();
    for t in 0..4 {
        for k in 0..c.d_u {
            scrambled.user_hist.set(t, k, 100.0 + (t * k) as f64);
        }
    }
    assert_eq!(
        model.predict(&s).unwrap().0,
        model.predict(&scrambled).unwrap().0
    );
}

#[test]
fn event_pathways_are_separate() {
    let c = tiny_config();
    let mut model = Model::<f64>::new(c.clone()).unwrap();
    let past = model.event_mlp_ids();
    let fut = model.future_event_mlp_ids();
    assert!(past.iter().all(|p| !fut.contains(p)));
    let s = sample_for(&c, 0, 5);
    let z_fut = |m: &Model<f64>| {
        let mut tape = Tape::new();
        let sf = tape.constant(s.supply_fut.clone());
        let z = m.embed_future(&mut tape, sf).unwrap();
        tape.value(z).clone()
    };
    let before = z_fut(&model);
    bump(&mut model, &past, 0.5);
    assert_eq!(before, z_fut(&model));
}

#[test]
fn identical_future_rows_give_identical_tokens() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut tape = Tape::new();
    let sf = tape.constant(Mat::filled(c.t_fut, c.d_s, 0.4));
    let z = model.embed_future(&mut tape, sf).unwrap();
    assert_eq!(tape.value(z).row(0), tape.value(z).row(1));
}

#[test]
fn decoder_rows_are_independent() {
    let c = ModelConfig {
        t_fut: 5,
        n_dec_layers: 2,
        ..tiny_config()
    };
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 0, 6);
    let decode = |z_rows: &Mat<f64>| {
        let mut tape = Tape::new();
        let (h_enc, _) = model
            .forward_encoder(&mut tape, &s, &mut Dropout::eval())
            .unwrap();
        let z = tape.constant(z_rows.clone());
        let pe = model.positional(&mut tape, Stream::Future);
        let (h, _) = model
            .decode(&mut tape, z, pe, h_enc, &mut Dropout::eval())
            .unwrap();
        tape.value(h).clone()
    };
    let mut tape = Tape::new();
    let sf = tape.constant(s.supply_fut.clone());
    let z_var = model.embed_future(&mut tape, sf).unwrap();
    let z = tape.value(z_var).clone();
    let full = decode(&z);
    for i in 0..c.t_fut {
        let mut only = Mat::zeros(c.t_fut, c.d_model);
        only.row_mut(i).copy_from_slice(z.row(i));
        let h = decode(&only);
        let diff = h
            .row(i)
            .iter()
            .zip(full.row(i))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12, "row {i}: {diff}");
    }
}

#[test]
fn uniform_memory_gives_uniform_attention() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut tape = Tape::new();
    let row: Vec<f64> = (0..c.d_model).map(|i| (i as f64 * 0.37).sin()).collect();
    let h_enc = tape.constant(Mat::from_rows(&vec![row; c.t_hist]).unwrap());
    let z = tape.constant(Mat::filled(c.t_fut, c.d_model, 0.2));
    let pe = model.positional(&mut tape, Stream::Future);
    let (_, attn) = model
        .decode(&mut tape, z, pe, h_enc, &mut Dropout::eval())
        .unwrap();
    for p in &attn[0] {
        for v in tape.value(*p).as_slice() {
            assert!((v - 1.0 / c.t_hist as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn heads_only_touch_their_own_column() {
    let c = tiny_config();
    let mut model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 0, 7);
    let before = model.predict(&s).unwrap().0;
    let ids = model.head_ids(1);
    // Bias of the last layer shifts the head output unconditionally.
    bump(&mut model, &ids[ids.len() - 1..], 0.25);
    let after = model.predict(&s).unwrap().0;
    for t in 0..c.t_fut {
        assert_eq!(before.get(t, 0), after.get(t, 0));
        assert!((after.get(t, 1) - before.get(t, 1) - 0.25).abs() < 1e-12);
    }
}

#[test]
fn identical_decoder_rows_give_identical_outputs() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut tape = Tape::new();
    let h = tape.constant(Mat::filled(3, c.d_model, 0.3));
    let outs = model.project_heads(&mut tape, h).unwrap();
    assert_eq!(outs.len(), c.d_u);
    for o in outs {
        let v = tape.value(o);
        assert_eq!(v.shape(), (3, 1));
        assert_eq!(v.get(0, 0), v.get(2, 0));
    }
}

#[test]
fn future_supply_reaches_predictions() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut s = sample_for(&c, 0, 8);
    for v in s.supply_fut.as_mut_slice() {
        *v = 0.9;
    }
    let masked = lumos_core::datamodel::mask_supply(&s, false, true);
    let d = max_abs_diff(
        &model.predict(&s).unwrap().0,
        &model.predict(&masked).unwrap().0,
    );
    assert!(d > 1e-6, "{d}");
}

#[test]
fn encoder_output_is_finite_and_normalized() {
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 1, 9);
    let mut tape = Tape::new();
    let (h, _) = model
        .forward_encoder(&mut tape, &s, &mut Dropout::eval())
        .unwrap();
    let h = tape.value(h);
    assert_eq!(h.shape(), (c.t_hist, c.d_model));
    // Final layer norm with unit gain: each row has norm sqrt(d_model).
    for r in 0..h.rows() {
        let n: f64 = h.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n.is_finite() && n <= (c.d_model as f64).sqrt() + 1e-6);
    }
}

#[test]
fn f32_and_f64_agree() {
    let c = tiny_config();
    let m64 = Model::<f64>::new(c.clone()).unwrap();
    let m32: Model<f32> = m64.cast();
    let s = sample_for(&c, 2, 10);
    let d = max_abs_diff(&m64.predict(&s).unwrap().0, &m32.predict(&s).unwrap().0);
    assert!(d < 1e-4, "{d}");
}

#[test]
fn training_mode_dropout_is_seeded() {
    use rand::SeedableRng;
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let s = sample_for(&c, 0, 12);
    let run = |seed: u64| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &s, Some(&mut rng)).unwrap();
        tape.value(out.predictions).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    let _ = kinds(2);
}

#[test]
fn sinusoidal_table_matches_closed_form() {
    let t: Mat<f64> = fixed_positional_table(PositionalKind::Sinusoidal, 10, 8).unwrap();
    for pos in 0..10 {
        for i in (0..8).step_by(2) {
            let angle = pos as f64 / 10_000f64.powf(i as f64 / 8.0);
            assert!((t.get(pos, i) - angle.sin()).abs() < 1e-12);
            assert!((t.get(pos, i + 1) - angle.cos()).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_attention_row_is_stochastic(seed in 0u64..10_000, pads in 0usize..8) {
        let c = ModelConfig { n_enc_layers: 2, seed, ..tiny_config() };
        let model = Model::<f64>::new(c.clone()).unwrap();
        let s = sample_for(&c, pads, seed);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &s, None).unwrap();
        for layer in out.self_attention.iter().chain(&out.cross_attention) {
            for p in layer {
                let m = tape.value(*p);
                for r in 0..m.rows() {
                    let sum: f64 = m.row(r).iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-5);
                    prop_assert!(m.row(r).iter().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn count_params_is_stable_under_forward(seed in 0u64..1000) {
        let c = tiny_config();
        let model = Model::<f64>::new(c.clone()).unwrap();
        let before = model.count_params();
        model.predict(&sample_for(&c, 0, seed)).unwrap();
        prop_assert_eq!(before, model.count_params());
    }
}
