mod common;

use common::{kinds, sample_for, tiny_config};
use lumos_core::gradcheck::{analytic_gradients, compare_with_finite_differences, grad_check};
use lumos_core::model::{Model, PositionalKind};
use lumos_core::params::ParamId;
use lumos_core::tensor::Mat;

fn perturbed(mut model: Model<f64>, seed: u64) -> Model<f64> {
    // Move zero-initialized tensors off zero: biases at 0 put zero-input
    // rows exactly on the ReLU kink, where finite differences see half a slope.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ids = model.learned_pe_ids();
    ids.push(model.log_vars_id());
    ids.extend(
        model
            .params()
            .iter()
            .filter(|(_, name, _)| name.ends_with(".bias"))
            .map(|(id, _, _)| id),
    );
    for id in ids {
        for v in model.params_mut().get_mut(id).as_mut_slice() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    model
}

#[test]
fn tiny_model_matches_central_differences() {
    let c = tiny_config();
    let model = perturbed(Model::<f64>::new(c.clone()).unwrap(), 1);
    assert!(model.count_params() <= 5_000, "{}", model.count_params());
    let sample = sample_for(&c, 3, 11);
    let report = grad_check(&model, &sample, &kinds(c.d_u), 1e-5).unwrap();
    assert_eq!(report.n_checked, model.count_params());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn fixed_positional_kinds_also_check() {
    for kind in [PositionalKind::Sinusoidal, PositionalKind::Absolute] {
        let c = lumos_core::model::ModelConfig {
            positional: kind,
            ..tiny_config()
        };
        let model = perturbed(Model::<f64>::new(c.clone()).unwrap(), 2);
        let sample = sample_for(&c, 0, 5);
        let report = grad_check(&model, &sample, &kinds(c.d_u), 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let c = tiny_config();
    let model = perturbed(Model::<f64>::new(c.clone()).unwrap(), 3);
    let sample = sample_for(&c, 2, 13);
    let k = kinds(c.d_u);
    let mut grads = analytic_gradients(&model, &sample, &k).unwrap();
    let id = model.u_pad_id();
    let slot = grads.slot_mut(id);
    let g = slot.get_or_insert_with(|| Mat::zeros(1, c.d_u));
    g.as_mut_slice()[0] += 1.0;
    let report = compare_with_finite_differences(&model, &sample, &k, &grads, 1e-5).unwrap();
    assert!(report.max_rel_error > 1e-2);
    assert_eq!(report.worst_param, "u_pad");
}

#[test]
fn zero_loss_configuration_is_guarded_by_the_floor() {
    // With every head weight and bias at zero the predictions are 0 and
    // the sample has no supervised signal when masks and targets are empty,
    // so only the log-variance terms remain.
    let c = tiny_config();
    let mut model = Model::<f64>::new(c.clone()).unwrap();
    for k in 0..c.d_u {
        for id in model.head_ids(k) {
            for v in model.params_mut().get_mut(id).as_mut_slice() {
                *v = 0.0;
            }
        }
    }
    let mut sample = sample_for(&c, 0, 17);
    for v in sample.activity_mask.as_mut_slice() {
        *v = false;
    }
    let report = grad_check(&model, &sample, &kinds(c.d_u), 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn masked_continuous_output_gets_no_gradient() {
    use lumos_core::loss::compute_loss;
    use lumos_core::tape::Tape;
    let c = tiny_config();
    let model = Model::<f64>::new(c.clone()).unwrap();
    let mut sample = sample_for(&c, 0, 19);
    for t in 0..c.t_fut {
        sample.activity_mask.set(t, 1, false);
    }
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &sample, None).unwrap();
    let (total, _) =
        compute_loss(&mut tape, &model, out.predictions, &sample, &kinds(c.d_u)).unwrap();
    let grads = tape.backward(total, model.params().len()).unwrap();
    for id in model.head_ids(1) {
        if let Some(g) = grads.get(id) {
            assert!(g.as_slice().iter().all(|v| *v == 0.0));
        }
    }
    assert!(grads.get(model.log_vars_id()).is_some());
    let _ = ParamId(0);
}
