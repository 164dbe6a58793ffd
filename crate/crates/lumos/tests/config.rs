use lumos::config::{parse_config_str, RunConfig};
use lumos_core::model::PositionalKind;

#[test]
fn minimal_config_takes_defaults() {
    let c = parse_config_str("").unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!((c.model.t_hist, c.model.t_fut), (360, 7));
    assert_eq!((c.model.d_model, c.model.n_heads), (512, 8));
    assert_eq!((c.model.n_enc_layers, c.model.n_dec_layers), (6, 1));
    assert_eq!(c.training.learning_rate, 1e-4);
    assert_eq!(c.model.dropout, 0.1);
    assert_eq!(c.training.early_stopping_patience, 10);
    assert_eq!(c.model.positional, PositionalKind::Learned);
    assert_eq!(c.tasks.len(), 4);
}

#[test]
fn unknown_keys_are_named() {
    let err = parse_config_str("[modle]\nd_model = 64\n").unwrap_err();
    assert!(format!("{err:#}").contains("modle"), "{err:#}");
    let err = parse_config_str("[model]\nd_modle = 64\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("d_modle") && msg.contains("model"), "{msg}");
}

#[test]
fn type_errors_carry_the_path() {
    let err = parse_config_str("[training]\nbatch_size = \"big\"\n").unwrap_err();
    assert!(format!("{err:#}").contains("training.batch_size"), "{err:#}");
}

#[test]
fn constraint_violations_are_reported() {
    let err = parse_config_str("[model]\nn_heads = 7\n").unwrap_err();
    assert!(format!("{err:#}").contains("divisible"), "{err:#}");
    assert!(parse_config_str("[training]\nlearning_rate = 0.0\n").is_err());
    assert!(parse_config_str("[generator]\nd_u = 5\n").is_err());
}

#[test]
fn tasks_follow_d_u_unless_given() {
    let c = parse_config_str("[generator]\nd_u = 6\n[model]\nd_u = 6\n").unwrap();
    assert_eq!(c.tasks.len(), 6);
    let text = "[generator]\nd_u = 2\n[model]\nd_u = 2\n\
                [[tasks]]\nname = \"churn\"\nkind = \"binary\"\nindex = 0\n\
                [[tasks]]\nname = \"spend\"\nkind = \"continuous\"\nindex = 1\n";
    let c = parse_config_str(text).unwrap();
    assert_eq!(c.tasks[0].name, "churn");
    let dup = text.replace("index = 1", "index = 0");
    assert!(parse_config_str(&dup).is_err());
}
