use lumos::checkpoint::{decode, encode};
use lumos_core::datamodel::default_task_specs;
use lumos_core::model::{Model, ModelConfig};

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        dim_ff: 8,
        dim_user_embed: 4,
        dim_supply_embed: 4,
        dim_static_embed: 4,
        t_hist: 6,
        t_fut: 2,
        seed: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn round_trip_is_bit_exact() {
    let tasks = default_task_specs(4);
    let m = Model::<f64>::new(tiny()).unwrap();
    let bytes = encode(&m, &tasks, 4).unwrap();
    assert_eq!(&bytes[..8], b"LUMOSCKP");
    let (back, header) = decode::<f64>(&bytes).unwrap();
    assert_eq!(header.epoch, 4);
    assert_eq!(header.tasks, tasks);
    for ((_, _, a), (_, _, b)) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(a, b);
    }
    let m32 = Model::<f32>::new(tiny()).unwrap();
    let (back32, h) = decode::<f32>(&encode(&m32, &tasks, 0).unwrap()).unwrap();
    assert_eq!(h.dtype, "f32");
    for ((_, _, a), (_, _, b)) in m32.params().iter().zip(back32.params().iter()) {
        assert_eq!(a, b);
    }
    // f32 data widens exactly into an f64 model.
    let (wide, _) = decode::<f64>(&encode(&m32, &tasks, 0).unwrap()).unwrap();
    for ((_, _, a), (_, _, b)) in m32.params().iter().zip(wide.params().iter()) {
        assert_eq!(a.cast::<f64>(), *b);
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let m = Model::<f64>::new(tiny()).unwrap();
    let bytes = encode(&m, &default_task_specs(4), 0).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode::<f64>(&bad).is_err());
    assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode::<f64>(&long).is_err());
    let mut version = bytes;
    version[8] = 9;
    assert!(decode::<f64>(&version).is_err());
}
