mod common;

use std::collections::BTreeSet;
use std::fs;

use lumos::io::{
    partition_file, read_calendar, read_partition, record_from_json, record_to_json, write_calendar, write_partitions,
};
use lumos_core::synthgen::{generate_population, GeneratorConfig};

fn population() -> (lumos_core::datamodel::EventCalendar, Vec<lumos_core::datamodel::UserRecord>) {
    generate_population(&GeneratorConfig {
        n_users: 60,
        n_days: 90,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn single_partition_holds_everyone() {
    let (_, records) = population();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_partitions(&records, dir.path(), 1).unwrap();
    assert_eq!(paths.len(), 1);
    assert_eq!(read_partition(&paths[0]).unwrap(), records);
}

#[test]
fn partitions_are_disjoint_and_cover_the_input() {
    let (_, records) = population();
    let dir = tempfile::tempdir().unwrap();
    write_partitions(&records, dir.path(), 5).unwrap();
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for i in 0..5 {
        for r in read_partition(&partition_file(dir.path(), i)).unwrap() {
            assert!(seen.insert(r.user_id.clone()), "{} twice", r.user_id);
            total += 1;
        }
    }
    assert_eq!(total, records.len());
    let expected: BTreeSet<_> = records.iter().map(|r| r.user_id.clone()).collect();
    assert_eq!(seen, expected);
}

#[test]
fn same_inputs_give_identical_bytes() {
    let (_, records) = population();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_partitions(&records, a.path(), 3).unwrap();
    write_partitions(&records, b.path(), 3).unwrap();
    for i in 0..3 {
        assert_eq!(
            fs::read(partition_file(a.path(), i)).unwrap(),
            fs::read(partition_file(b.path(), i)).unwrap()
        );
    }
}

#[test]
fn records_and_calendar_round_trip() {
    let (calendar, records) = population();
    for r in &records {
        assert_eq!(&record_from_json(&record_to_json(r).unwrap()).unwrap(), r);
    }
    let dir = tempfile::tempdir().unwrap();
    write_calendar(&calendar, dir.path()).unwrap();
    assert_eq!(read_calendar(dir.path(), calendar.d_s).unwrap(), calendar);
    assert!(read_calendar(dir.path(), calendar.d_s + 1).is_err());
}

#[test]
fn line_format_uses_string_day_keys() {
    let (_, records) = population();
    let r = records.iter().find(|r| !r.activity.is_empty()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&record_to_json(r).unwrap()).unwrap();
    let day = r.activity.keys().next().unwrap().to_string();
    assert!(v["activity"][&day].is_array());
    assert!(v["static_features"].is_array());
    assert_eq!(v["user_id"], r.user_id.as_str());
}

#[test]
fn zero_partitions_and_missing_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(write_partitions(&[], dir.path(), 0).is_err());
    assert!(read_partition(&partition_file(dir.path(), 7)).is_err());
}

#[test]
fn generate_is_deterministic() {
    let c = common::small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    lumos::commands::generate(&c, a.path()).unwrap();
    lumos::commands::generate(&c, b.path()).unwrap();
    for split in lumos::commands::SPLITS {
        for entry in fs::read_dir(a.path().join(split)).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(a.path().join(split).join(&name)).unwrap(),
                fs::read(b.path().join(split).join(&name)).unwrap(),
                "{split}/{name:?}"
            );
        }
    }
}
