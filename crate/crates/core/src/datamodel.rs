//! Sequence/window data model: feature scaling, user records, the event
//! calendar, training-sample assembly and supply-ablation masking.
//!
//! Day indices are plain integer offsets from a dataset epoch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Continuous,
}

/// Typing of one behavioural dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub index: usize,
}

/// Checks that `specs` covers `0..d_u` exactly once with unique names.
pub fn validate_task_specs(specs: &[TaskSpec], d_u: usize) -> Result<()> {
    if specs.len() != d_u {
        return Err(Error::Config(format!(
            "expected {d_u} task specs, got {}",
            specs.len()
        )));
    }
    let mut seen = alloc::vec![false; d_u];
    for s in specs {
        if s.index >= d_u || seen[s.index] {
            return Err(Error::Config(format!(
                "task `{}` has duplicate or out-of-range index {}",
                s.name, s.index
            )));
        }
        seen[s.index] = true;
    }
    for (i, a) in specs.iter().enumerate() {
        if specs[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::Config(format!("duplicate task name `{}`", a.name)));
        }
    }
    Ok(())
}

/// Dim 0 is the binary activity flag, the rest are continuous engagement
/// metrics.
pub fn default_task_specs(d_u: usize) -> Vec<TaskSpec> {
    (0..d_u)
        .map(|index| TaskSpec {
            name: if index == 0 {
                String::from("active")
            } else {
                format!("engagement_{index}")
            },
            kind: if index == 0 {
                TaskKind::Binary
            } else {
                TaskKind::Continuous
            },
            index,
        })
        .collect()
}

/// Task kinds ordered by dimension index.
pub fn kinds_by_index(specs: &[TaskSpec], d_u: usize) -> Result<Vec<TaskKind>> {
    validate_task_specs(specs, d_u)?;
    let mut kinds = alloc::vec![TaskKind::Continuous; d_u];
    for s in specs {
        kinds[s.index] = s.kind;
    }
    Ok(kinds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub t_hist: usize,
    pub t_fut: usize,
}

impl WindowConfig {
    pub fn new(t_hist: usize, t_fut: usize) -> Result<Self> {
        if t_hist == 0 || t_fut == 0 {
            return Err(Error::Config(format!(
                "window lengths must be >= 1 (t_hist={t_hist}, t_fut={t_fut})"
            )));
        }
        Ok(Self { t_hist, t_fut })
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            t_hist: 360,
            t_fut: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    LogMinMax,
}

/// Fitted scaler. For `LogMinMax` the extrema live in `log1p` space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub data_min: f64,
    pub data_max: f64,
}

pub fn fit_scaler(values: &[f64], kind: ScalerKind) -> Result<ScalerParams> {
    if values.is_empty() {
        return Err(Error::Empty("fit_scaler values"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite value {v}")));
        }
        let t = match kind {
            ScalerKind::MinMax => v,
            ScalerKind::LogMinMax => {
                if v < 0.0 {
                    return Err(Error::InvalidValue(format!(
                        "negative value {v} under log_min_max"
                    )));
                }
                libm::log1p(v)
            }
        };
        lo = lo.min(t);
        hi = hi.max(t);
    }
    Ok(ScalerParams {
        kind,
        data_min: lo,
        data_max: hi,
    })
}

impl ScalerParams {
    /// Identity-on-[0,1] scaler used for binary dimensions.
    pub const UNIT: ScalerParams = ScalerParams {
        kind: ScalerKind::MinMax,
        data_min: 0.0,
        data_max: 1.0,
    };

    /// Scales one value into `[0, 1]`, clamping out-of-range inputs.
    pub fn apply(&self, v: f64) -> f64 {
        let t = match self.kind {
            ScalerKind::MinMax => v,
            ScalerKind::LogMinMax => libm::log1p(v.max(0.0)),
        };
        let range = self.data_max - self.data_min;
        if range <= 0.0 {
            return 0.0;
        }
        ((t - self.data_min) / range).clamp(0.0, 1.0)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        let t = self.data_min + s * (self.data_max - self.data_min);
        match self.kind {
            ScalerKind::MinMax => t,
            ScalerKind::LogMinMax => libm::expm1(t),
        }
    }
}

pub fn apply_scaler(values: &[f64], params: &ScalerParams) -> Vec<f64> {
    values.iter().map(|v| params.apply(*v)).collect()
}

pub fn inverse_scale(scaled: &[f64], params: &ScalerParams) -> Vec<f64> {
    scaled.iter().map(|v| params.inverse(*v)).collect()
}

/// Scalers for every user, supply and static feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScalers {
    pub user: Vec<ScalerParams>,
    pub supply: Vec<ScalerParams>,
    pub static_features: Vec<ScalerParams>,
}

/// Fits the scalers on a training split. Binary user dims keep the unit
/// scaler, continuous user dims get log_min_max over active-day values,
/// supply channels and static features get min_max.
pub fn fit_feature_scalers(
    records: &[UserRecord],
    calendar: &EventCalendar,
    kinds: &[TaskKind],
    d_static: usize,
) -> Result<FeatureScalers> {
    if records.is_empty() {
        return Err(Error::Empty("fit_feature_scalers records"));
    }
    let mut user = Vec::with_capacity(kinds.len());
    for (k, kind) in kinds.iter().enumerate() {
        user.push(match kind {
            TaskKind::Binary => ScalerParams::UNIT,
            TaskKind::Continuous => {
                let values: Vec<f64> = records
                    .iter()
                    .flat_map(|r| {
                        r.activity
                            .values()
                            .filter_map(move |row| row.get(k).copied())
                    })
                    .collect();
                if values.is_empty() {
                    ScalerParams::UNIT
                } else {
                    fit_scaler(&values, ScalerKind::LogMinMax)?
                }
            }
        });
    }
    let supply = (0..calendar.d_s)
        .map(|k| {
            let values: Vec<f64> = calendar.context.values().map(|row| row[k]).collect();
            fit_scaler(&values, ScalerKind::MinMax)
        })
        .collect::<Result<Vec<_>>>()?;
    let static_features = (0..d_static)
        .map(|k| {
            let values: Vec<f64> = records
                .iter()
                .map(|r| {
                    r.static_features.get(k).copied().ok_or_else(|| {
                        shape_err(
                            "UserRecord.static_features",
                            d_static,
                            r.static_features.len(),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            fit_scaler(&values, ScalerKind::MinMax)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureScalers {
        user,
        supply,
        static_features,
    })
}

/// One user's raw history. Absent days carry no activity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub registration_day: i64,
    pub static_features: Vec<f64>,
    pub activity: BTreeMap<i64, Vec<f64>>,
}

impl UserRecord {
    /// Checks the record invariants against the expected widths.
    pub fn validate(&self, d_u: usize, d_static: usize) -> Result<()> {
        if self.static_features.len() != d_static {
            return Err(shape_err(
                "UserRecord.static_features",
                d_static,
                self.static_features.len(),
            ));
        }
        for (day, row) in &self.activity {
            if *day < self.registration_day {
                return Err(Error::InvalidValue(format!(
                    "user {} active on day {day} before registration {}",
                    self.user_id, self.registration_day
                )));
            }
            if row.len() != d_u {
                return Err(shape_err("UserRecord.activity", d_u, row.len()));
            }
        }
        Ok(())
    }
}

/// Exogenous event context per day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventCalendar {
    pub d_s: usize,
    pub context: BTreeMap<i64, Vec<f64>>,
}

impl EventCalendar {
    pub fn get(&self, day: i64) -> Result<&[f64]> {
        self.context
            .get(&day)
            .map(Vec::as_slice)
            .ok_or(Error::CalendarGap(day))
    }

    /// Days with at least one nonzero context channel among `channels`.
    pub fn is_event_day(&self, day: i64, channels: core::ops::Range<usize>) -> bool {
        self.context
            .get(&day)
            .is_some_and(|c| c[channels].iter().any(|v| *v != 0.0))
    }
}

/// Aligned history / future windows for one user at one as-of day.
///
/// `user_hist`, `supply_*`, `static_features` and `targets` are in scaled
/// space; `targets_raw` keeps the original units for MAPE reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub user_id: String,
    pub as_of_day: i64,
    pub user_hist: Mat<f64>,
    pub pad_mask: Vec<bool>,
    pub activity_mask: Mat<bool>,
    pub supply_hist: Mat<f64>,
    pub supply_fut: Mat<f64>,
    pub static_features: Vec<f64>,
    pub targets: Mat<f64>,
    pub targets_raw: Mat<f64>,
}

impl TrainingSample {
    pub fn t_hist(&self) -> usize {
        self.user_hist.rows()
    }

    pub fn t_fut(&self) -> usize {
        self.targets.rows()
    }

    pub fn pad_count(&self) -> usize {
        self.pad_mask.iter().filter(|p| **p).count()
    }
}

/// First as-of day for which a full window exists and the user is registered.
pub fn earliest_as_of(record: &UserRecord, window: &WindowConfig, first_day: i64) -> i64 {
    record
        .registration_day
        .max(first_day + window.t_hist as i64 - 1)
}

/// Assembles the sample for `record` as of `as_of_day`.
///
/// History covers `[as_of_day − t_hist + 1, as_of_day]`, targets cover
/// `(as_of_day, as_of_day + t_fut]`. Pre-registration history rows are zero
/// and flagged in `pad_mask`; inactive days are zero rows whose
/// `activity_mask` row (future side) is false.
pub fn build_sample(
    record: &UserRecord,
    calendar: &EventCalendar,
    as_of_day: i64,
    window: &WindowConfig,
    scalers: &FeatureScalers,
) -> Result<TrainingSample> {
    if as_of_day < record.registration_day {
        return Err(Error::BeforeRegistration {
            as_of_day,
            registration_day: record.registration_day,
        });
    }
    let d_u = scalers.user.len();
    let d_s = scalers.supply.len();
    if calendar.d_s != d_s {
        return Err(shape_err("calendar context width", d_s, calendar.d_s));
    }
    record.validate(d_u, scalers.static_features.len())?;

    let start = as_of_day - window.t_hist as i64 + 1;
    let scale_user = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&scalers.user)
            .map(|(v, p)| p.apply(*v))
            .collect()
    };
    let scale_supply = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&scalers.supply)
            .map(|(v, p)| p.apply(*v))
            .collect()
    };

    let mut user_hist = Mat::zeros(window.t_hist, d_u);
    let mut supply_hist = Mat::zeros(window.t_hist, d_s);
    let mut pad_mask = Vec::with_capacity(window.t_hist);
    for (t, day) in (start..=as_of_day).enumerate() {
        supply_hist
            .row_mut(t)
            .copy_from_slice(&scale_supply(calendar.get(day)?));
        let pad = day < record.registration_day;
        pad_mask.push(pad);
        if !pad {
            if let Some(row) = record.activity.get(&day) {
                user_hist.row_mut(t).copy_from_slice(&scale_user(row));
            }
        }
    }

    let mut supply_fut = Mat::zeros(window.t_fut, d_s);
    let mut targets = Mat::zeros(window.t_fut, d_u);
    let mut targets_raw = Mat::zeros(window.t_fut, d_u);
    let mut activity_mask = Mat::filled(window.t_fut, d_u, false);
    for (t, day) in (as_of_day + 1..=as_of_day + window.t_fut as i64).enumerate() {
        supply_fut
            .row_mut(t)
            .copy_from_slice(&scale_supply(calendar.get(day)?));
        if let Some(row) = record.activity.get(&day) {
            targets.row_mut(t).copy_from_slice(&scale_user(row));
            targets_raw.row_mut(t).copy_from_slice(row);
            activity_mask.row_mut(t).fill(true);
        }
    }

    let static_features = record
        .static_features
        .iter()
        .zip(&scalers.static_features)
        .map(|(v, p)| p.apply(*v))
        .collect();

    Ok(TrainingSample {
        user_id: record.user_id.clone(),
        as_of_day,
        user_hist,
        pad_mask,
        activity_mask,
        supply_hist,
        supply_fut,
        static_features,
        targets,
        targets_raw,
    })
}

/// Zeroes the past and/or future supply blocks.
pub fn mask_supply(sample: &TrainingSample, mask_past: bool, mask_future: bool) -> TrainingSample {
    let mut out = sample.clone();
    if mask_past {
        out.supply_hist.as_mut_slice().fill(0.0);
    }
    if mask_future {
        out.supply_fut.as_mut_slice().fill(0.0);
    }
    out
}

/// Every invariant violation found in `sample`; empty when well formed.
pub fn validate_sample(sample: &TrainingSample, tasks: &[TaskSpec]) -> Vec<String> {
    let mut v = Vec::new();
    let t_hist = sample.user_hist.rows();
    let t_fut = sample.targets.rows();
    let d_u = sample.user_hist.cols();
    if sample.pad_mask.len() != t_hist {
        v.push(format!(
            "pad_mask length {} != t_hist {t_hist}",
            sample.pad_mask.len()
        ));
    }
    if sample.supply_hist.rows() != t_hist {
        v.push(format!(
            "supply_hist has {} rows, expected {t_hist}",
            sample.supply_hist.rows()
        ));
    }
    if sample.supply_fut.rows() != t_fut || sample.supply_fut.cols() != sample.supply_hist.cols() {
        v.push(format!(
            "supply_fut shape {} inconsistent with t_fut {t_fut} / d_s {}",
            sample.supply_fut.shape_string(),
            sample.supply_hist.cols()
        ));
    }
    if sample.targets.cols() != d_u
        || sample.activity_mask.shape() != sample.targets.shape()
        || sample.targets_raw.shape() != sample.targets.shape()
    {
        v.push(format!(
            "targets {} / activity_mask {} / targets_raw {} disagree with d_u {d_u}",
            sample.targets.shape_string(),
            sample.activity_mask.shape_string(),
            sample.targets_raw.shape_string()
        ));
    }
    if let Some(first_real) = sample.pad_mask.iter().position(|p| !p) {
        if let Some(late) = sample.pad_mask[first_real..].iter().position(|p| *p) {
            v.push(format!(
                "pad positions are not a prefix: position {} padded after real position {first_real}",
                first_real + late
            ));
        }
    } else if !sample.pad_mask.is_empty() {
        v.push("every history position is padded".into());
    }
    for (name, m) in [
        ("user_hist", &sample.user_hist),
        ("supply_hist", &sample.supply_hist),
        ("supply_fut", &sample.supply_fut),
        ("targets", &sample.targets),
    ] {
        if !m.is_finite() {
            v.push(format!("{name} contains non-finite values"));
        }
    }
    for task in tasks {
        if task.index >= d_u {
            v.push(format!(
                "task `{}` index {} >= d_u {d_u}",
                task.name, task.index
            ));
            continue;
        }
        if task.kind == TaskKind::Binary && sample.targets.cols() == d_u {
            for r in 0..sample.targets.rows() {
                let x = *sample.targets.get(r, task.index);
                if x != 0.0 && x != 1.0 {
                    v.push(format!(
                        "binary task `{}` has target {x} at future step {r}",
                        task.name
                    ));
                }
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const E: f64 = core::f64::consts::E;

    fn scalers(d_u: usize, d_s: usize, d_static: usize) -> FeatureScalers {
        FeatureScalers {
            user: vec![ScalerParams::UNIT; d_u],
            supply: vec![ScalerParams::UNIT; d_s],
            static_features: vec![ScalerParams::UNIT; d_static],
        }
    }

    fn calendar(days: core::ops::Range<i64>) -> EventCalendar {
        EventCalendar {
            d_s: 1,
            context: days.map(|d| (d, vec![(d % 2) as f64])).collect(),
        }
    }

    fn record(reg: i64, active: impl Iterator<Item = i64>) -> UserRecord {
        UserRecord {
            user_id: "u1".into(),
            registration_day: reg,
            static_features: vec![0.5],
            activity: active.map(|d| (d, vec![1.0, 0.25])).collect(),
        }
    }

    fn tasks() -> Vec<TaskSpec> {
        vec![
            TaskSpec {
                name: "active".into(),
                kind: TaskKind::Binary,
                index: 0,
            },
            TaskSpec {
                name: "spend".into(),
                kind: TaskKind::Continuous,
                index: 1,
            },
        ]
    }

    #[test]
    fn fit_scaler_examples() {
        let p = fit_scaler(&[0.0, 5.0, 10.0], ScalerKind::MinMax).unwrap();
        assert_eq!((p.data_min, p.data_max), (0.0, 10.0));
        let p = fit_scaler(&[0.0, E - 1.0, E * E - 1.0], ScalerKind::LogMinMax).unwrap();
        assert!(p.data_min.abs() < 1e-12 && (p.data_max - 2.0).abs() < 1e-12);
        let p = fit_scaler(&[7.0], ScalerKind::MinMax).unwrap();
        assert_eq!((p.data_min, p.data_max), (7.0, 7.0));
    }

    #[test]
    fn fit_scaler_errors() {
        assert_eq!(
            fit_scaler(&[], ScalerKind::MinMax),
            Err(Error::Empty("fit_scaler values"))
        );
        assert!(matches!(
            fit_scaler(&[1.0, -0.5], ScalerKind::LogMinMax),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn apply_and_inverse_examples() {
        let mm = ScalerParams {
            kind: ScalerKind::MinMax,
            data_min: 0.0,
            data_max: 10.0,
        };
        let lg = ScalerParams {
            kind: ScalerKind::LogMinMax,
            data_min: 0.0,
            data_max: 2.0,
        };
        assert_eq!(mm.apply(5.0), 0.5);
        assert!((lg.apply(E - 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(mm.apply(20.0), 1.0);
        assert_eq!(mm.inverse(0.5), 5.0);
        assert!((lg.inverse(1.0) - (E * E - 1.0)).abs() < 1e-12);
        let degenerate = ScalerParams {
            kind: ScalerKind::MinMax,
            data_min: 7.0,
            data_max: 7.0,
        };
        assert_eq!(degenerate.apply(7.0), 0.0);
        assert_eq!(degenerate.apply(100.0), 0.0);
    }

    #[test]
    fn pad_count_for_recent_registration() {
        let window = WindowConfig::new(360, 7).unwrap();
        let cal = EventCalendar {
            d_s: 1,
            context: (0..1000).map(|d| (d, vec![0.0])).collect(),
        };
        let as_of = 500;
        let rec = record(as_of - 99, core::iter::empty());
        let s = build_sample(&rec, &cal, as_of, &window, &scalers(2, 1, 1)).unwrap();
        assert_eq!(s.pad_count(), 260);
        assert!(s.pad_mask[..260].iter().all(|p| *p));
        assert!(validate_sample(&s, &tasks()).is_empty());
    }

    #[test]
    fn fully_active_user_has_no_pads_and_full_mask() {
        let window = WindowConfig::new(5, 2).unwrap();
        let rec = record(0, 0..20);
        let s = build_sample(&rec, &calendar(0..20), 10, &window, &scalers(2, 1, 1)).unwrap();
        assert!(s.pad_mask.iter().all(|p| !p));
        assert!(s.activity_mask.as_slice().iter().all(|m| *m));
        assert_eq!(s.supply_hist.as_slice(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.targets.row(0), &[1.0, 0.25]);
    }

    #[test]
    fn inactive_future_day_keeps_row_with_false_mask() {
        let window = WindowConfig::new(5, 3).unwrap();
        let rec = record(0, (0..20).filter(|d| *d != 12));
        let s = build_sample(&rec, &calendar(0..20), 10, &window, &scalers(2, 1, 1)).unwrap();
        assert_eq!(s.targets.rows(), 3);
        assert_eq!(s.activity_mask.row(1), &[false, false]);
        assert_eq!(s.targets.row(1), &[0.0, 0.0]);
        assert_eq!(s.activity_mask.row(0), &[true, true]);
    }

    #[test]
    fn build_sample_errors() {
        let window = WindowConfig::new(5, 2).unwrap();
        let rec = record(8, 8..20);
        assert_eq!(
            build_sample(&rec, &calendar(0..20), 7, &window, &scalers(2, 1, 1)),
            Err(Error::BeforeRegistration {
                as_of_day: 7,
                registration_day: 8
            })
        );
        let rec = record(0, 0..20);
        assert_eq!(
            build_sample(&rec, &calendar(0..11), 10, &window, &scalers(2, 1, 1)),
            Err(Error::CalendarGap(11))
        );
    }

    #[test]
    fn mask_supply_rows() {
        let window = WindowConfig::new(5, 2).unwrap();
        let s = build_sample(
            &record(0, 0..20),
            &calendar(0..20),
            10,
            &window,
            &scalers(2, 1, 1),
        )
        .unwrap();
        assert_eq!(mask_supply(&s, false, false), s);
        let both = mask_supply(&s, true, true);
        assert!(both.supply_hist.as_slice().iter().all(|v| *v == 0.0));
        assert!(both.supply_fut.as_slice().iter().all(|v| *v == 0.0));
        let fut = mask_supply(&s, false, true);
        assert_eq!(fut.supply_hist, s.supply_hist);
        assert!(fut.supply_fut.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(fut.user_hist, s.user_hist);
    }

    #[test]
    fn validate_reports_prefix_and_domain_violations() {
        let window = WindowConfig::new(8, 2).unwrap();
        let mut s = build_sample(
            &record(0, 0..20),
            &calendar(0..20),
            10,
            &window,
            &scalers(2, 1, 1),
        )
        .unwrap();
        assert!(validate_sample(&s, &tasks()).is_empty());
        s.pad_mask[5] = true;
        let v = validate_sample(&s, &tasks());
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("prefix"));
        s.pad_mask[5] = false;
        s.targets.set(0, 0, 0.3);
        let v = validate_sample(&s, &tasks());
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("binary"));
    }

    #[test]
    fn task_spec_validation() {
        assert!(validate_task_specs(&tasks(), 2).is_ok());
        let mut t = tasks();
        t[1].index = 0;
        assert!(validate_task_specs(&t, 2).is_err());
        let mut t = tasks();
        t[1].name = "active".into();
        assert!(validate_task_specs(&t, 2).is_err());
        assert!(validate_task_specs(&tasks(), 3).is_err());
    }
}
