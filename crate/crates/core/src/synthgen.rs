//! Synthetic event calendar and event-driven user population.
//!
//! Activity on day `t` fires with probability `clamp(base_rate + affinity·s_t)`
//! until a per-day churn hazard fires, after which the user is silent for
//! good. Future event context is therefore genuinely predictive of future
//! activity, which is what the cross-attention decoder is meant to exploit.
//!
//! Every user draws from its own ChaCha stream, so users can be simulated in
//! any order (or in parallel) with identical results.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{EventCalendar, UserRecord};
use crate::error::{Error, Result};

/// Sigma of the log-normal continuous features.
pub const LOG_NORMAL_SIGMA: f64 = 0.5;
/// Length of the annual tournament block of event type 0.
pub const TOURNAMENT_DAYS: i64 = 14;
/// Day-of-year on which the tournament starts.
pub const TOURNAMENT_START: i64 = 150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_days: usize,
    pub d_u: usize,
    pub d_s: usize,
    pub d_static: usize,
    pub n_event_types: usize,
    pub seed: u64,
    pub archetype_mix: Vec<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 2_000,
            n_days: 540,
            d_u: 4,
            d_s: 3,
            d_static: 4,
            n_event_types: 2,
            seed: 42,
            archetype_mix: vec![0.3, 0.3, 0.25, 0.15],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_u", self.d_u),
            ("d_s", self.d_s),
            ("d_static", self.d_static),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("generator.{name} must be >= 1")));
            }
        }
        if self.n_event_types > self.d_s {
            return Err(Error::Config(format!(
                "generator.n_event_types ({}) exceeds d_s ({})",
                self.n_event_types, self.d_s
            )));
        }
        if self.archetype_mix.is_empty()
            || self
                .archetype_mix
                .iter()
                .any(|p| !p.is_finite() || *p < 0.0)
        {
            return Err(Error::Config(
                "generator.archetype_mix must be a non-empty vector of probabilities".into(),
            ));
        }
        let total: f64 = self.archetype_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "generator.archetype_mix sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Index of the continuous intensity channel, if the context has room.
    pub fn intensity_channel(&self) -> Option<usize> {
        (self.n_event_types > 0 && self.n_event_types < self.d_s).then_some(self.n_event_types)
    }

    pub fn registration_cutoff(&self) -> i64 {
        (self.n_days as i64 * 4) / 5
    }
}

/// Behavioural archetype driving a user's generative process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub id: usize,
    pub affinity: Vec<f64>,
    pub base_rate: f64,
    pub churn_hazard: f64,
}

impl Archetype {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.base_rate) || !ok(self.churn_hazard) || !self.affinity.iter().all(|a| ok(*a)) {
            return Err(Error::InvalidValue(format!(
                "archetype {} has probabilities outside [0,1]",
                self.id
            )));
        }
        Ok(())
    }

    /// Activity probability on a day with context `s`.
    pub fn activity_probability(&self, s: &[f64]) -> f64 {
        let lift: f64 = self.affinity.iter().zip(s).map(|(a, x)| a * x).sum();
        (self.base_rate + lift).clamp(0.0, 1.0)
    }
}

// (base_rate, event strength, churn hazard)
const PRESETS: [(f64, f64, f64); 4] = [
    (0.05, 0.60, 0.001),
    (0.40, 0.15, 0.002),
    (0.10, 0.35, 0.004),
    (0.25, 0.05, 0.008),
];

/// Archetypes for every entry of `archetype_mix`, cycling the built-in presets.
pub fn archetypes(config: &GeneratorConfig) -> Vec<Archetype> {
    (0..config.archetype_mix.len())
        .map(|id| {
            let (base_rate, strength, churn_hazard) = PRESETS[id % PRESETS.len()];
            let mut affinity = vec![0.0; config.d_s];
            for (k, a) in affinity.iter_mut().enumerate().take(config.n_event_types) {
                *a = if k == 0 { strength } else { 0.6 * strength };
            }
            if let Some(c) = config.intensity_channel() {
                affinity[c] = 0.4 * strength;
            }
            Archetype {
                id,
                affinity,
                base_rate,
                churn_hazard,
            }
        })
        .collect()
}

/// A user before activity simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserShell {
    pub user_id: String,
    pub index: u64,
    pub archetype: Archetype,
    pub registration_day: i64,
    pub static_features: Vec<f64>,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const CALENDAR_STREAM: u64 = u64::MAX;

/// Weekly (type 0), fortnightly (type 1), ... events with a random intensity,
/// plus an annual daily tournament block on event type 0.
pub fn generate_calendar(config: &GeneratorConfig) -> EventCalendar {
    let mut rng = stream(config.seed, CALENDAR_STREAM);
    let intensity = config.intensity_channel();
    let mut context = BTreeMap::new();
    for day in 0..config.n_days as i64 {
        let mut row = vec![0.0; config.d_s];
        let mut level: f64 = 0.0;
        for k in 0..config.n_event_types {
            let period = 7 * (k as i64 + 1);
            if day.rem_euclid(period) == (2 * k as i64 + 1) % period {
                row[k] = 1.0;
                level = level.max(rng.random_range(0.3..0.8));
            }
        }
        let doy = day.rem_euclid(365);
        if config.n_event_types > 0
            && (TOURNAMENT_START..TOURNAMENT_START + TOURNAMENT_DAYS).contains(&doy)
        {
            row[0] = 1.0;
            level = 1.0;
        }
        if let Some(c) = intensity {
            row[c] = level;
        }
        context.insert(day, row);
    }
    EventCalendar {
        d_s: config.d_s,
        context,
    }
}

pub fn user_id(index: u64) -> String {
    format!("u{index:06}")
}

/// Draws archetype, registration day and static features for every user.
pub fn generate_users(config: &GeneratorConfig) -> Result<Vec<UserShell>> {
    config.validate()?;
    let types = archetypes(config);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidValue(format!("{e}")))?;
    let cutoff = config.registration_cutoff().max(0);
    let shells = (0..config.n_users as u64)
        .map(|index| {
            let mut rng = stream(config.seed, 2 * index);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = types.len() - 1;
            for (i, p) in config.archetype_mix.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let archetype = types[pick].clone();
            let registration_day = rng.random_range(0..=cutoff);
            let static_features = (0..config.d_static)
                .map(|j| {
                    let signal = if j == archetype.id % config.d_static {
                        1.0
                    } else {
                        0.0
                    };
                    signal + noise.sample(&mut rng)
                })
                .collect();
            UserShell {
                user_id: user_id(index),
                index,
                archetype,
                registration_day,
                static_features,
            }
        })
        .collect();
    Ok(shells)
}

/// Simulates daily activity from registration through the last day.
///
/// Dimension 0 is the activity indicator; continuous dimensions are
/// log-normal with multiplicative event lift.
pub fn simulate_activity(
    user: &UserShell,
    calendar: &EventCalendar,
    config: &GeneratorConfig,
) -> Result<UserRecord> {
    user.archetype.validate()?;
    let mut rng = stream(config.seed, 2 * user.index + 1);
    let dists: Vec<LogNormal<f64>> = (1..config.d_u)
        .map(|j| LogNormal::new(0.5 + 0.75 * j as f64, LOG_NORMAL_SIGMA))
        .collect::<core::result::Result<_, _>>()
        .map_err(|e| Error::InvalidValue(format!("{e}")))?;
    let mut activity = BTreeMap::new();
    for day in user.registration_day.max(0)..config.n_days as i64 {
        let s = calendar.get(day)?;
        let p = user.archetype.activity_probability(s);
        if rng.random::<f64>() < p {
            let lift: f64 = user
                .archetype
                .affinity
                .iter()
                .zip(s)
                .map(|(a, x)| a * x)
                .sum();
            let mut row = Vec::with_capacity(config.d_u);
            row.push(1.0);
            for d in &dists {
                row.push(d.sample(&mut rng) * (1.0 + lift));
            }
            activity.insert(day, row);
        }
        if rng.random::<f64>() < user.archetype.churn_hazard {
            break;
        }
    }
    Ok(UserRecord {
        user_id: user.user_id.clone(),
        registration_day: user.registration_day,
        static_features: user.static_features.clone(),
        activity,
    })
}

/// Calendar plus every simulated user record.
pub fn generate_population(config: &GeneratorConfig) -> Result<(EventCalendar, Vec<UserRecord>)> {
    let calendar = generate_calendar(config);
    let records = generate_users(config)?
        .iter()
        .map(|u| simulate_activity(u, &calendar, config))
        .collect::<Result<Vec<_>>>()?;
    Ok((calendar, records))
}

/// Free-standing random sample with the given window and feature widths, for
/// shape and gradient checks that need no population. Dim 0 is a 0/1 target,
/// the others continuous; the first `n_pad` history rows are padding.
pub fn random_sample(
    t_hist: usize,
    t_fut: usize,
    d_u: usize,
    d_s: usize,
    d_static: usize,
    n_pad: usize,
    seed: u64,
) -> crate::datamodel::TrainingSample {
    use crate::tensor::Mat;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_hist = Mat::zeros(t_hist, d_u);
    for t in n_pad.min(t_hist)..t_hist {
        for k in 0..d_u {
            user_hist.set(t, k, rng.random::<f64>());
        }
    }
    let mut supply = |rows: usize| {
        let mut m = Mat::zeros(rows, d_s);
        for v in m.as_mut_slice() {
            *v = if rng.random::<f64>() < 0.3 {
                rng.random::<f64>()
            } else {
                0.0
            };
        }
        m
    };
    let supply_hist = supply(t_hist);
    let supply_fut = supply(t_fut);
    let mut targets = Mat::zeros(t_fut, d_u);
    let mut activity_mask = Mat::filled(t_fut, d_u, false);
    for t in 0..t_fut {
        let active = rng.random::<f64>() < 0.7;
        for k in 0..d_u {
            activity_mask.set(t, k, active);
            let v = if !active {
                0.0
            } else if k == 0 {
                1.0
            } else {
                rng.random::<f64>()
            };
            targets.set(t, k, v);
        }
    }
    crate::datamodel::TrainingSample {
        user_id: user_id(seed),
        as_of_day: t_hist as i64 - 1,
        user_hist,
        pad_mask: (0..t_hist).map(|t| t < n_pad).collect(),
        activity_mask,
        supply_hist,
        supply_fut,
        static_features: (0..d_static).map(|_| rng.random::<f64>()).collect(),
        targets_raw: targets.clone(),
        targets,
    }
}
