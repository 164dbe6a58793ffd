//! Worker-aware streaming of training samples from a partitioned dataset.
//!
//! Worker `w` of `n` owns a contiguous block of `P / n` partitions; the
//! `P mod n` leftovers go one each to the first workers instead of being
//! dropped. A worker holds at most one decoded partition plus one batch.

use std::collections::VecDeque;

use anyhow::{bail, Result};
use lumos_core::datamodel::{build_sample, earliest_as_of, mask_supply, TrainingSample, UserRecord, WindowConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::Dataset;

/// Partitions owned by `worker_id`, in streaming order.
pub fn assign_partitions(n_partitions: usize, worker_id: usize, n_workers: usize) -> Result<Vec<usize>> {
    if n_workers == 0 || worker_id >= n_workers {
        bail!("worker_id {worker_id} out of range for {n_workers} workers");
    }
    if n_partitions < n_workers {
        bail!("{n_partitions} partitions cannot feed {n_workers} workers");
    }
    let per = n_partitions / n_workers;
    let mut out: Vec<usize> = (worker_id * per..(worker_id + 1) * per).collect();
    let leftover = n_workers * per + worker_id;
    if leftover < n_partitions {
        out.push(leftover);
    }
    Ok(out)
}

/// Which as-of day a user's sample is cut at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsOfPolicy {
    /// The last day with a complete target window. Used for evaluation.
    Latest,
    /// Uniform over every valid as-of day, redrawn each epoch.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    pub window: WindowConfig,
    pub as_of: AsOfPolicy,
    pub mask_past_supply: bool,
    pub mask_future_supply: bool,
}

/// Valid as-of range of a record, or `None` when no full window fits.
pub fn as_of_range(record: &UserRecord, dataset: &Dataset, window: &WindowConfig) -> Option<(i64, i64)> {
    let lo = earliest_as_of(record, window, dataset.manifest.first_day);
    let hi = dataset.manifest.last_day - window.t_fut as i64;
    (lo <= hi).then_some((lo, hi))
}

fn make_sample(
    record: &UserRecord,
    dataset: &Dataset,
    options: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<TrainingSample>> {
    let Some((lo, hi)) = as_of_range(record, dataset, &options.window) else {
        return Ok(None);
    };
    let as_of = match options.as_of {
        AsOfPolicy::Latest => hi,
        AsOfPolicy::Random => rng.random_range(lo..=hi),
    };
    let s = build_sample(record, &dataset.calendar, as_of, &options.window, &dataset.manifest.scalers)?;
    Ok(Some(if options.mask_past_supply || options.mask_future_supply {
        mask_supply(&s, options.mask_past_supply, options.mask_future_supply)
    } else {
        s
    }))
}

/// Every sample of one partition, shuffled by `epoch_seed`.
pub fn partition_samples(
    dataset: &Dataset,
    partition: usize,
    options: &SampleOptions,
    epoch_seed: u64,
) -> Result<Vec<TrainingSample>> {
    let mut records = dataset.partition(partition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    rng.set_stream(partition as u64);
    records.shuffle(&mut rng);
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        if let Some(s) = make_sample(r, dataset, options, &mut rng)? {
            out.push(s);
        }
    }
    Ok(out)
}

/// Iterator over batches for one worker and epoch.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    partitions: VecDeque<usize>,
    buffer: VecDeque<TrainingSample>,
    options: SampleOptions,
    batch_size: usize,
    epoch_seed: u64,
}

pub fn stream_batches<'a>(
    dataset: &'a Dataset,
    worker_id: usize,
    n_workers: usize,
    options: SampleOptions,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchStream<'a>> {
    if batch_size == 0 {
        bail!("batch_size must be >= 1");
    }
    let partitions = assign_partitions(dataset.n_partitions(), worker_id, n_workers)?.into();
    Ok(BatchStream {
        dataset,
        partitions,
        buffer: VecDeque::new(),
        options,
        batch_size,
        epoch_seed,
    })
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Vec<TrainingSample>>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.buffer.len() < self.batch_size {
            let Some(p) = self.partitions.pop_front() else {
                break;
            };
            match partition_samples(self.dataset, p, &self.options, self.epoch_seed) {
                Ok(s) => self.buffer.extend(s),
                Err(e) => return Some(Err(e)),
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let n = self.batch_size.min(self.buffer.len());
        Some(Ok(self.buffer.drain(..n).collect()))
    }
}

/// All samples of a dataset in partition order, for evaluation.
pub fn load_all(dataset: &Dataset, options: &SampleOptions, seed: u64) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for p in 0..dataset.n_partitions() {
        out.extend(partition_samples(dataset, p, options, seed)?);
    }
    Ok(out)
}

/// Samples of every user for whom `as_of_day` is a valid cut, in partition
/// order. Supply masks of `options` apply; its as-of policy is ignored.
pub fn samples_as_of(dataset: &Dataset, options: &SampleOptions, as_of_day: i64) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for p in 0..dataset.n_partitions() {
        for r in dataset.partition(p)? {
            let Some((lo, hi)) = as_of_range(&r, dataset, &options.window) else {
                continue;
            };
            if (lo..=hi).contains(&as_of_day) {
                let s = build_sample(&r, &dataset.calendar, as_of_day, &options.window, &dataset.manifest.scalers)?;
                out.push(mask_supply(&s, options.mask_past_supply, options.mask_future_supply));
            }
        }
    }
    Ok(out)
}
