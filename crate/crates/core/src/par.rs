//! Replica-parallel map with results returned in a fixed order.
//!
//! Work is split into chunks whose boundaries depend only on the replica count, never on
//! the worker count, and chunk results come back in chunk order. Callers fold them
//! sequentially, so every reduction is bit-identical for any number of workers.

use std::ops::Range;

/// Replicas per chunk.
pub const CHUNK: usize = 16;

pub fn chunks(replicas: usize) -> Vec<Range<usize>> {
    (0..replicas.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(replicas))
        .collect()
}

/// Runs `f` on every chunk of `0..replicas` using up to `workers` threads.
pub fn map_chunks<T, F>(replicas: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(replicas);
    run(ranges, workers, f)
}

/// Runs `f` on every replica index, returning results in index order.
pub fn map_replicas<T, F>(replicas: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks(replicas, workers, |r| r.map(&f).collect::<Vec<T>>())
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(feature = "parallel")]
fn run<T, F>(ranges: Vec<Range<usize>>, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return ranges.into_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| ranges.into_par_iter().map(&f).collect()),
        Err(_) => ranges.into_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<T, F>(ranges: Vec<Range<usize>>, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    ranges.into_iter().map(f).collect()
}
