//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool of
//! the requested width. Without it every [`Parallelism`] runs sequentially.
//! Output order always matches input order.

use serde::{Deserialize, Serialize};

/// How many workers a batch may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parallelism {
    Sequential,
    Threads(usize),
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::Threads(4)
    }
}

impl Parallelism {
    /// One worker per available core.
    pub fn available() -> Self {
        let n = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        Parallelism::Threads(n)
    }

    pub fn from_width(n: usize) -> Self {
        if n <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(n)
        }
    }

    pub fn width(self) -> usize {
        match self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n.max(1),
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(par: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match par {
        Parallelism::Threads(n) if n > 1 && items.len() > 1 => parallel_map(n, items, f),
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    pool(threads).install(|| items.par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(_threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn pool(threads: usize) -> std::sync::Arc<rayon::ThreadPool> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = pools.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(threads)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("ehrbench-{threads}-{i}"))
                    .build()
                    .expect("thread pool"),
            )
        })
        .clone()
}
