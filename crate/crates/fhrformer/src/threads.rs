//! Scoped thread pool implementing the core `Executor`.
//!
//! Jobs are claimed from a shared counter and results are stored by index,
//! so the output is identical to the sequential executor whatever the
//! scheduling.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fhrformer_core::exec::Executor;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FHRF_THREADS";

#[derive(Debug, Clone, Copy)]
pub struct ThreadPool {
    workers: NonZeroUsize,
}

impl ThreadPool {
    pub fn new(workers: NonZeroUsize) -> Self {
        Self { workers }
    }

    /// Available parallelism, capped by `FHRF_THREADS` when set.
    pub fn from_env() -> Self {
        let avail = std::thread::available_parallelism().unwrap_or(NonZeroUsize::MIN);
        let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<NonZeroUsize>().ok());
        Self::new(cap.map_or(avail, |c| c.min(avail)))
    }

    pub fn workers(&self) -> usize {
        self.workers.get()
    }
}

impl Executor for ThreadPool {
    fn map<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        let threads = self.workers.get().min(jobs);
        if threads <= 1 {
            return (0..jobs).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let r = f(i);
                    *slots[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("every job ran")).collect()
    }
}
