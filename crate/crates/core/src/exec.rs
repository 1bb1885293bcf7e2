//! Pluggable map over independent jobs.
//!
//! The core only ships the sequential executor; the `fhrformer` crate adds
//! a thread pool. Callers always reduce the returned vector in index order,
//! so results never depend on the executor.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        (0..jobs).map(f).collect()
    }
}
