use std::sync::atomic::{AtomicU64, Ordering};

/// Instrumented arithmetic counters. Kernels add their loop trip counts here
/// when a counter is supplied.
#[derive(Debug, Default)]
pub struct OpCounter {
    mults: AtomicU64,
    adds: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mults(&self) -> u64 {
        self.mults.load(Ordering::Relaxed)
    }

    pub fn adds(&self) -> u64 {
        self.adds.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.mults.store(0, Ordering::Relaxed);
        self.adds.store(0, Ordering::Relaxed);
    }

    pub(crate) fn record(counter: Option<&Self>, mults: u64, adds: u64) {
        if let Some(c) = counter {
            c.mults.fetch_add(mults, Ordering::Relaxed);
            c.adds.fetch_add(adds, Ordering::Relaxed);
        }
    }
}
