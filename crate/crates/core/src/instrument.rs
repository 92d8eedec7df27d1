//! Entry counters for the banded recursions. Active in unit tests and with the
//! `instrument` feature; otherwise every call compiles to nothing.

#[cfg(any(test, feature = "instrument"))]
mod imp {
    use std::cell::Cell;

    thread_local! {
        static TOUCHED: Cell<u64> = const { Cell::new(0) };
    }

    #[inline]
    pub fn add(n: usize) {
        TOUCHED.with(|c| c.set(c.get() + n as u64));
    }

    /// Returns and resets the calling thread's counter.
    pub fn take() -> u64 {
        TOUCHED.with(|c| c.replace(0))
    }
}

#[cfg(not(any(test, feature = "instrument")))]
mod imp {
    #[inline(always)]
    pub fn add(_n: usize) {}

    pub fn take() -> u64 {
        0
    }
}

pub use imp::{add, take};

/// True when counters are compiled in.
pub const ENABLED: bool = cfg!(any(test, feature = "instrument"));
