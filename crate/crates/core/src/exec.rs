//! Sequential / data-parallel execution of independent work items.
//!
//! Every helper here produces bit-identical output in both modes: work items
//! are independent and each one is evaluated by the same sequential code, so
//! switching modes never changes a trace.

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled and
    /// falls back to sequential execution otherwise.
    Parallel,
}

impl Default for Mode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel
        } else {
            Mode::Sequential
        }
    }
}

impl Mode {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Mode::Parallel
    }
}

/// Below this many scalar multiply-adds per call, splitting is slower than
/// running inline.
pub const PAR_WORK_THRESHOLD: usize = 1 << 15;

/// Fills `out[i] = f(i)` for every index.
///
/// `work_per_item` is a rough flop count used to skip threading for small
/// problems.
pub fn fill<F>(mode: Mode, out: &mut [f64], work_per_item: usize, f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && out.len().saturating_mul(work_per_item) >= PAR_WORK_THRESHOLD {
        use rayon::prelude::*;
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i));
        return;
    }
    let _ = (mode, work_per_item);
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: Mode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}
