//! Execution-mode shim: data-parallel map with a sequential fallback.
//!
//! The parallel path is only used for embarrassingly parallel sweeps (one
//! independent solve per execution order); results are collected in input
//! order, so both modes produce identical output.

/// How independent work items of a sweep are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    /// Plain in-order loop.
    Sequential,
    /// Rayon work-stealing pool, order-preserving collect.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}

/// Maps `f` over `items`, preserving order regardless of mode.
pub fn map_ordered<T, U, F>(items: &[T], mode: ExecMode, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
    }
}
