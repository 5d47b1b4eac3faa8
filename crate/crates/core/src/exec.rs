//! Order-preserving batch execution.
//!
//! Every batch helper returns results in input order so that downstream
//! reductions see the same sequence whether or not the `parallel` feature is
//! enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, range: std::ops::Range<usize>, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => range.into_par_iter().map(f).collect(),
            _ => range.map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&xs, |x| x * x);
        let par = Execution::Parallel.map(&xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(
            Execution::Parallel.map_range(0..50, |i| i + 1),
            (1..51).collect::<Vec<_>>()
        );
    }
}
