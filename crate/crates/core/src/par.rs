//! Data-parallel helpers with a sequential fallback.
//!
//! Everything that fans out over independent work items (BFS sources,
//! candidate moves, agent decisions, seed sweeps) goes through [`Exec`].
//! With the `parallel` feature disabled, [`Exec::Parallel`] silently runs
//! sequentially, so results never depend on the feature set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for fan-out loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this strategy actually uses worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Map then reduce with an associative `pick`. `pick` must be
    /// order-insensitive (a total-order max, say) for the parallel and
    /// sequential results to agree.
    pub fn map_reduce<T, R, F, P>(self, items: &[T], f: F, pick: P) -> Option<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Option<R> + Sync + Send,
        P: Fn(R, R) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().filter_map(f).reduce_with(pick);
        }
        items.iter().filter_map(f).reduce(pick)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        let ma = Exec::Sequential.map_reduce(&xs, |&x| Some((x % 37, x)), |p, q| p.max(q));
        let mb = Exec::Parallel.map_reduce(&xs, |&x| Some((x % 37, x)), |p, q| p.max(q));
        assert_eq!(ma, mb);
        assert_eq!(Exec::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
