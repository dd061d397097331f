//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the work runs on rayon; without it, or with
//! [`Parallelism::Sequential`], it runs on the calling thread. Results are
//! always returned in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// A dedicated pool with this many threads.
    Threads(usize),
    /// The global rayon pool.
    #[default]
    Auto,
}

impl Parallelism {
    pub fn from_threads(n: usize) -> Self {
        if n <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(n)
        }
    }
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match parallelism {
        Parallelism::Sequential => items.iter().map(f).collect(),
        _ if items.len() <= 1 => items.iter().map(f).collect(),
        Parallelism::Auto => items.par_iter().map(f).collect(),
        Parallelism::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not start a {n}-thread pool ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], _parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_input_order() {
        let items: Vec<u64> = (0..200).collect();
        for p in [Parallelism::Sequential, Parallelism::Threads(4), Parallelism::Auto] {
            let out = map_ordered(&items, p, |x| x * x);
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert_eq!(Parallelism::from_threads(1), Parallelism::Sequential);
        assert_eq!(Parallelism::from_threads(3), Parallelism::Threads(3));
    }
}
