//! Order-preserving parallel map, sequential when the `parallel` feature is off.

use crate::error::Result;

#[cfg(feature = "parallel")]
pub fn try_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map<T, U>(items: &[T], f: impl Fn(&T) -> Result<U>) -> Result<Vec<U>> {
    items.iter().map(f).collect()
}

/// `f(0..n)` in index order.
pub fn try_map_range<U: Send>(n: usize, f: impl Fn(usize) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    let idx: Vec<usize> = (0..n).collect();
    try_map(&idx, |&i| f(i))
}
