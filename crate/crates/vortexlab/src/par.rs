//! Deterministic fan-out helpers: results are collected by index, so the
//! reduction order never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn try_max<E: Send>(n: usize, f: impl Fn(usize) -> Result<f64, E> + Sync + Send) -> Result<f64, E> {
    let vals = map(n, f);
    let mut best = f64::NEG_INFINITY;
    for v in vals {
        best = best.max(v?);
    }
    Ok(best)
}
