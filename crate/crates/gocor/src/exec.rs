//! Serial/parallel dispatch for the data-parallel kernels.
//!
//! Every heavy loop in this crate is phrased as either "process disjoint
//! output chunks" or "sum per-chunk partials in index order". Both shapes
//! give bitwise identical results whether they run on the rayon pool or on
//! the current thread, so `--serial` is a scheduling choice, not a numeric
//! one.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SERIAL: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto the current thread (used by the CLI `--serial` flag).
pub fn set_serial(serial: bool) {
    FORCE_SERIAL.store(serial, Ordering::Relaxed);
}

/// True when kernels run sequentially (forced, or built without `rayon`).
pub fn is_serial() -> bool {
    if cfg!(not(feature = "rayon")) {
        return true;
    }
    FORCE_SERIAL.load(Ordering::Relaxed)
}

/// Apply `f` to consecutive `chunk`-sized pieces of `data`, passing the chunk index.
///
/// `data.len()` must be a multiple of `chunk`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "rayon")]
    if !is_serial() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(idx, piece)| f(idx, piece));
        return;
    }
    for (idx, piece) in data.chunks_mut(chunk).enumerate() {
        f(idx, piece);
    }
}

/// Sum `f(0) + f(1) + ... + f(n-1)` with a fixed association.
///
/// Partials are evaluated (possibly in parallel) and then folded in index
/// order, so the result does not depend on the scheduling.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Send + Sync,
{
    #[cfg(feature = "rayon")]
    if !is_serial() {
        use rayon::prelude::*;
        let partials: Vec<f64> = (0..n).into_par_iter().map(&f).collect();
        return partials.iter().sum();
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += f(i);
    }
    acc
}
