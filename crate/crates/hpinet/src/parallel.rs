//! Data-parallel execution helpers.
//!
//! Every kernel in this crate parallelizes in "gather" style: the output
//! buffer is split into disjoint chunks and each chunk is filled by a fully
//! sequential computation. Because no floating-point reduction ever crosses a
//! chunk boundary, results are bit-identical to the sequential fallback
//! regardless of thread count or scheduling.
//!
//! The `parallel` cargo feature (default on) compiles in rayon. At runtime,
//! [`set_sequential`] routes everything through the plain sequential path,
//! which the CLI exposes as `--deterministic`.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto the sequential path (process-global).
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when kernels will run sequentially, either because the `parallel`
/// feature is disabled or because [`set_sequential`] was called.
pub fn is_sequential() -> bool {
    cfg!(not(feature = "parallel")) || FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Rough number of scalar operations below which a parallel dispatch is not
/// worth the scheduling overhead; chunks are grouped so each task has at
/// least this much work.
const MIN_TASK_WORK: usize = 16 * 1024;

/// Split `out` into `chunk`-sized pieces and run `fill(chunk_index, piece)`
/// on each, in parallel when enabled. `fill` must derive the piece contents
/// only from `chunk_index` and read-only captures.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, fill: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0 && out.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() && out.len() > MIN_TASK_WORK {
            use rayon::prelude::*;
            let min_chunks = MIN_TASK_WORK / chunk + 1;
            out.par_chunks_mut(chunk)
                .with_min_len(min_chunks)
                .enumerate()
                .for_each(|(i, c)| fill(i, c));
            return;
        }
    }
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        fill(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_fill_identically() {
        let fill = |i: usize, c: &mut [f32]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 31 + j) as f32 * 0.25;
            }
        };
        let mut a = vec![0.0f32; 64 * 1024];
        let mut b = vec![0.0f32; 64 * 1024];
        set_sequential(false);
        for_each_chunk(&mut a, 64, fill);
        set_sequential(true);
        for_each_chunk(&mut b, 64, fill);
        set_sequential(false);
        assert_eq!(a, b);
    }
}
