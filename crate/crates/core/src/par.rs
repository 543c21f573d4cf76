//! Data-parallel iteration primitives.
//!
//! With the `parallel` feature these forward to rayon; without it they fall
//! back to the equivalent sequential iterators. Every caller writes disjoint
//! output elements and reduces in a fixed order, so results are bitwise
//! identical under either build and any thread count.

#[cfg(feature = "parallel")]
pub use rayon::iter::{IndexedParallelIterator, IntoParallelIterator, ParallelIterator};
#[cfg(feature = "parallel")]
use rayon::slice::{ParallelSlice, ParallelSliceMut};

/// Mutable chunks processed in parallel.
#[cfg(feature = "parallel")]
pub fn chunks_mut<T: Send>(
    slice: &mut [T],
    chunk_size: usize,
) -> impl IndexedParallelIterator<Item = &mut [T]> {
    slice.par_chunks_mut(chunk_size)
}

#[cfg(not(feature = "parallel"))]
pub fn chunks_mut<T>(slice: &mut [T], chunk_size: usize) -> impl Iterator<Item = &mut [T]> {
    slice.chunks_mut(chunk_size)
}

/// Immutable chunks processed in parallel.
#[cfg(feature = "parallel")]
pub fn chunks<T: Sync>(slice: &[T], chunk_size: usize) -> impl IndexedParallelIterator<Item = &[T]> {
    slice.par_chunks(chunk_size)
}

#[cfg(not(feature = "parallel"))]
pub fn chunks<T>(slice: &[T], chunk_size: usize) -> impl Iterator<Item = &[T]> {
    slice.chunks(chunk_size)
}

/// Maps `f` over `0..n` and collects in index order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Whether this build dispatches to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` on a dedicated pool of `threads` workers. The sequential build
/// just calls `f`.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R>(_threads: usize, f: impl FnOnce() -> R) -> R {
    f()
}
