//! Thread-count-independent parallel map.
//!
//! Work is split into contiguous index chunks, one scoped thread per chunk,
//! and each item writes its own output slot. The per-item computation never
//! depends on the chunking, so results are bit-identical for any worker
//! count, which is what the solver's determinism guarantee rests on.

/// Applies `f` to `0..n`, preserving order. `threads <= 1` runs inline.
pub fn par_map<T, F>(threads: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let workers = threads.min(n);
    let chunk = n.div_ceil(workers);
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (c, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = c * chunk;
                for (off, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(base + off));
                }
            });
        }
    });
    out.into_iter().map(|s| s.unwrap()).collect()
}
