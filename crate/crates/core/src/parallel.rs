//! Bounded fan-out over scoped threads with results in input order.

use crate::error::{Error, Result};

/// Applies `f` to every item using at most `jobs` threads. With one job the
/// work runs on the calling thread.
pub fn map_ordered<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs == 0 {
        return Err(Error::InvalidArgument("jobs must be at least 1".into()));
    }
    if jobs == 1 || items.len() < 2 {
        return Ok(items.iter().map(&f).collect());
    }
    let per_thread = items.len().div_ceil(jobs);
    let f = &f;
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per_thread)
            .map(|chunk| s.spawn(move || chunk.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    }))
}
