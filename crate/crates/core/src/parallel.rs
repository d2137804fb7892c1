//! Order-preserving fan-out over scoped threads.

use crate::error::Result;

/// Splits `items` into at most `threads` contiguous chunks, runs `work(offset, chunk)`
/// on each and concatenates the results in input order. With one thread (or
/// one item) everything runs on the caller's thread.
pub fn map_chunks<I, O, F>(items: &[I], threads: usize, work: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &[I]) -> Result<Vec<O>> + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return work(0, items);
    }
    let chunk = items.len().div_ceil(threads);
    let results: Vec<Result<Vec<O>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(i, part)| {
                let work = &work;
                scope.spawn(move || work(i * chunk, part))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn preserves_order() {
        let items: Vec<usize> = (0..23).collect();
        let out = map_chunks(&items, 4, |off, c| {
            Ok(c.iter().enumerate().map(|(i, v)| (off + i, v * 2)).collect())
        })
        .unwrap();
        assert_eq!(out.len(), 23);
        assert!(out.iter().enumerate().all(|(i, &(j, v))| i == j && v == 2 * i));
    }

    #[test]
    fn propagates_first_error() {
        let items = [1, 2, 3, 4];
        let r: Result<Vec<i32>> = map_chunks(&items, 2, |off, _| Err(Error::at(off, Error::Empty("x"))));
        assert!(matches!(r, Err(Error::AtIndex { index: 0, .. })));
    }
}
