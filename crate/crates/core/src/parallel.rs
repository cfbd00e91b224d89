//! Row-chunked fan-out over scoped threads.
//!
//! Every row is computed by exactly one closure call with no cross-row
//! accumulation, so results do not depend on the worker count.

use std::thread;

/// Splits `data` into rows of `row_len` and hands contiguous runs of rows to
/// up to `workers` threads. `f` receives the index of the first row in its
/// run and the mutable run itself.
pub(crate) fn for_each_rows<T, F>(data: &mut [T], row_len: usize, workers: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if row_len == 0 || data.is_empty() {
        return;
    }
    let n_rows = data.len() / row_len;
    let workers = workers.clamp(1, n_rows.max(1));
    if workers == 1 {
        f(0, data);
        return;
    }
    let per = n_rows.div_ceil(workers);
    thread::scope(|scope| {
        for (chunk_index, chunk) in data.chunks_mut(per * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(chunk_index * per, chunk));
        }
    });
}

/// Available hardware parallelism, at least 1.
pub fn available_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_visited_once_with_its_index() {
        for workers in [1, 2, 3, 8, 50] {
            let mut data = vec![0usize; 7 * 4];
            for_each_rows(&mut data, 4, workers, |first, rows| {
                for (r, row) in rows.chunks_mut(4).enumerate() {
                    for v in row {
                        *v += first + r + 1;
                    }
                }
            });
            for (r, row) in data.chunks(4).enumerate() {
                assert!(row.iter().all(|&v| v == r + 1), "workers={workers}");
            }
        }
    }
}
