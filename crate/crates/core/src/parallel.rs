use rayon::prelude::*;

/// Items per work unit. The summation order is independent of the thread count.
const CHUNK: usize = 32;

/// Sums `f(item, grad)` over `items`, where each call returns a scalar and
/// adds into a dense gradient of length `dim`.
pub(crate) fn chunked_sum<T, F>(items: &[T], dim: usize, f: F) -> (f64, Vec<f64>)
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> f64 + Sync,
{
    let partials: Vec<(f64, Vec<f64>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; dim];
            let value = chunk.iter().map(|item| f(item, &mut grad)).sum();
            (value, grad)
        })
        .collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for (v, g) in partials {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    (value, grad)
}
