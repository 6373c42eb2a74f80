//! Dense vector helpers over `f64` slices.
//!
//! Per-example sums go through [`pairwise_sum_into`] so that reductions are
//! always performed in the same index-ascending tree order.

const LEAF: usize = 8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

/// `a + alpha * b` as a new vector.
pub fn add_scaled(a: &[f64], alpha: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + alpha * y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Sums `n` per-index contributions of width `dim`.
///
/// `leaf(i, acc)` must add the contribution of index `i` into `acc`. Indices
/// are grouped into contiguous blocks of at most 8, accumulated in ascending
/// order, and the block partials are combined as a balanced binary tree.
pub fn pairwise_sum_into<F>(n: usize, dim: usize, leaf: &mut F) -> Vec<f64>
where
    F: FnMut(usize, &mut [f64]),
{
    fn rec<F: FnMut(usize, &mut [f64])>(lo: usize, hi: usize, dim: usize, leaf: &mut F) -> Vec<f64> {
        if hi - lo <= LEAF {
            let mut acc = vec![0.0; dim];
            for i in lo..hi {
                leaf(i, &mut acc);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let mut left = rec(lo, mid, dim, leaf);
        let right = rec(mid, hi, dim, leaf);
        for (l, r) in left.iter_mut().zip(&right) {
            *l += r;
        }
        left
    }
    rec(0, n, dim, leaf)
}

pub fn pairwise_sum<F>(n: usize, mut term: F) -> f64
where
    F: FnMut(usize) -> f64,
{
    pairwise_sum_into(n, 1, &mut |i, acc: &mut [f64]| acc[0] += term(i))[0]
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        for n in [0, 1, 7, 8, 9, 100, 257] {
            let s = pairwise_sum(n, |i| i as f64);
            assert_eq!(s, (n * n.saturating_sub(1) / 2) as f64);
        }
    }

    #[test]
    fn pairwise_vector_sum() {
        let v = pairwise_sum_into(20, 2, &mut |i, acc: &mut [f64]| {
            acc[0] += 1.0;
            acc[1] += i as f64;
        });
        assert_eq!(v, vec![20.0, 190.0]);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 4.0 * x - 1.0).collect();
        assert!((fit_slope(&xs, &ys) - 4.0).abs() < 1e-14);
    }
}
