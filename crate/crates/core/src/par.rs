//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) these fan work out over the
//! rayon global pool; without it they fall back to plain sequential
//! iteration. Output order always matches input order, so results are
//! identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over a slice and collects the results in input order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over `start..end` and collects the results in index order.
pub fn map_range<U, F>(start: usize, end: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (start..end).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (start..end).map(f).collect()
    }
}

/// Maximum of `f` over a slice, `None` when empty. NaN values are ignored.
pub fn max_by_key<T, F>(items: &[T], f: F) -> Option<(usize, f64)>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let pick = |a: (usize, f64), b: (usize, f64)| {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) || a.1.is_nan() {
            b
        } else {
            a
        }
    };
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter()
            .enumerate()
            .map(|(i, x)| (i, f(x)))
            .filter(|(_, v)| !v.is_nan())
            .reduce_with(pick)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .iter()
            .enumerate()
            .map(|(i, x)| (i, f(x)))
            .filter(|(_, v)| !v.is_nan())
            .reduce(pick)
    }
}

/// True when the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<usize> = (0..1000).collect();
        let ys = map_slice(&xs, |x| x * 2);
        assert!(ys.iter().enumerate().all(|(i, y)| *y == 2 * i));
        let zs = map_range(5, 10, |i| i);
        assert_eq!(zs, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn max_picks_first_of_ties() {
        let xs = [1.0, 3.0, 3.0, f64::NAN, 2.0];
        assert_eq!(max_by_key(&xs, |x| *x), Some((1, 3.0)));
        let empty: [f64; 0] = [];
        assert_eq!(max_by_key(&empty, |x| *x), None);
    }
}
