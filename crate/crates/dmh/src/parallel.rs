//! Data-parallel mapping over independent trials. With the `parallel`
//! feature (default) work is spread over a rayon pool; without it, or when
//! explicitly disabled, the same results are produced sequentially.

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let seq = map_indexed(100, false, |i| i * i);
        let par = map_indexed(100, true, |i| i * i);
        assert_eq!(seq, par);
    }
}
