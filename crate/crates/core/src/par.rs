//! Per-sample fan-out used by the convolution and pooling kernels.

/// Runs `f(i, input_chunk, output_chunk)` for every sample. With the
/// `parallel` feature and `parallel == true` the samples are spread over the
/// current rayon pool; each call writes only its own output chunk.
pub(crate) fn for_each_sample<T, U, F>(
    parallel: bool,
    input: &[T],
    in_len: usize,
    output: &mut [U],
    out_len: usize,
    f: F,
) where
    T: Sync,
    U: Send,
    F: Fn(usize, &[T], &mut [U]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        input
            .par_chunks_exact(in_len)
            .zip(output.par_chunks_exact_mut(out_len))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
        return;
    }
    let _ = parallel;
    input
        .chunks_exact(in_len)
        .zip(output.chunks_exact_mut(out_len))
        .enumerate()
        .for_each(|(i, (x, y))| f(i, x, y));
}
