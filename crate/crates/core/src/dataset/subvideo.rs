use rand::Rng;

use super::{GestureSequence, SubVideo};
use crate::error::{Error, Result};
use crate::seed::labeled_rng;

/// Number of sub-videos drawn from a sequence of `n` frames.
pub fn subvideo_count(n: usize, len: usize, max_per_sequence: usize) -> usize {
    if len == 0 || n < len {
        return 0;
    }
    (n / len).min(max_per_sequence)
}

/// Strided sub-videos with seeded per-index jitter.
///
/// With stride `s = ⌊N/L⌋`, sub-video `j < min(s, max)` starts from indices
/// `j, j+s, …, j+(L−1)s`; each index gains an offset in `[0, s−1]` and is
/// then capped at `N − L + m` for position `m`, which keeps every index in
/// range and the sequence strictly increasing.
pub fn extract_subvideos(
    seq: &GestureSequence,
    len: usize,
    max_per_sequence: usize,
    seed: u64,
) -> Result<Vec<SubVideo>> {
    let n = seq.n_frames();
    if len == 0 {
        return Err(Error::InvalidArgument("sub-video length must be positive".into()));
    }
    if n < len {
        return Err(Error::Dataset(format!(
            "sequence {} has {n} frames, fewer than {len}",
            seq.id
        )));
    }
    let stride = n / len;
    let count = subvideo_count(n, len, max_per_sequence);
    Ok((0..count)
        .map(|j| {
            let mut r = labeled_rng(seed, &format!("subvideo/{}/{j}", seq.id));
            let frame_indices = (0..len)
                .map(|m| {
                    let jitter = r.random_range(0..stride);
                    (j + m * stride + jitter).min(n - len + m)
                })
                .collect();
            SubVideo {
                parent_id: seq.id.clone(),
                frame_indices,
                label: seq.class_id,
            }
        })
        .collect())
}
