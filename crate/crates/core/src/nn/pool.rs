//! Order-preserving k-max pooling.

use super::NnError;

/// Positions of the `k` largest values of `seq`, ties going to the earlier
/// position, returned in ascending position order.
pub fn kmax_positions(seq: &[f64], k: usize) -> Result<Vec<usize>, NnError> {
    kmax_positions_strided(seq, seq.len(), 1, k)
}

/// Like [`kmax_positions`] over `len` values read as `data[i * stride]`.
pub fn kmax_positions_strided(
    data: &[f64],
    len: usize,
    stride: usize,
    k: usize,
) -> Result<Vec<usize>, NnError> {
    if k == 0 || len < k {
        return Err(NnError::TooShort { len, k });
    }
    // `best` is kept sorted by value descending; a later equal value never
    // displaces an earlier one.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..len {
        let v = data[i * stride];
        if best.len() == k && v <= best[k - 1].0 {
            continue;
        }
        let at = best.iter().position(|&(b, _)| v > b).unwrap_or(best.len());
        best.insert(at, (v, i));
        best.truncate(k);
    }
    let mut pos: Vec<usize> = best.into_iter().map(|(_, i)| i).collect();
    pos.sort_unstable();
    Ok(pos)
}

/// The subsequence of the `k` largest values of `seq`, in original order.
pub fn kmax_pool(seq: &[f64], k: usize) -> Result<Vec<f64>, NnError> {
    Ok(kmax_positions(seq, k)?.into_iter().map(|i| seq[i]).collect())
}
