//! Plug-in transfer entropy with single-step histories on binary series.

use super::window::BinaryWindow;
use crate::error::{Error, Result};

/// 1 iff `activation > g`.
#[inline]
pub fn binarize(activation: f64, g: f64) -> bool {
    activation > g
}

/// Counts of `(i_{t+1}, i_t, j_t)` over the `u - 1` transitions of a window
/// pair, indexed `[next][prev][src]`.
pub type TripletCounts = [[[u64; 2]; 2]; 2];

pub(crate) fn check_windows(src: &BinaryWindow, dst: &BinaryWindow) -> Result<usize> {
    for w in [src, dst] {
        if !w.is_full() || w.capacity() < 3 {
            return Err(Error::EstimatorUnavailable {
                len: w.len(),
                capacity: w.capacity().max(3),
            });
        }
    }
    if src.capacity() != dst.capacity() {
        return Err(Error::shape(format!(
            "window capacities differ: {} vs {}",
            src.capacity(),
            dst.capacity()
        )));
    }
    Ok(src.capacity())
}

pub fn triplet_counts(src: &BinaryWindow, dst: &BinaryWindow) -> Result<TripletCounts> {
    let u = check_windows(src, dst)?;
    let mut n: TripletCounts = [[[0; 2]; 2]; 2];
    let mut prev = dst.get(0) as usize;
    for t in 0..u - 1 {
        let next = dst.get(t + 1) as usize;
        n[next][prev][src.get(t) as usize] += 1;
        prev = next;
    }
    Ok(n)
}

/// `TE(src -> dst)` in bits:
/// `sum p(i+, i, j) log2[ p(i+ | i, j) / p(i+ | i) ]`, zero-count terms
/// dropped. Source is `J`, destination `I`.
pub fn te_pair(src: &BinaryWindow, dst: &BinaryWindow) -> Result<f64> {
    Ok(te_from_counts(&triplet_counts(src, dst)?))
}

#[allow(clippy::needless_range_loop)]
pub fn te_from_counts(n: &TripletCounts) -> f64 {
    let total: u64 = n.iter().flatten().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let mut te = 0.0;
    for prev in 0..2 {
        let n_prev: u64 = (0..2).map(|x| n[x][prev][0] + n[x][prev][1]).sum();
        for src in 0..2 {
            let n_prev_src = n[0][prev][src] + n[1][prev][src];
            for next in 0..2 {
                let n_xyz = n[next][prev][src];
                if n_xyz == 0 {
                    continue;
                }
                let n_next_prev = n[next][prev][0] + n[next][prev][1];
                // p(x|y,z) / p(x|y) = n_xyz * n_y / (n_yz * n_xy); integer
                // products are exact, so independent triples give exactly 0.
                let ratio = (n_xyz * n_prev) as f64 / (n_prev_src * n_next_prev) as f64;
                te += n_xyz as f64 * ratio.log2();
            }
        }
    }
    (te / total as f64).max(0.0)
}
