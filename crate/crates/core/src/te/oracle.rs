//! Entropy-difference formulation of the same estimator:
//! `TE = H(I+ | I) - H(I+ | I, J)`, each conditional entropy expanded as a
//! difference of joint entropies whose histograms are counted separately.
//! Serves as an independent cross-check of [`te_pair`](super::te_pair).

use std::collections::BTreeMap;

use super::estimator::check_windows;
use super::window::BinaryWindow;
use crate::error::Result;

fn entropy_bits<K: Ord>(hist: &BTreeMap<K, usize>, total: usize) -> f64 {
    hist.values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

fn histogram<K: Ord>(keys: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let mut h = BTreeMap::new();
    for k in keys {
        *h.entry(k).or_insert(0) += 1;
    }
    h
}

pub fn te_pair_oracle(src: &BinaryWindow, dst: &BinaryWindow) -> Result<f64> {
    check_windows(src, dst)?;
    let j = src.to_vec();
    let i = dst.to_vec();
    let m = i.len() - 1;
    let ts = 0..m;

    let h_next_prev = entropy_bits(&histogram(ts.clone().map(|t| (i[t + 1], i[t]))), m);
    let h_prev = entropy_bits(&histogram(ts.clone().map(|t| i[t])), m);
    let h_next_prev_src = entropy_bits(&histogram(ts.clone().map(|t| (i[t + 1], i[t], j[t]))), m);
    let h_prev_src = entropy_bits(&histogram(ts.map(|t| (i[t], j[t]))), m);

    let h_next_given_prev = h_next_prev - h_prev;
    let h_next_given_prev_src = h_next_prev_src - h_prev_src;
    Ok(h_next_given_prev - h_next_given_prev_src)
}

/// Empirical `H(I_{t+1} | I_t)` of a full window: the upper bound of any
/// transfer entropy into it.
pub fn next_given_prev_entropy(dst: &BinaryWindow) -> f64 {
    let i = dst.to_vec();
    if i.len() < 2 {
        return 0.0;
    }
    let m = i.len() - 1;
    entropy_bits(&histogram((0..m).map(|t| (i[t + 1], i[t]))), m)
        - entropy_bits(&histogram((0..m).map(|t| i[t])), m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_predictable_destination_gives_zero() {
        let alt: Vec<bool> = (0..32).map(|t| t % 2 == 1).collect();
        let w = BinaryWindow::from_bits(32, alt);
        assert!(te_pair_oracle(&w, &w).unwrap().abs() < 1e-15);
    }
}
