use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// When the random pair subset is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairPolicy {
    /// Once at the start of every epoch.
    #[default]
    PerEpoch,
    /// Before every TE recomputation.
    PerWindow,
}

impl FromStr for PairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(PairPolicy::PerEpoch),
            "window" => Ok(PairPolicy::PerWindow),
            _ => Err(Error::config(format!(
                "pair policy must be epoch|window, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairPolicy::PerEpoch => "epoch",
            PairPolicy::PerWindow => "window",
        })
    }
}

/// Distinct `(source, destination)` index pairs whose TE is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
    fraction: Option<f64>,
    policy: PairPolicy,
}

impl PairSet {
    /// Explicit pair list; duplicates are rejected.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("duplicate pair in pair set"));
        }
        Ok(PairSet {
            pairs,
            fraction: None,
            policy: PairPolicy::PerEpoch,
        })
    }

    pub(crate) fn restore(
        pairs: Vec<(usize, usize)>,
        fraction: Option<f64>,
        policy: PairPolicy,
    ) -> Result<Self> {
        let mut p = PairSet::from_pairs(pairs)?;
        p.fraction = fraction;
        p.policy = policy;
        Ok(p)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sampling fraction, `None` for explicit lists.
    pub fn fraction(&self) -> Option<f64> {
        self.fraction
    }

    pub fn policy(&self) -> PairPolicy {
        self.policy
    }
}

/// Number of pairs drawn for a fraction: `max(1, round(f * n_src * n_dst))`.
pub fn pair_count(n_src: usize, n_dst: usize, fraction: f64) -> usize {
    let total = n_src * n_dst;
    ((fraction * total as f64).round() as usize).clamp(1, total)
}

/// Uniform sample of distinct pairs without replacement, sorted.
pub fn select_pairs<R: Rng + ?Sized>(
    n_src: usize,
    n_dst: usize,
    fraction: f64,
    policy: PairPolicy,
    rng: &mut R,
) -> Result<PairSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "pair fraction must be in (0,1], got {fraction}"
        )));
    }
    if n_src == 0 || n_dst == 0 {
        return Err(Error::config("pair selection over an empty layer"));
    }
    let total = n_src * n_dst;
    let count = pair_count(n_src, n_dst, fraction);
    let mut flat: Vec<usize> = if count == total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, count).into_vec()
    };
    flat.sort_unstable();
    Ok(PairSet {
        pairs: flat.into_iter().map(|k| (k / n_dst, k % n_dst)).collect(),
        fraction: Some(fraction),
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_fraction_is_exhaustive() {
        let p = select_pairs(
            144,
            10,
            1.0,
            PairPolicy::PerEpoch,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(p.len(), 1440);
        assert_eq!(p.pairs()[0], (0, 0));
        assert_eq!(p.pairs()[1439], (143, 9));
    }

    #[test]
    fn tenth_is_deterministic_and_distinct() {
        let draw = || {
            select_pairs(
                144,
                10,
                0.1,
                PairPolicy::PerWindow,
                &mut ChaCha8Rng::seed_from_u64(42),
            )
            .unwrap()
        };
        let a = draw();
        assert_eq!(a.len(), 144);
        assert_eq!(a, draw());
        let mut dedup = a.pairs().to_vec();
        dedup.dedup();
        assert_eq!(dedup.len(), 144);
        assert!(a.pairs().iter().all(|&(i, j)| i < 144 && j < 10));
    }

    #[test]
    fn at_least_one_pair() {
        assert_eq!(pair_count(3, 2, 0.01), 1);
        assert!(select_pairs(
            3,
            2,
            0.0,
            PairPolicy::PerEpoch,
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
        assert!(PairSet::from_pairs(vec![(0, 1), (0, 1)]).is_err());
    }
}
