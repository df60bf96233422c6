use std::fmt;
use std::str::FromStr;

use super::estimator::te_pair;
use super::pairs::PairSet;
use super::recorder::Recorder;
use crate::error::{Error, Result};

/// Which side of the monitored pair plays the TE source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Inputs of the final linear layer drive the softmax outputs.
    #[default]
    Forward,
    /// Softmax outputs are the source, final-linear inputs the destination.
    Backward,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::config(format!(
                "te direction must be forward|backward, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// `n_src x n_dst` TE values, indexed by (final-linear input, softmax output)
/// regardless of direction. Entries outside the active set are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TeMatrix {
    n_src: usize,
    n_dst: usize,
    values: Vec<f64>,
    active: Vec<bool>,
    warmup: bool,
}

impl TeMatrix {
    pub fn zeros(n_src: usize, n_dst: usize) -> Self {
        TeMatrix {
            n_src,
            n_dst,
            values: vec![0.0; n_src * n_dst],
            active: vec![false; n_src * n_dst],
            warmup: false,
        }
    }

    /// Zero matrix flagged as produced during warm-up.
    pub fn warmup(n_src: usize, n_dst: usize) -> Self {
        TeMatrix {
            warmup: true,
            ..TeMatrix::zeros(n_src, n_dst)
        }
    }

    pub fn n_src(&self) -> usize {
        self.n_src
    }

    pub fn n_dst(&self) -> usize {
        self.n_dst
    }

    pub fn is_warmup(&self) -> bool {
        self.warmup
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_dst + j]
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[i * self.n_dst + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_dst + j] = v;
        self.active[i * self.n_dst + j] = true;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn active_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
    }

    /// Mean over active entries, 0 when none.
    pub fn mean(&self) -> f64 {
        let n = self.active_count();
        if n == 0 {
            0.0
        } else {
            self.active_values().sum::<f64>() / n as f64
        }
    }

    /// Population standard deviation over active entries.
    pub fn std(&self) -> f64 {
        let n = self.active_count();
        if n == 0 {
            return 0.0;
        }
        let mean = self.mean();
        (self
            .active_values()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    }

    /// Converts bits into another logarithm base (values divided by `log2(base)`).
    pub fn rescale_to_base(&mut self, base: f64) {
        let f = 1.0 / base.log2();
        self.values.iter_mut().for_each(|v| *v *= f);
    }
}

/// TE for every pair in `pairs`; an all-zero matrix flagged warm-up while the
/// windows are still filling.
pub fn compute_te_matrix(
    rec: &Recorder,
    pairs: &PairSet,
    direction: Direction,
) -> Result<TeMatrix> {
    let (n_src, n_dst) = (rec.n_src(), rec.n_dst());
    if !rec.is_full() {
        return Ok(TeMatrix::warmup(n_src, n_dst));
    }
    let mut m = TeMatrix::zeros(n_src, n_dst);
    for &(i, j) in pairs.pairs() {
        if i >= n_src || j >= n_dst {
            return Err(Error::shape(format!(
                "pair ({i}, {j}) outside {n_src}x{n_dst}"
            )));
        }
        let te = match direction {
            Direction::Forward => te_pair(rec.src_window(i), rec.dst_window(j))?,
            Direction::Backward => te_pair(rec.dst_window(j), rec.src_window(i))?,
        };
        m.set(i, j, te);
    }
    Ok(m)
}
