use std::collections::VecDeque;

use super::estimator::binarize;
use super::window::BinaryWindow;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How a threshold `g` turns an activation into an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Event iff `a > g`.
    #[default]
    Absolute,
    /// Event iff `a > g * mean`, the mean taken over the neuron's last `u`
    /// activations including the current one.
    MeanMultiplier,
}

#[derive(Debug, Clone)]
struct RunningMean {
    values: VecDeque<f64>,
    sum: f64,
    capacity: usize,
}

impl RunningMean {
    fn new(capacity: usize) -> Self {
        RunningMean {
            values: VecDeque::with_capacity(capacity),
            sum: 0.0,
            capacity,
        }
    }

    fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.capacity {
            self.sum -= self.values.pop_front().unwrap_or(0.0);
        }
        self.values.push_back(v);
        self.sum += v;
        self.sum / self.values.len() as f64
    }
}

#[derive(Debug, Clone)]
struct Side {
    windows: Vec<BinaryWindow>,
    threshold: f64,
    means: Option<Vec<RunningMean>>,
}

impl Side {
    fn new(n: usize, capacity: usize, threshold: f64, mode: ThresholdMode) -> Self {
        Side {
            windows: (0..n).map(|_| BinaryWindow::new(capacity)).collect(),
            threshold,
            means: (mode == ThresholdMode::MeanMultiplier)
                .then(|| (0..n).map(|_| RunningMean::new(capacity)).collect()),
        }
    }

    fn push_row<T: Real>(&mut self, row: &[T]) {
        for (i, (w, &a)) in self.windows.iter_mut().zip(row).enumerate() {
            let a = a.as_f64();
            let g = match &mut self.means {
                None => self.threshold,
                Some(m) => self.threshold * m[i].push(a),
            };
            w.push(binarize(a, g));
        }
    }
}

/// Event windows for the monitored layer pair: one window per source neuron
/// (thresholded with `g_src`) and one per destination neuron (`g_dst`), all
/// appended in lockstep, one event per sample.
#[derive(Debug, Clone)]
pub struct Recorder {
    src: Side,
    dst: Side,
    capacity: usize,
}

impl Recorder {
    pub fn new(
        n_src: usize,
        n_dst: usize,
        capacity: usize,
        g_src: f64,
        g_dst: f64,
        mode: ThresholdMode,
    ) -> Result<Self> {
        if capacity < 3 {
            return Err(Error::config(format!(
                "window length must be at least 3, got {capacity}"
            )));
        }
        if n_src == 0 || n_dst == 0 {
            return Err(Error::config(
                "recorder needs at least one source and one destination",
            ));
        }
        if !g_src.is_finite() || !g_dst.is_finite() {
            return Err(Error::config("thresholds must be finite"));
        }
        Ok(Recorder {
            src: Side::new(n_src, capacity, g_src, mode),
            dst: Side::new(n_dst, capacity, g_dst, mode),
            capacity,
        })
    }

    pub fn n_src(&self) -> usize {
        self.src.windows.len()
    }

    pub fn n_dst(&self) -> usize {
        self.dst.windows.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn src_window(&self, i: usize) -> &BinaryWindow {
        &self.src.windows[i]
    }

    pub fn dst_window(&self, j: usize) -> &BinaryWindow {
        &self.dst.windows[j]
    }

    /// Events appended per window so far.
    pub fn count(&self) -> u64 {
        self.src.windows[0].total()
    }

    pub fn is_full(&self) -> bool {
        self.src.windows[0].is_full()
    }

    /// Appends one event per sample of the batch to every window, in row order.
    pub fn record_batch<T: Real>(
        &mut self,
        src_acts: &Tensor<T>,
        dst_acts: &Tensor<T>,
    ) -> Result<()> {
        if src_acts.rows() != dst_acts.rows() {
            return Err(Error::shape(format!(
                "source batch has {} rows, destination {}",
                src_acts.rows(),
                dst_acts.rows()
            )));
        }
        if src_acts.row_len() != self.n_src() || dst_acts.row_len() != self.n_dst() {
            return Err(Error::shape(format!(
                "recorder expects {}/{} neurons, got {}/{}",
                self.n_src(),
                self.n_dst(),
                src_acts.row_len(),
                dst_acts.row_len()
            )));
        }
        for s in 0..src_acts.rows() {
            self.src.push_row(src_acts.row(s));
            self.dst.push_row(dst_acts.row(s));
        }
        Ok(())
    }

    /// `(g_src, g_dst)`.
    pub fn thresholds(&self) -> (f64, f64) {
        (self.src.threshold, self.dst.threshold)
    }

    pub fn threshold_mode(&self) -> ThresholdMode {
        if self.src.means.is_some() {
            ThresholdMode::MeanMultiplier
        } else {
            ThresholdMode::Absolute
        }
    }

    fn side(&self, dst: bool) -> &Side {
        if dst {
            &self.dst
        } else {
            &self.src
        }
    }

    /// Running-mean history (oldest first) and its accumulated sum.
    pub(crate) fn mean_state(&self, dst: bool, i: usize) -> Option<(Vec<f64>, f64)> {
        self.side(dst)
            .means
            .as_ref()
            .map(|m| (m[i].values.iter().copied().collect(), m[i].sum))
    }

    pub(crate) fn restore_neuron(
        &mut self,
        dst: bool,
        i: usize,
        window: BinaryWindow,
        mean: Option<(Vec<f64>, f64)>,
    ) -> Result<()> {
        let capacity = self.capacity;
        let side = if dst { &mut self.dst } else { &mut self.src };
        if i >= side.windows.len() || window.capacity() != capacity {
            return Err(Error::shape(format!(
                "cannot restore window {i} of capacity {}",
                window.capacity()
            )));
        }
        side.windows[i] = window;
        match (&mut side.means, mean) {
            (None, None) => Ok(()),
            (Some(m), Some((values, sum))) if values.len() <= capacity => {
                m[i] = RunningMean {
                    values: values.into(),
                    sum,
                    capacity,
                };
                Ok(())
            }
            _ => Err(Error::shape(
                "running-mean state does not match the threshold mode",
            )),
        }
    }

    pub fn clear(&mut self) {
        for w in self
            .src
            .windows
            .iter_mut()
            .chain(self.dst.windows.iter_mut())
        {
            w.clear();
        }
        for m in [&mut self.src.means, &mut self.dst.means]
            .into_iter()
            .flatten()
        {
            for r in m.iter_mut() {
                *r = RunningMean::new(self.capacity);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_above_threshold() {
        let mut rec = Recorder::new(1, 1, 4, 2.0, 0.99, ThresholdMode::Absolute).unwrap();
        let src = Tensor::from_vec(&[1, 1], vec![3.0f32]).unwrap();
        let dst = Tensor::from_vec(&[1, 1], vec![0.5f32]).unwrap();
        rec.record_batch(&src, &dst).unwrap();
        assert_eq!(rec.src_window(0).to_vec(), vec![true]);
        assert_eq!(rec.dst_window(0).to_vec(), vec![false]);
    }

    #[test]
    fn lockstep_counts() {
        let mut rec = Recorder::new(3, 2, 5, 0.0, 0.0, ThresholdMode::Absolute).unwrap();
        let src = Tensor::<f32>::filled(&[3, 3], 1.0);
        let dst = Tensor::<f32>::filled(&[3, 2], -1.0);
        rec.record_batch(&src, &dst).unwrap();
        for i in 0..3 {
            assert_eq!(rec.src_window(i).total(), 3);
        }
        for j in 0..2 {
            assert_eq!(rec.dst_window(j).total(), 3);
        }
        let bad = Tensor::<f32>::filled(&[2, 2], 0.0);
        assert!(rec.record_batch(&src, &bad).is_err());
    }

    #[test]
    fn mean_multiplier_mode_tracks_window_mean() {
        let mut rec = Recorder::new(1, 1, 3, 1.5, 1.5, ThresholdMode::MeanMultiplier).unwrap();
        for v in [1.0f64, 1.0, 1.0, 6.0] {
            let t = Tensor::from_vec(&[1, 1], vec![v]).unwrap();
            rec.record_batch(&t, &t).unwrap();
        }
        // mean over [1, 1, 6] is 8/3; 6 > 1.5 * 8/3 = 4
        assert_eq!(rec.src_window(0).to_vec(), vec![false, false, true]);
    }
}
