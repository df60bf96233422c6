use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Synthetic {
        classes: usize,
        n_train: usize,
        n_test: usize,
        side: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// `[channels, height, width]`.
    pub sample_shape: [usize; 3],
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Per-channel constants subtracted/divided after scaling to `[0, 1]`.
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Images and labels of one split, stored as `f32` in NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    sample_shape: [usize; 3],
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Split {
    pub fn new(sample_shape: [usize; 3], images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 {
            return Err(Error::shape(format!("empty sample shape {sample_shape:?}")));
        }
        if images.len() != per * labels.len() {
            return Err(Error::shape(format!(
                "{} pixel values for {} samples of {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Split {
            sample_shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.per_sample();
        &self.images[i * per..(i + 1) * per]
    }

    fn per_sample(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Gathers the given samples into an `[n, c, h, w]` batch.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let per = self.per_sample();
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::shape(format!("sample {i} out of {}", self.len())));
            }
            data.extend(self.sample(i).iter().map(|&v| T::from_f64(v as f64)));
            labels.push(self.labels[i] as usize);
        }
        let [c, h, w] = self.sample_shape;
        Ok((Tensor::from_vec(&[idx.len(), c, h, w], data)?, labels))
    }

    /// Splits off the samples from `at` onwards.
    pub fn split_off(&mut self, at: usize) -> Split {
        let per = self.per_sample();
        Split {
            sample_shape: self.sample_shape,
            images: self.images.split_off(at * per),
            labels: self.labels.split_off(at),
        }
    }

    /// Per-channel mean and population standard deviation.
    pub fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let [c, h, w] = self.sample_shape;
        let plane = h * w;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for s in self.images.chunks_exact(c * plane) {
            for (ch, p) in s.chunks_exact(plane).enumerate() {
                for &v in p {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0).sqrt()).max(1e-6) as f32)
            .collect();
        (mean.into_iter().map(|m| m as f32).collect(), std)
    }

    /// `(x - mean[c]) / std[c]` in place.
    pub fn normalize(&mut self, mean: &[f32], std: &[f32]) {
        let [c, h, w] = self.sample_shape;
        let plane = h * w;
        for s in self.images.chunks_exact_mut(c * plane) {
            for (ch, p) in s.chunks_exact_mut(plane).enumerate() {
                for v in p {
                    *v = (*v - mean[ch]) / std[ch];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    /// Builds a dataset from splits scaled to `[0, 1]`, normalizing both with
    /// the training split's per-channel statistics.
    pub fn from_unit_splits(
        source: DataSource,
        mut train: Split,
        mut test: Split,
        classes: usize,
    ) -> Result<Self> {
        if train.sample_shape != test.sample_shape {
            return Err(Error::shape(format!(
                "train samples {:?} vs test samples {:?}",
                train.sample_shape, test.sample_shape
            )));
        }
        if train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        if let Some(&l) = train
            .labels
            .iter()
            .chain(&test.labels)
            .find(|&&l| l as usize >= classes)
        {
            return Err(Error::config(format!("label {l} outside [0, {classes})")));
        }
        let (mean, std) = train.channel_stats();
        train.normalize(&mean, &std);
        test.normalize(&mean, &std);
        Ok(Dataset {
            spec: DatasetSpec {
                source,
                sample_shape: train.sample_shape,
                classes,
                n_train: train.len(),
                n_test: test.len(),
                mean,
                std,
            },
            train,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_gathers_rows_in_order() {
        let s = Split::new([1, 1, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 1, 2]).unwrap();
        let (x, y) = s.batch::<f32>(&[2, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 1, 2]);
        assert_eq!(x.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, vec![2, 0]);
        assert!(s.batch::<f32>(&[3]).is_err());
    }

    #[test]
    fn normalization_uses_training_statistics() {
        let train = Split::new([1, 1, 2], vec![0.0, 1.0, 0.0, 1.0], vec![0, 1]).unwrap();
        let test = Split::new([1, 1, 2], vec![0.5, 1.0], vec![1]).unwrap();
        let d = Dataset::from_unit_splits(
            DataSource::Synthetic {
                classes: 2,
                n_train: 2,
                n_test: 1,
                side: 1,
                seed: 0,
            },
            train,
            test,
            2,
        )
        .unwrap();
        assert_eq!(d.spec.mean, vec![0.5]);
        assert_eq!(d.spec.std, vec![0.5]);
        assert_eq!(d.train.images(), &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(d.test.images(), &[0.0, 1.0]);
    }
}
