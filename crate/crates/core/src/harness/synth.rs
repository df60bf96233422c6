//! Seeded stand-in for small grey-scale digit datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DataSource, Dataset, Split};
use crate::error::{Error, Result};

const STROKES: usize = 3;
/// Class templates are one shared stroke set with every endpoint moved by up
/// to this many pixels.
const CLASS_OFFSET: f64 = 1.0;
const MAX_SHIFT: i64 = 2;
const NOISE_STD: f64 = 0.1;

struct Template {
    side: usize,
    pixels: Vec<f64>,
}

fn segment_distance(px: f64, py: f64, (ax, ay, bx, by): (f64, f64, f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

type Stroke = (f64, f64, f64, f64);

fn base_strokes(side: usize, rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    let (lo, hi) = (2.0, side as f64 - 3.0);
    (0..STROKES)
        .map(|_| {
            (
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
            )
        })
        .collect()
}

impl Template {
    fn variant(side: usize, base: &[Stroke], rng: &mut ChaCha8Rng) -> Self {
        let (lo, hi) = (1.0, side as f64 - 2.0);
        let mut nudge = |v: f64| (v + rng.random_range(-CLASS_OFFSET..=CLASS_OFFSET)).clamp(lo, hi);
        let strokes: Vec<Stroke> = base
            .iter()
            .map(|&(ax, ay, bx, by)| (nudge(ax), nudge(ay), nudge(bx), nudge(by)))
            .collect();
        let mut pixels = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let d = strokes
                    .iter()
                    .map(|&s| segment_distance(x as f64, y as f64, s))
                    .fold(f64::INFINITY, f64::min);
                pixels[y * side + x] = (1.5 - d).clamp(0.0, 1.0);
            }
        }
        Template { side, pixels }
    }

    fn at(&self, x: i64, y: i64) -> f64 {
        let s = self.side as i64;
        if (0..s).contains(&x) && (0..s).contains(&y) {
            self.pixels[(y * s + x) as usize]
        } else {
            0.0
        }
    }
}

/// Bytes of `n` samples, classes assigned round-robin then shuffled.
fn render(templates: &[Template], n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let side = templates[0].side;
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut labels: Vec<u8> = (0..n).map(|i| (i % templates.len()) as u8).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), rng);
    let mut pixels = Vec::with_capacity(n * side * side);
    for &l in &labels {
        let t = &templates[l as usize];
        let dx = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
        let dy = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                let v = t.at(x - dx, y - dy) + noise.sample(rng);
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    (pixels, labels)
}

/// `(train_pixels, train_labels, test_pixels, test_labels)`.
pub type SplitBytes = (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>);

/// Raw bytes of the two splits, each image `side x side`.
pub fn synth_digits_bytes(
    classes: usize,
    n_train: usize,
    n_test: usize,
    side: usize,
    seed: u64,
) -> Result<SplitBytes> {
    if side < 8 {
        return Err(Error::config(format!(
            "synthetic side must be >= 8, got {side}"
        )));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::config(format!(
            "synthetic classes must be in 2..=256, got {classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = base_strokes(side, &mut rng);
    let templates: Vec<Template> = (0..classes)
        .map(|_| Template::variant(side, &base, &mut rng))
        .collect();
    let split_rng = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let (tp, tl) = render(&templates, n_train, &mut split_rng(1));
    let (sp, sl) = render(&templates, n_test, &mut split_rng(2));
    Ok((tp, tl, sp, sl))
}

/// Synthetic dataset, pixels quantized to bytes so it round-trips through
/// IDX files exactly.
pub fn synth_digits(
    classes: usize,
    n_train: usize,
    n_test: usize,
    side: usize,
    seed: u64,
) -> Result<Dataset> {
    let (tp, tl, sp, sl) = synth_digits_bytes(classes, n_train, n_test, side, seed)?;
    let unit = |p: Vec<u8>| p.into_iter().map(|b| b as f32 / 255.0).collect();
    let shape = [1, side, side];
    Dataset::from_unit_splits(
        DataSource::Synthetic {
            classes,
            n_train,
            n_test,
            side,
            seed,
        },
        Split::new(shape, unit(tp), tl)?,
        Split::new(shape, unit(sp), sl)?,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = synth_digits(10, 2000, 100, 16, 7).unwrap();
        assert_eq!(a.train.len(), 2000);
        assert_eq!(a.train.sample_shape(), [1, 16, 16]);
        let mut counts = [0; 10];
        a.train
            .labels()
            .iter()
            .for_each(|&l| counts[l as usize] += 1);
        assert_eq!(counts, [200; 10]);
        assert_eq!(a, synth_digits(10, 2000, 100, 16, 7).unwrap());
        assert_ne!(a.train, synth_digits(10, 2000, 100, 16, 8).unwrap().train);
    }

    #[test]
    fn small_side_rejected() {
        assert!(synth_digits(10, 10, 10, 7, 0).is_err());
    }
}
