//! Mini-batch training with transfer-entropy damping of the final linear
//! layer.
//!
//! Per batch: forward → record monitored activations → loss → backward →
//! SGD-momentum step → (once the warm-up gate opens) recompute the TE matrix
//! and multiply every monitored weight by `1 - te` for its connection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::dataset::Split;
use crate::harness::metrics::{MetricsRow, SplitKind};
use crate::nn::{
    network_backward, network_forward, sgd_momentum_step, softmax_cross_entropy, LayerSpec, Mode,
    Network,
};
use crate::te::{
    compute_te_matrix, select_pairs, Direction, PairPolicy, PairSet, Recorder, TeMatrix,
    ThresholdMode,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TeConfig {
    pub enabled: bool,
    /// Threshold for the final linear layer's inputs.
    pub g_src: f64,
    /// Threshold for the softmax outputs.
    pub g_dst: f64,
    pub threshold_mode: ThresholdMode,
    /// Events kept per neuron.
    pub window: usize,
    pub pair_fraction: f64,
    pub pair_policy: PairPolicy,
    pub direction: Direction,
    /// `None` means `ceil(window / batch_size)`.
    pub warmup_batches: Option<usize>,
    pub every_n_batches: usize,
    /// Logarithm base of TE values fed to the modulation; at least 2 so
    /// values stay in `[0, 1]`.
    pub log_base: f64,
    /// Run the whole TE path but apply an all-zero matrix.
    pub force_zero: bool,
}

impl Default for TeConfig {
    fn default() -> Self {
        TeConfig {
            enabled: true,
            g_src: 2.0,
            g_dst: 0.99,
            threshold_mode: ThresholdMode::Absolute,
            window: 100,
            pair_fraction: 1.0,
            pair_policy: PairPolicy::PerEpoch,
            direction: Direction::Forward,
            warmup_batches: None,
            every_n_batches: 1,
            log_base: 2.0,
            force_zero: false,
        }
    }
}

impl TeConfig {
    /// Validates against the batch size and returns the effective warm-up.
    pub fn warmup_for(&self, batch_size: usize) -> Result<usize> {
        if self.window < 3 {
            return Err(Error::config(format!(
                "te window length must be >= 3, got {}",
                self.window
            )));
        }
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.pair_fraction > 0.0 && self.pair_fraction <= 1.0) {
            return Err(Error::config(format!(
                "pair fraction must be in (0,1], got {}",
                self.pair_fraction
            )));
        }
        if self.every_n_batches == 0 {
            return Err(Error::config("te_every_n_batches must be positive"));
        }
        if !self.log_base.is_finite() || self.log_base < 2.0 {
            return Err(Error::config(format!(
                "log base must be >= 2, got {}",
                self.log_base
            )));
        }
        let min = self.window.div_ceil(batch_size);
        match self.warmup_batches {
            None => Ok(min),
            Some(w) if w >= min => Ok(w),
            Some(w) => Err(Error::config(format!(
                "warmup_batches {w} < ceil(window / batch size) = {min}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub te: TeConfig,
    /// When false, timing columns of metrics rows are written as 0 so runs
    /// with equal seeds produce byte-identical CSV.
    pub record_timing: bool,
}

/// Layer indices and sizes of the monitored pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Monitored {
    pub linear: usize,
    pub softmax: usize,
    pub n_src: usize,
    pub n_dst: usize,
}

/// Locates the final linear layer feeding the closing softmax.
pub fn attach_te_hook<T: Real>(net: &Network<T>) -> Result<Monitored> {
    let layers = net.layers();
    let n = layers.len();
    match (n.checked_sub(2).map(|i| &layers[i]), layers.last()) {
        (
            Some(&LayerSpec::Linear {
                in_features,
                out_features,
            }),
            Some(LayerSpec::Softmax),
        ) => Ok(Monitored {
            linear: n - 2,
            softmax: n - 1,
            n_src: in_features,
            n_dst: out_features,
        }),
        _ => Err(Error::config(
            "transfer-entropy feedback needs a network ending in linear -> softmax",
        )),
    }
}

/// `w'[j][i] = w[j][i] * (1 - te[i][j])` for the `[n_dst, n_src]` weight of
/// the monitored layer.
pub fn te_weight_update<T: Real>(w_updated: &Tensor<T>, te: &TeMatrix) -> Result<Tensor<T>> {
    let (n_src, n_dst) = (te.n_src(), te.n_dst());
    if w_updated.shape() != [n_dst, n_src] {
        return Err(Error::shape(format!(
            "weight {:?} does not match te matrix {n_src}x{n_dst}",
            w_updated.shape()
        )));
    }
    let mut out = w_updated.clone();
    let od = out.data_mut();
    for j in 0..n_dst {
        for i in 0..n_src {
            let t = te.get(i, j);
            if t != 0.0 {
                let w = &mut od[j * n_src + i];
                *w = T::from_f64(w.as_f64() * (1.0 - t));
            }
        }
    }
    Ok(out)
}

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub pairs: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            init: seed,
            shuffle: seed ^ 0x5348_5546_464c_4531,
            dropout: seed ^ 0x4452_4f50_4f55_5431,
            pairs: seed ^ 0x5041_4952_5331_3131,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub pairs: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seeds: &Seeds) -> Self {
        RngStreams {
            shuffle: ChaCha8Rng::seed_from_u64(seeds.shuffle),
            dropout: ChaCha8Rng::seed_from_u64(seeds.dropout),
            pairs: ChaCha8Rng::seed_from_u64(seeds.pairs),
        }
    }
}

/// Mutable state carried across batches and epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub run_id: String,
    /// Epochs completed.
    pub epoch: usize,
    pub global_batch: u64,
    pub rngs: RngStreams,
    pub(crate) monitored: Option<Monitored>,
    pub(crate) recorder: Option<Recorder>,
    pub(crate) warmup: usize,
    pub(crate) pairs: Option<PairSet>,
    pub(crate) te: TeMatrix,
    /// Batch index at which the gate first opened.
    pub(crate) gate_opened_at: Option<u64>,
    pub te_applications: u64,
    /// Monitored weights whose magnitude grew under modulation; must stay 0.
    pub non_amplification_violations: u64,
    pub clamped_probabilities: u64,
}

impl TrainState {
    pub fn new<T: Real>(
        net: &Network<T>,
        cfg: &TrainConfig,
        seeds: &Seeds,
        run_id: impl Into<String>,
    ) -> Result<Self> {
        let warmup = cfg.te.warmup_for(cfg.batch_size)?;
        let (monitored, recorder, te) = if cfg.te.enabled {
            let m = attach_te_hook(net)?;
            let rec = Recorder::new(
                m.n_src,
                m.n_dst,
                cfg.te.window,
                cfg.te.g_src,
                cfg.te.g_dst,
                cfg.te.threshold_mode,
            )?;
            (Some(m), Some(rec), TeMatrix::warmup(m.n_src, m.n_dst))
        } else {
            (None, None, TeMatrix::zeros(0, 0))
        };
        Ok(TrainState {
            run_id: run_id.into(),
            epoch: 0,
            global_batch: 0,
            rngs: RngStreams::new(seeds),
            monitored,
            recorder,
            warmup,
            pairs: None,
            te,
            gate_opened_at: None,
            te_applications: 0,
            non_amplification_violations: 0,
            clamped_probabilities: 0,
        })
    }

    pub fn monitored(&self) -> Option<Monitored> {
        self.monitored
    }

    pub fn recorder(&self) -> Option<&Recorder> {
        self.recorder.as_ref()
    }

    pub fn pairs(&self) -> Option<&PairSet> {
        self.pairs.as_ref()
    }

    /// Most recent TE matrix; all zeros while TE is off or warming up.
    pub fn te_matrix(&self) -> &TeMatrix {
        &self.te
    }

    pub fn warmup_batches(&self) -> usize {
        self.warmup
    }
}

/// True once TE is enabled, the global batch counter has reached the warm-up
/// length and every window is full.
pub fn warmup_gate(state: &TrainState, cfg: &TeConfig) -> bool {
    cfg.enabled
        && state.global_batch >= state.warmup as u64
        && state.recorder.as_ref().is_some_and(Recorder::is_full)
}

#[derive(Debug, Clone, Default)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub rows: Vec<MetricsRow>,
    pub batches: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    /// Wall-clock seconds of the training phase.
    pub seconds: f64,
    /// Seconds spent computing TE matrices.
    pub te_seconds: f64,
    pub te_applications: u64,
    /// Pairs evaluated, summed over TE recomputations.
    pub te_pair_evaluations: u64,
}

/// One pass over `data` in a freshly shuffled order; the trailing partial
/// batch is dropped.
pub fn train_epoch<T: Real>(
    net: &mut Network<T>,
    data: &Split,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<EpochMetrics> {
    let b = cfg.batch_size;
    let n_batches = data.len() / b;
    if n_batches == 0 {
        return Err(Error::config(format!(
            "{} samples are fewer than one batch of {b}",
            data.len()
        )));
    }
    let epoch_start = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut state.rngs.shuffle);

    let te_cfg = &cfg.te;
    if let (true, Some(m)) = (te_cfg.enabled, state.monitored) {
        if te_cfg.pair_policy == PairPolicy::PerEpoch || state.pairs.is_none() {
            state.pairs = Some(select_pairs(
                m.n_src,
                m.n_dst,
                te_cfg.pair_fraction,
                te_cfg.pair_policy,
                &mut state.rngs.pairs,
            )?);
        }
    }

    let mut out = EpochMetrics {
        epoch: state.epoch,
        batches: n_batches,
        ..Default::default()
    };
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (bi, idx) in order.chunks_exact(b).enumerate() {
        let batch_start = Instant::now();
        let (x, labels) = data.batch::<T>(idx)?;
        let trace = network_forward(net, &x, Mode::Train, &mut state.rngs.dropout)?;
        if let (Some(m), Some(rec)) = (state.monitored, state.recorder.as_mut()) {
            rec.record_batch(trace.layer_input(m.linear), trace.layer_output(m.softmax))?;
        }
        let loss = softmax_cross_entropy(trace.output(), &labels)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss at epoch {} batch {bi}", state.epoch),
            });
        }
        state.clamped_probabilities += loss.clamped as u64;
        net.commit_batch_stats(&trace);
        let grads = network_backward(net, &trace, &loss.grad)?;
        drop(trace);
        sgd_momentum_step(net, &grads, cfg.lr, cfg.momentum)?;

        if warmup_gate(state, te_cfg) {
            let m = state.monitored.expect("gate implies monitored layers");
            let opened = *state.gate_opened_at.get_or_insert(state.global_batch);
            if (state.global_batch - opened).is_multiple_of(te_cfg.every_n_batches as u64) {
                let te_start = Instant::now();
                if te_cfg.pair_policy == PairPolicy::PerWindow {
                    state.pairs = Some(select_pairs(
                        m.n_src,
                        m.n_dst,
                        te_cfg.pair_fraction,
                        te_cfg.pair_policy,
                        &mut state.rngs.pairs,
                    )?);
                }
                let pairs = state.pairs.as_ref().expect("pairs selected at epoch start");
                let rec = state.recorder.as_ref().expect("gate implies recorder");
                let mut te = compute_te_matrix(rec, pairs, te_cfg.direction)?;
                if te_cfg.log_base != 2.0 {
                    te.rescale_to_base(te_cfg.log_base);
                }
                out.te_seconds += te_start.elapsed().as_secs_f64();
                out.te_pair_evaluations += pairs.len() as u64;
                state.te = if te_cfg.force_zero {
                    TeMatrix::zeros(m.n_src, m.n_dst)
                } else {
                    te
                };
            }
            let w = &mut net.params_mut(m.linear)[0];
            let updated = te_weight_update(w, &state.te)?;
            state.non_amplification_violations += updated
                .data()
                .iter()
                .zip(w.data())
                .filter(|(a, b)| a.abs() > b.abs())
                .count() as u64;
            *w = updated;
            state.te_applications += 1;
            out.te_applications += 1;
        }

        loss_sum += loss.loss;
        correct += loss.correct;
        let (batch_ms, epoch_s) = if cfg.record_timing {
            (
                batch_start.elapsed().as_secs_f64() * 1e3,
                epoch_start.elapsed().as_secs_f64(),
            )
        } else {
            (0.0, 0.0)
        };
        out.rows.push(MetricsRow {
            run_id: state.run_id.clone(),
            epoch: state.epoch,
            batch: bi,
            split: SplitKind::Train,
            loss: loss.loss,
            top1: loss.correct as f64 / b as f64,
            te_mean: state.te.mean(),
            te_std: state.te.std(),
            active_pairs: state.te.active_count(),
            batch_ms,
            epoch_s,
        });
        state.global_batch += 1;
    }
    out.train_loss = loss_sum / n_batches as f64;
    out.train_top1 = correct as f64 / (n_batches * b) as f64;
    out.seconds = epoch_start.elapsed().as_secs_f64();
    state.epoch += 1;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub top1: f64,
}

/// Eval-mode loss and top-1 accuracy over a whole split.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Split, batch_size: usize) -> Result<Evaluation> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk)?;
        let trace = network_forward(net, &x, Mode::Eval, &mut rng)?;
        let out = softmax_cross_entropy(trace.output(), &labels)?;
        loss += out.loss * chunk.len() as f64;
        correct += out.correct;
    }
    let n = data.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        top1: correct as f64 / n,
    })
}
