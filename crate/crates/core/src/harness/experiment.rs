//! Single runs and paired TE-on/TE-off comparisons.

use std::fmt::Write as _;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::dataset::{DataSource, Dataset};
use super::idx::load_idx_dataset;
use super::metrics::{format_real, MetricsRow, SplitKind};
use super::synth::synth_digits;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::train::{evaluate, train_epoch, TrainState};

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DataSource::Idx {
            train_images,
            train_labels,
            test,
        } => load_idx_dataset(
            train_images,
            train_labels,
            test.as_ref().map(|(i, l)| (i.as_path(), l.as_path())),
            cfg.classes,
        ),
        &DataSource::Synthetic {
            classes,
            n_train,
            n_test,
            side,
            seed,
        } => synth_digits(classes, n_train, n_test, side, seed),
    }
}

pub fn build_network(cfg: &ExperimentConfig) -> Result<Network<f32>> {
    let (shape, layers) = cfg.architecture()?;
    Network::new(&shape, layers, cfg.seeds.init)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub test_loss: f64,
    pub test_top1: f64,
    /// Training plus evaluation wall time.
    pub seconds: f64,
    pub train_seconds: f64,
    pub te_seconds: f64,
    pub te_pair_evaluations: u64,
    pub param_hash: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub te_enabled: bool,
    pub initial_param_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// First 1-based epoch whose test top-1 reached the target.
    pub target_epoch: Option<usize>,
    /// Set when training aborted on a non-finite value.
    pub diverged: Option<String>,
    pub total_seconds: f64,
    pub rows: Vec<MetricsRow>,
    pub te_applications: u64,
    pub non_amplification_violations: u64,
    pub network: Network<f32>,
    pub state: TrainState,
}

impl RunOutcome {
    pub fn top1_at(&self, epoch: usize) -> Option<f64> {
        epoch
            .checked_sub(1)
            .and_then(|i| self.epochs.get(i))
            .map(|e| e.test_top1)
    }

    pub fn avg_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            0.0
        } else {
            self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
        }
    }

    pub fn te_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.te_seconds).sum()
    }
}

/// Trains until the target accuracy or the epoch cap; `stop_at_target`
/// false always runs the full cap.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &Dataset,
    stop_at_target: bool,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut net = build_network(cfg)?;
    let tc = cfg.train_config();
    let mut state = TrainState::new(&net, &tc, &cfg.seeds, cfg.run_id.clone())?;
    resume(cfg, data, stop_at_target, &mut net, &mut state, start)
}

/// Continues a run from the given network and state.
pub fn resume(
    cfg: &ExperimentConfig,
    data: &Dataset,
    stop_at_target: bool,
    net: &mut Network<f32>,
    state: &mut TrainState,
    start: Instant,
) -> Result<RunOutcome> {
    let tc = cfg.train_config();
    let mut out = RunOutcome {
        run_id: state.run_id.clone(),
        te_enabled: cfg.te.enabled,
        initial_param_hash: net.param_hash(),
        epochs: Vec::new(),
        target_epoch: None,
        diverged: None,
        total_seconds: 0.0,
        rows: Vec::new(),
        te_applications: 0,
        non_amplification_violations: 0,
        network: net.clone(),
        state: state.clone(),
    };
    while state.epoch < cfg.epochs {
        let epoch_start = Instant::now();
        let m = match train_epoch(net, &data.train, &tc, state) {
            Ok(m) => m,
            Err(Error::NonFinite { context }) => {
                out.diverged = Some(context);
                break;
            }
            Err(e) => return Err(e),
        };
        let eval_start = Instant::now();
        let eval = evaluate(net, &data.test, tc.batch_size)?;
        let eval_seconds = eval_start.elapsed().as_secs_f64();
        let seconds = epoch_start.elapsed().as_secs_f64();
        out.rows.extend(m.rows);
        let (batch_ms, epoch_s) = if tc.record_timing {
            (eval_seconds * 1e3, seconds)
        } else {
            (0.0, 0.0)
        };
        let te = state.te_matrix();
        out.rows.push(MetricsRow {
            run_id: state.run_id.clone(),
            epoch: m.epoch,
            batch: m.batches,
            split: SplitKind::Test,
            loss: eval.loss,
            top1: eval.top1,
            te_mean: te.mean(),
            te_std: te.std(),
            active_pairs: te.active_count(),
            batch_ms,
            epoch_s,
        });
        let number = m.epoch + 1;
        out.epochs.push(EpochRecord {
            epoch: number,
            train_loss: m.train_loss,
            train_top1: m.train_top1,
            test_loss: eval.loss,
            test_top1: eval.top1,
            seconds,
            train_seconds: m.seconds,
            te_seconds: m.te_seconds,
            te_pair_evaluations: m.te_pair_evaluations,
            param_hash: net.param_hash(),
        });
        if out.target_epoch.is_none() && eval.top1 >= cfg.target_accuracy {
            out.target_epoch = Some(number);
            if stop_at_target {
                break;
            }
        }
    }
    out.total_seconds = start.elapsed().as_secs_f64();
    out.te_applications = state.te_applications;
    out.non_amplification_violations = state.non_amplification_violations;
    out.network = net.clone();
    out.state = state.clone();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub target_accuracy: f64,
    pub epoch_cap: usize,
    /// Earliest epoch at which either run reached the target, else the cap.
    pub comparison_epoch: usize,
    pub te_on: RunOutcome,
    pub te_off: RunOutcome,
}

impl CompareReport {
    /// Both runs started from the same weights.
    pub fn same_initialization(&self) -> bool {
        self.te_on.initial_param_hash == self.te_off.initial_param_hash
    }

    /// Plain-text table with one column per run.
    pub fn render(&self) -> String {
        let target = |r: &RunOutcome| match (r.target_epoch, &r.diverged) {
            (Some(e), _) => e.to_string(),
            (None, Some(_)) => "diverged".into(),
            (None, None) => "not reached".into(),
        };
        let top1 = |r: &RunOutcome| {
            r.top1_at(self.comparison_epoch)
                .map(|a| format!("{:.2}%", a * 100.0))
                .unwrap_or_else(|| "n/a".into())
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<34}{:>14}{:>14}", "", "TE", "baseline");
        let row = |s: &mut String, label: String, a: String, b: String| {
            let _ = writeln!(s, "{label:<34}{a:>14}{b:>14}");
        };
        let (on, off) = (&self.te_on, &self.te_off);
        row(
            &mut s,
            format!(
                "Target {:.2}% accuracy in epoch",
                self.target_accuracy * 100.0
            ),
            target(on),
            target(off),
        );
        row(
            &mut s,
            format!("Top-1 accuracy at epoch {}", self.comparison_epoch),
            top1(on),
            top1(off),
        );
        row(
            &mut s,
            "Average epoch duration (s)".into(),
            format_real(on.avg_epoch_seconds()),
            format_real(off.avg_epoch_seconds()),
        );
        row(
            &mut s,
            "Total duration (s)".into(),
            format_real(on.total_seconds),
            format_real(off.total_seconds),
        );
        row(
            &mut s,
            "TE computation (s)".into(),
            format_real(on.te_seconds()),
            format_real(off.te_seconds()),
        );
        row(
            &mut s,
            "Epochs run".into(),
            on.epochs.len().to_string(),
            off.epochs.len().to_string(),
        );
        let _ = writeln!(
            s,
            "initial parameters identical: {}",
            if self.same_initialization() {
                "yes"
            } else {
                "no"
            }
        );
        s
    }
}

/// Earliest epoch at which either run reached the target, else the cap.
pub fn comparison_epoch(on: &RunOutcome, off: &RunOutcome, cap: usize) -> usize {
    match (on.target_epoch, off.target_epoch) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => cap,
    }
}

/// TE-on and TE-off runs with identical seeds and hyperparameters, run one
/// after the other. Each stops at the target or the epoch cap.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<CompareReport> {
    let mut on_cfg = cfg.clone();
    on_cfg.te.enabled = true;
    on_cfg.run_id = format!("{}-te", cfg.run_id);
    let mut off_cfg = cfg.clone();
    off_cfg.te.enabled = false;
    off_cfg.run_id = format!("{}-base", cfg.run_id);
    let te_on = run_single(&on_cfg, data, true)?;
    let te_off = run_single(&off_cfg, data, true)?;
    Ok(CompareReport {
        target_accuracy: cfg.target_accuracy,
        epoch_cap: cfg.epochs,
        comparison_epoch: comparison_epoch(&te_on, &te_off, cfg.epochs),
        te_on,
        te_off,
    })
}
