use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tecnn::harness::{
    emit_metrics, load_checkpoint, load_config, load_dataset, parse_dataset, parse_pairs, resume,
    run_experiment, run_single, save_checkpoint, synth_digits_bytes, write_idx_images,
    write_idx_labels, DataSource, ExperimentConfig, RunOutcome,
};
use tecnn::nn::{check_layer_kinds, grad_check_with, GradCheckOptions, Network};
use tecnn::te::{te_pair, te_pair_oracle, BinaryWindow, Direction};
use tecnn::{Error, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "tecnn",
    version,
    about = "CNN training with transfer-entropy feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single run.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write a checkpoint here after training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Paired TE-on / TE-off runs with identical seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare analytic and finite-difference gradients in 64-bit, per layer
    /// kind or (with --arch) on a whole network.
    Gradcheck {
        #[arg(long)]
        arch: Option<String>,
        /// Network seeds per layer kind.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
    /// Transfer entropy between two bit streams read from a CSV file.
    Te {
        /// Two columns `src,dst` of 0/1 values; a non-numeric first line is
        /// treated as a header.
        input: PathBuf,
        #[arg(long, default_value = "forward")]
        te_direction: Direction,
    },
    /// Write a synthetic dataset as IDX files.
    Synth {
        #[arg(long, default_value = "synth:10,2000,16")]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["on", "off"])]
    te: Option<String>,
    /// `idx:IMG,LBL[,IMG_T,LBL_T]` or `synth:classes,n,side`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    target_acc: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pair_fraction: Option<f64>,
    #[arg(long, value_parser = ["epoch", "window"])]
    pair_policy: Option<String>,
    #[arg(long, value_parser = ["forward", "backward"])]
    te_direction: Option<String>,
    /// Metrics CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zeros in the timing columns so equal seeds give identical CSV.
    #[arg(long)]
    no_timing: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => load_config(p)?,
            None => String::new(),
        };
        let mut pairs: Vec<(String, String)> = parse_pairs(&text)?
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        flag("arch", self.arch.clone());
        flag("te", self.te.clone());
        flag("dataset", self.dataset.clone());
        flag("epochs", self.epochs.map(|v| v.to_string()));
        flag("target_accuracy", self.target_acc.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag(
            "te_pair_fraction",
            self.pair_fraction.map(|v| v.to_string()),
        );
        flag("te_pair_policy", self.pair_policy.clone());
        flag("te_direction", self.te_direction.clone());
        flag(
            "metrics_out",
            self.out.as_ref().map(|p| p.display().to_string()),
        );
        if self.no_timing {
            flag("record_timing", Some("off".into()));
        }
        ExperimentConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

fn print_run(r: &RunOutcome) {
    for e in &r.epochs {
        println!(
            "{} epoch {:>3}  train loss {:.4} top1 {:.4}  test loss {:.4} top1 {:.4}  {:.2}s (te {:.3}s)",
            r.run_id, e.epoch, e.train_loss, e.train_top1, e.test_loss, e.test_top1, e.seconds, e.te_seconds
        );
    }
    match (r.target_epoch, &r.diverged) {
        (Some(e), _) => println!("{}: target reached at epoch {e}", r.run_id),
        (None, Some(why)) => println!("{}: diverged ({why})", r.run_id),
        (None, None) => println!("{}: target not reached", r.run_id),
    }
}

fn train(run: &RunArgs, resume_from: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = run.config()?;
    let data = load_dataset(&cfg)?;
    let start = Instant::now();
    let outcome = match resume_from {
        Some(p) => {
            let (mut net, mut state) = load_checkpoint::<f32>(p)?;
            if state.recorder().is_some() != cfg.te.enabled {
                return Err(Error::Config(
                    "checkpoint TE state does not match --te".into(),
                ));
            }
            resume(&cfg, &data, true, &mut net, &mut state, start)?
        }
        None => run_single(&cfg, &data, true)?,
    };
    print_run(&outcome);
    if outcome.non_amplification_violations > 0 {
        eprintln!(
            "warning: {} weights grew under TE modulation",
            outcome.non_amplification_violations
        );
    }
    if let Some(p) = &cfg.metrics_out {
        emit_metrics(&outcome.rows, p)?;
    }
    if let Some(p) = checkpoint.or(cfg.checkpoint_out.as_deref()) {
        save_checkpoint(&outcome.network, &outcome.state, p)?;
    }
    Ok(())
}

fn compare(run: &RunArgs) -> Result<()> {
    let cfg = run.config()?;
    let data = load_dataset(&cfg)?;
    let report = run_experiment(&cfg, &data)?;
    print_run(&report.te_on);
    print_run(&report.te_off);
    let text = report.render();
    print!("{text}");
    if let Some(p) = &cfg.metrics_out {
        let rows: Vec<_> = report
            .te_on
            .rows
            .iter()
            .chain(&report.te_off.rows)
            .cloned()
            .collect();
        emit_metrics(&rows, p)?;
    }
    if let Some(p) = &cfg.report_out {
        std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn gradcheck_kinds(seeds: u64, batch: usize) -> Result<()> {
    for (kind, worst) in check_layer_kinds(0..seeds, batch)? {
        println!("{kind:<12} max relative error {worst:.3e}");
    }
    Ok(())
}

fn gradcheck(arch: &str, seed: u64, eps: f64, batch: usize, samples: usize) -> Result<()> {
    let cfg = ExperimentConfig::from_pairs([("arch", arch)])?;
    let (shape, layers) = cfg.architecture()?;
    let net = Network::<f64>::new(&shape, layers, seed)?;
    let classes = net.output_shape()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut dims = vec![batch];
    dims.extend_from_slice(&shape);
    let n: usize = dims.iter().product();
    let x = Tensor::from_vec(
        &dims,
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let opts = GradCheckOptions {
        max_per_tensor: samples,
        ..GradCheckOptions::default()
    };
    let report = grad_check_with(&net, &x, &labels, eps, &opts)?;
    for (name, err) in &report.per_tensor {
        println!("{name:<28} {err:.3e}");
    }
    println!(
        "max relative error {:.3e} over {} coordinates",
        report.max_rel_err, report.checked
    );
    Ok(())
}

fn parse_bit(s: &str) -> Option<bool> {
    match s.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn te_csv(input: &Path, direction: Direction) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let cols: Vec<&str> = line.split(',').collect();
        let bits = match cols[..] {
            [a, b] => parse_bit(a).zip(parse_bit(b)),
            _ => None,
        };
        match bits {
            Some((a, b)) => {
                src.push(a);
                dst.push(b);
            }
            None if n == 0 => continue,
            None => {
                return Err(Error::Config(format!(
                    "line {}: expected two 0/1 columns",
                    n + 1
                )))
            }
        }
    }
    if direction == Direction::Backward {
        std::mem::swap(&mut src, &mut dst);
    }
    let s = BinaryWindow::from_bits(src.len().max(1), src);
    let d = BinaryWindow::from_bits(dst.len().max(1), dst);
    let te = te_pair(&s, &d)?;
    let oracle = te_pair_oracle(&s, &d)?;
    println!("te_bits={te:.12}");
    println!("oracle_bits={oracle:.12}");
    println!("length={}", s.len());
    Ok(())
}

fn synth(dataset: &str, seed: u64, out: &Path) -> Result<()> {
    let DataSource::Synthetic {
        classes,
        n_train,
        n_test,
        side,
        ..
    } = parse_dataset(dataset, seed)?
    else {
        return Err(Error::Config(
            "synth expects --dataset synth:classes,n,side".into(),
        ));
    };
    let (tp, tl, sp, sl) = synth_digits_bytes(classes, n_train, n_test, side, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let shape = [1, side, side];
    write_idx_images(&out.join("train-images.idx"), shape, &tp)?;
    write_idx_labels(&out.join("train-labels.idx"), &tl)?;
    write_idx_images(&out.join("test-images.idx"), shape, &sp)?;
    write_idx_labels(&out.join("test-labels.idx"), &sl)?;
    println!(
        "wrote {n_train} train / {n_test} test images to {}",
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            run,
            resume,
            checkpoint,
        } => train(run, resume.as_deref(), checkpoint.as_deref()),
        Command::Compare { run } => compare(run),
        Command::Gradcheck {
            arch: None,
            seeds,
            batch,
            ..
        } => gradcheck_kinds(*seeds, *batch),
        Command::Gradcheck {
            arch: Some(arch),
            seed,
            eps,
            batch,
            samples,
            ..
        } => gradcheck(arch, *seed, *eps, *batch, *samples),
        Command::Te {
            input,
            te_direction,
        } => te_csv(input, *te_direction),
        Command::Synth { dataset, seed, out } => synth(dataset, *seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
