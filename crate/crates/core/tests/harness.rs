use std::fs;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tecnn::harness::{
    checkpoint_bytes, checkpoint_from_bytes, emit_metrics, load_idx, load_idx_dataset, metrics_csv,
    parse_metrics, run_experiment, run_single, synth_digits, synth_digits_bytes, write_idx_images,
    write_idx_labels, ExperimentConfig, MetricsRow, SplitKind, METRICS_HEADER,
};
use tecnn::train::{train_epoch, TrainState};
use tecnn::Error;

fn mini_config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "arch = usps-mini\ndataset = synth:10,360,16,120\nepochs = 2\ntarget_accuracy = 1.0\n{extra}"
    ))
    .unwrap()
}

#[test]
fn labels_with_image_magic_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx_images(&ip, [1, 2, 2], &[0; 16]).unwrap();
    // A label file carrying the image magic.
    write_idx_images(&lp, [1, 2, 2], &[0; 16]).unwrap();
    let err = load_idx(&ip, &lp).unwrap_err();
    assert!(matches!(err, Error::Load { offset: 0, .. }));
    assert!(err.to_string().contains("wrong magic"), "{err}");
}

#[test]
fn synthetic_set_round_trips_through_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let (tp, tl, sp, sl) = synth_digits_bytes(10, 200, 50, 16, 4).unwrap();
    let p = |n: &str| dir.path().join(n);
    write_idx_images(&p("ti"), [1, 16, 16], &tp).unwrap();
    write_idx_labels(&p("tl"), &tl).unwrap();
    write_idx_images(&p("si"), [1, 16, 16], &sp).unwrap();
    write_idx_labels(&p("sl"), &sl).unwrap();
    let from_files = load_idx_dataset(&p("ti"), &p("tl"), Some((&p("si"), &p("sl"))), 10).unwrap();
    let direct = synth_digits(10, 200, 50, 16, 4).unwrap();
    assert_eq!(from_files.train, direct.train);
    assert_eq!(from_files.test, direct.test);
    assert_eq!(from_files.spec.mean, direct.spec.mean);

    let held_out = load_idx_dataset(&p("ti"), &p("tl"), None, 10).unwrap();
    assert_eq!((held_out.train.len(), held_out.test.len()), (160, 40));
}

#[test]
fn synthetic_digits_are_learnable_but_not_trivial() {
    let cfg = ExperimentConfig::parse(
        "arch = custom\ninput_shape = 1,16,16\nlayers = linear(256,10) softmax\nbatch_size = 60\nte = off\n\
         dataset = synth:10,2000,16,500\nepochs = 15\ntarget_accuracy = 1.0",
    )
    .unwrap();
    let data = synth_digits(10, 2000, 500, 16, 0).unwrap();
    let run = run_single(&cfg, &data, false).unwrap();
    let acc = run.epochs.last().unwrap().test_top1;
    assert!(acc > 0.6 && acc < 0.95, "linear classifier accuracy {acc}");
}

fn row(run: &str, epoch: usize, batch: usize, split: SplitKind, loss: f64) -> MetricsRow {
    MetricsRow {
        run_id: run.into(),
        epoch,
        batch,
        split,
        loss,
        top1: 0.5,
        te_mean: 0.00125,
        te_std: 2.5e-7,
        active_pairs: 144,
        batch_ms: 12.25,
        epoch_s: 0.75,
    }
}

#[test]
fn metrics_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    emit_metrics(&[], &path).unwrap();
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        format!("{METRICS_HEADER}\n")
    );

    let rows = vec![
        row("a", 0, 0, SplitKind::Train, 2.5),
        row("a", 0, 1, SplitKind::Test, 0.125),
    ];
    emit_metrics(&rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.ends_with('\n') && !text.contains('\r'));
    assert_eq!(parse_metrics(&text).unwrap(), rows);
    assert!(metrics_csv(&[row("a,b", 0, 0, SplitKind::Train, 1.0)]).is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let cfg = mini_config("te = on\nte_window_length = 90\nbatch_size = 60");
    let data = synth_digits(10, 360, 120, 16, 0).unwrap();
    let run = run_single(&cfg, &data, false).unwrap();
    let bytes = checkpoint_bytes(&run.network, &run.state);
    assert_eq!(&bytes[..6], b"TECNN1");
    let (net, state) = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    assert_eq!(net, run.network);
    assert_eq!(state.te_matrix(), run.state.te_matrix());
    assert_eq!(checkpoint_bytes(&net, &state), bytes);

    let mut corrupt = bytes.clone();
    corrupt[bytes.len() / 2] ^= 0x40;
    let err = checkpoint_from_bytes::<f32>(&corrupt)
        .unwrap_err()
        .to_string();
    assert!(err.contains("checksum"), "{err}");

    let mut future = bytes.clone();
    future[6] = 9;
    let err = checkpoint_from_bytes::<f32>(&future)
        .unwrap_err()
        .to_string();
    assert!(err.contains("version"), "{err}");

    assert!(checkpoint_from_bytes::<f64>(&bytes).is_err());
}

fn resume_matches_uninterrupted(extra: &str) {
    let cfg = mini_config(extra);
    let data = synth_digits(10, 360, 120, 16, 0).unwrap();
    let tc = cfg.train_config();

    let mut straight = tecnn::harness::build_network(&cfg).unwrap();
    let mut s1 = TrainState::new(&straight, &tc, &cfg.seeds, "r").unwrap();
    let mut rows1 = Vec::new();
    for _ in 0..3 {
        rows1.extend(
            train_epoch(&mut straight, &data.train, &tc, &mut s1)
                .unwrap()
                .rows,
        );
    }

    let mut net = tecnn::harness::build_network(&cfg).unwrap();
    let mut s2 = TrainState::new(&net, &tc, &cfg.seeds, "r").unwrap();
    let mut rows2 = Vec::new();
    rows2.extend(
        train_epoch(&mut net, &data.train, &tc, &mut s2)
            .unwrap()
            .rows,
    );
    let bytes = checkpoint_bytes(&net, &s2);
    drop((net, s2));
    let (mut net, mut s2) = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    for _ in 0..2 {
        rows2.extend(
            train_epoch(&mut net, &data.train, &tc, &mut s2)
                .unwrap()
                .rows,
        );
    }
    assert_eq!(net, straight);
    let strip = |rows: &[MetricsRow]| {
        rows.iter()
            .map(|r| {
                (
                    r.epoch,
                    r.batch,
                    r.loss.to_bits(),
                    r.te_mean.to_bits(),
                    r.te_std.to_bits(),
                    r.active_pairs,
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&rows1), strip(&rows2));
}

#[test]
fn resumed_run_continues_bitwise_without_te() {
    resume_matches_uninterrupted("te = off");
}

#[test]
fn resumed_run_continues_bitwise_with_te() {
    resume_matches_uninterrupted("te = on\nte_pair_fraction = 0.1\nte_pair_policy = window");
}

#[test]
fn unreachable_target_is_reported() {
    let cfg = mini_config("epochs = 1");
    let data = synth_digits(10, 360, 120, 16, 0).unwrap();
    let report = run_experiment(&cfg, &data).unwrap();
    assert!(report.same_initialization());
    assert_eq!(report.comparison_epoch, 1);
    for r in [&report.te_on, &report.te_off] {
        assert_eq!(r.target_epoch, None);
        assert_eq!(r.epochs.len(), 1);
        assert!(r.avg_epoch_seconds() > 0.0);
        let sum: f64 = r.epochs.iter().map(|e| e.seconds).sum();
        assert!(
            (r.total_seconds - sum).abs() <= 0.01 * r.total_seconds,
            "{} vs {sum}",
            r.total_seconds
        );
    }
    let text = report.render();
    assert!(text.contains("not reached"), "{text}");
}

fn tecnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tecnn"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn cli_te_reads_bit_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bits.csv");
    let mut text = String::from("src,dst\n");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src: Vec<u8> = (0..256).map(|_| rng.random_range(0..2u8)).collect();
    let mut prev = 0;
    for &s in &src {
        text.push_str(&format!("{s},{prev}\n"));
        prev = s;
    }
    fs::write(&csv, text).unwrap();
    let out = run_ok(tecnn().arg("te").arg(&csv));
    let value = |key: &str| -> f64 {
        let line = out.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(value("te_bits"), value("oracle_bits"));
    assert!(value("te_bits") > 0.8);
    let back = run_ok(tecnn().args(["te", "--te-direction", "backward"]).arg(&csv));
    let b: f64 = back
        .lines()
        .next()
        .unwrap()
        .split('=')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(b < 0.1, "{back}");
}

#[test]
fn cli_synth_then_train_on_idx_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        tecnn()
            .args(["synth", "--dataset", "synth:10,180,16,60", "--out"])
            .arg(d),
    );
    for f in [
        "train-images.idx",
        "train-labels.idx",
        "test-images.idx",
        "test-labels.idx",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    let spec = format!(
        "idx:{},{},{},{}",
        d.join("train-images.idx").display(),
        d.join("train-labels.idx").display(),
        d.join("test-images.idx").display(),
        d.join("test-labels.idx").display()
    );
    let train = |out: &Path| {
        run_ok(
            tecnn()
                .args([
                    "train",
                    "--arch",
                    "usps-mini",
                    "--epochs",
                    "1",
                    "--seed",
                    "3",
                    "--no-timing",
                ])
                .args(["--dataset", &spec, "--out"])
                .arg(out),
        )
    };
    train(&d.join("a.csv"));
    train(&d.join("b.csv"));
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with(METRICS_HEADER));
}

#[test]
fn cli_reports_bad_config() {
    let out = tecnn().args(["train", "--arch", "nope"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown architecture"));
}

fn two_batch_csv() -> String {
    let cfg = ExperimentConfig::parse(
        "arch = usps-mini\ndataset = synth:10,120,16,60\nepochs = 1\nseed = 5\nrun_id = golden\nte = on\n\
         te_window_length = 60\nthreshold_rate_1 = 0.5\nthreshold_rate_2 = 0.2\nrecord_timing = off",
    )
    .unwrap();
    let data = synth_digits(10, 120, 60, 16, 5).unwrap();
    let run = run_single(&cfg, &data, false).unwrap();
    metrics_csv(&run.rows).unwrap()
}

#[test]
fn two_batch_run_matches_golden_csv() {
    let actual = two_batch_csv();
    if std::env::var_os("TECNN_BLESS").is_some() {
        fs::write(
            concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/two_batch.csv"),
            &actual,
        )
        .unwrap();
    }
    assert_eq!(actual, include_str!("golden/two_batch.csv"));
}
