use tecnn::harness::{build_network, synth_digits, ExperimentConfig, Split};
use tecnn::train::{train_epoch, EpochMetrics, TrainState};
use tecnn::Error;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "arch = usps-mini\ndataset = synth:10,360,16,60\nbatch_size = 60\nte_window_length = 90\nte = on\n{extra}"
    ))
    .unwrap()
}

fn one_epoch(cfg: &ExperimentConfig, data: &Split) -> (EpochMetrics, TrainState) {
    let tc = cfg.train_config();
    let mut net = build_network(cfg).unwrap();
    let mut state = TrainState::new(&net, &tc, &cfg.seeds, "t").unwrap();
    let m = train_epoch(&mut net, data, &tc, &mut state).unwrap();
    (m, state)
}

fn train_split() -> Split {
    synth_digits(10, 360, 60, 16, 0).unwrap().train
}

#[test]
fn gate_opens_once_the_windows_hold_u_samples() {
    let (m, state) = one_epoch(&config(""), &train_split());
    assert_eq!(state.warmup_batches(), 2);
    assert_eq!(m.batches, 6);
    assert_eq!(m.te_applications, 4);
    let active: Vec<usize> = m.rows.iter().map(|r| r.active_pairs).collect();
    assert_eq!(active, vec![0, 0, 2880, 2880, 2880, 2880]);
    assert!(m.rows[..2]
        .iter()
        .all(|r| r.te_mean == 0.0 && r.te_std == 0.0));
    assert_eq!(state.non_amplification_violations, 0);
}

#[test]
fn pair_fraction_limits_evaluated_pairs() {
    let (m, _) = one_epoch(
        &config("te_pair_fraction = 0.1\nte_pair_policy = window"),
        &train_split(),
    );
    assert!(m.rows[2..].iter().all(|r| r.active_pairs == 288));
    assert_eq!(m.te_pair_evaluations, 4 * 288);
}

#[test]
fn recomputation_interval_reuses_the_last_matrix() {
    let (m, _) = one_epoch(&config("te_every_n_batches = 3"), &train_split());
    assert_eq!(m.te_applications, 4);
    // Recomputed at the opening batch and three batches later.
    assert_eq!(m.te_pair_evaluations, 2 * 2880);
    assert_eq!(m.rows[2].te_mean, m.rows[3].te_mean);
    assert_eq!(m.rows[3].te_mean, m.rows[4].te_mean);
}

#[test]
fn log_base_rescales_the_first_matrix() {
    let data = train_split();
    let (bits, _) = one_epoch(
        &config("threshold_rate_1 = 0.5\nthreshold_rate_2 = 0.2"),
        &data,
    );
    let e = std::f64::consts::E;
    let (nats, _) = one_epoch(
        &config(&format!(
            "threshold_rate_1 = 0.5\nthreshold_rate_2 = 0.2\nte_log_base = {e}"
        )),
        &data,
    );
    let (a, b) = (bits.rows[2].te_mean, nats.rows[2].te_mean);
    assert!(a > 0.0);
    assert!(
        (b - a * std::f64::consts::LN_2).abs() <= 1e-12 * a,
        "{a} bits vs {b} nats"
    );
}

#[test]
fn te_off_never_touches_the_gate() {
    let (m, state) = one_epoch(&config("te = off"), &train_split());
    assert_eq!(m.te_applications, 0);
    assert!(state.recorder().is_none());
    assert!(m.rows.iter().all(|r| r.active_pairs == 0));
}

#[test]
fn warmup_shorter_than_window_is_rejected() {
    let err = ExperimentConfig::parse(
        "arch = usps-mini\nbatch_size = 60\nte_window_length = 90\nte_warmup_batches = 1",
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(ExperimentConfig::parse(
        "arch = usps-mini\nbatch_size = 60\nte_window_length = 90\nte_warmup_batches = 2"
    )
    .is_ok());
}

#[test]
fn non_finite_loss_aborts_the_epoch() {
    let split = train_split();
    let mut images = split.images().to_vec();
    images.iter_mut().for_each(|v| *v = f32::NAN);
    let poisoned = Split::new(split.sample_shape(), images, split.labels().to_vec()).unwrap();
    let cfg = config("te = off");
    let tc = cfg.train_config();
    let mut net = build_network(&cfg).unwrap();
    let mut state = TrainState::new(&net, &tc, &cfg.seeds, "t").unwrap();
    let err = train_epoch(&mut net, &poisoned, &tc, &mut state).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
}
