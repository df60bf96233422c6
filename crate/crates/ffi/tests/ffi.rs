use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tecnn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tecnn_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn te_pair_agrees_with_oracle() {
    let src: Vec<u8> = (0..200u32)
        .map(|t| ((t.wrapping_mul(2654435761) >> 7) & 1) as u8)
        .collect();
    let mut dst = [0u8; 200];
    dst[1..].copy_from_slice(&src[..199]);
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            tecnn_te_pair(src.as_ptr(), dst.as_ptr(), 200, &mut a),
            TecnnStatus::Ok
        );
        assert_eq!(
            tecnn_te_pair_oracle(src.as_ptr(), dst.as_ptr(), 200, &mut b),
            TecnnStatus::Ok
        );
    }
    assert!(a > 0.9 && (a - b).abs() <= 1e-12, "{a} {b}");
}

#[test]
fn errors_set_status_and_message() {
    let bits = [0u8, 1];
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            tecnn_te_pair(ptr::null(), bits.as_ptr(), 2, &mut out),
            TecnnStatus::NullPointer
        );
        assert!(last_error().contains("src"));
        assert_eq!(
            tecnn_te_pair(bits.as_ptr(), bits.as_ptr(), 2, &mut out),
            TecnnStatus::EstimatorUnavailable
        );
        let mut rec = ptr::null_mut();
        assert_eq!(
            tecnn_recorder_new(3, 2, 2, 0.5, 0.5, &mut rec),
            TecnnStatus::Config
        );
        assert!(rec.is_null());
    }
}

#[test]
fn recorder_fills_then_reports_matrix() {
    unsafe {
        let mut rec = ptr::null_mut();
        assert_eq!(
            tecnn_recorder_new(2, 1, 50, 0.5, 0.5, &mut rec),
            TecnnStatus::Ok
        );
        let mut m = [f64::NAN; 2];
        assert_eq!(
            tecnn_recorder_te_matrix(rec, TECNN_DIRECTION_FORWARD, m.as_mut_ptr(), 2),
            TecnnStatus::Ok
        );
        assert_eq!(m, [0.0, 0.0]);
        // Source 0 is copied into the destination one step later; source 1 is constant.
        let mut prev = 0.0;
        for t in 0..50u32 {
            let bit = ((t.wrapping_mul(2654435761) >> 9) & 1) as f64;
            let src = [bit, 1.0];
            assert_eq!(
                tecnn_recorder_record_batch(rec, src.as_ptr(), [prev].as_ptr(), 1),
                TecnnStatus::Ok
            );
            prev = bit;
        }
        assert_eq!(
            tecnn_recorder_te_matrix(rec, TECNN_DIRECTION_FORWARD, m.as_mut_ptr(), 2),
            TecnnStatus::Ok
        );
        assert!(m[0] > 0.5 && m[1] == 0.0, "{m:?}");
        assert_eq!(
            tecnn_recorder_te_matrix(rec, 7, m.as_mut_ptr(), 2),
            TecnnStatus::InvalidArgument
        );
        assert_eq!(
            tecnn_recorder_te_matrix(rec, 0, m.as_mut_ptr(), 3),
            TecnnStatus::InvalidArgument
        );
        tecnn_recorder_free(rec);
    }
}

#[test]
fn trainer_runs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new("arch = usps-mini\ndataset = synth:10,120,16,60\nrecord_timing = off")
        .unwrap();
    let path = CString::new(dir.path().join("c.bin").to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(tecnn_trainer_new(cfg.as_ptr(), &mut t), TecnnStatus::Ok);
        let (mut loss, mut top1, mut epoch) = (0.0, 0.0, 0u64);
        assert_eq!(
            tecnn_trainer_train_epoch(t, &mut loss, &mut top1),
            TecnnStatus::Ok
        );
        assert!(loss.is_finite() && (0.0..=1.0).contains(&top1));
        assert_eq!(
            tecnn_trainer_evaluate(t, ptr::null_mut(), &mut top1),
            TecnnStatus::Ok
        );
        assert_eq!(tecnn_trainer_epoch(t, &mut epoch), TecnnStatus::Ok);
        assert_eq!(epoch, 1);
        assert_eq!(
            tecnn_trainer_save_checkpoint(t, path.as_ptr()),
            TecnnStatus::Ok
        );
        let bytes = std::fs::read(dir.path().join("c.bin")).unwrap();
        assert_eq!(&bytes[..6], b"TECNN1");

        let mut needed = 0;
        assert_eq!(
            tecnn_trainer_metrics_csv(t, ptr::null_mut(), 0, &mut needed),
            TecnnStatus::Ok
        );
        let mut small = vec![0 as std::ffi::c_char; 4];
        assert_eq!(
            tecnn_trainer_metrics_csv(t, small.as_mut_ptr(), small.len(), &mut needed),
            TecnnStatus::InvalidArgument
        );
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(
            tecnn_trainer_metrics_csv(t, buf.as_mut_ptr(), needed, &mut needed),
            TecnnStatus::Ok
        );
        let csv = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(csv.lines().count(), 3);
        tecnn_trainer_free(t);
    }
}

#[test]
fn header_is_current_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/tecnn.h")).unwrap();
    for name in [
        "tecnn_te_pair",
        "tecnn_recorder_new",
        "tecnn_trainer_new",
        "TECNN_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // target/<profile>/deps/<test> -> target/<profile>
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libtecnn_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let exe = tempfile::tempdir().unwrap();
    let bin = exe.path().join("smoke");
    let status = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok version 0.1.0"));
}
