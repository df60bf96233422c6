use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "run_id,epoch,batch,split,loss,top1,te_mean,te_std,active_pairs,batch_ms,epoch_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        })
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "test" => Ok(SplitKind::Test),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// One telemetry row. Train rows are per batch; the test row closing an
/// epoch carries `batch` = number of training batches and the evaluation
/// time in `batch_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub epoch: usize,
    pub batch: usize,
    pub split: SplitKind,
    pub loss: f64,
    pub top1: f64,
    pub te_mean: f64,
    pub te_std: f64,
    pub active_pairs: usize,
    pub batch_ms: f64,
    pub epoch_s: f64,
}

/// `%g`-style rendering with six significant digits.
pub fn format_real(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mant), exp.abs())
    } else {
        trim(&format!("{v:.*}", (5 - exp) as usize))
    }
}

fn escape_id(id: &str) -> Result<&str> {
    if id.contains([',', '\n', '\r', '"']) {
        Err(Error::config(format!(
            "run id {id:?} contains a CSV delimiter"
        )))
    } else {
        Ok(id)
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            escape_id(&r.run_id)?,
            r.epoch,
            r.batch,
            r.split,
            format_real(r.loss),
            format_real(r.top1),
            format_real(r.te_mean),
            format_real(r.te_std),
            r.active_pairs,
            format_real(r.batch_ms),
            format_real(r.epoch_s),
        ));
    }
    Ok(out)
}

pub fn emit_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::config("metrics CSV header mismatch"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = |what: &str| Error::config(format!("metrics line {}: bad {what}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad("field count"));
            }
            let real = |i: usize, what: &str| f[i].parse::<f64>().map_err(|_| bad(what));
            let int = |i: usize, what: &str| f[i].parse::<usize>().map_err(|_| bad(what));
            Ok(MetricsRow {
                run_id: f[0].to_string(),
                epoch: int(1, "epoch")?,
                batch: int(2, "batch")?,
                split: f[3].parse()?,
                loss: real(4, "loss")?,
                top1: real(5, "top1")?,
                te_mean: real(6, "te_mean")?,
                te_std: real(7, "te_std")?,
                active_pairs: int(8, "active_pairs")?,
                batch_ms: real(9, "batch_ms")?,
                epoch_s: real(10, "epoch_s")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_real(0.0), "0");
        assert_eq!(format_real(1.0), "1");
        assert_eq!(format_real(std::f64::consts::LN_10), "2.30259");
        assert_eq!(format_real(0.99), "0.99");
        assert_eq!(format_real(123456.7), "123457");
        assert_eq!(format_real(1234567.0), "1.23457e+06");
        assert_eq!(format_real(0.0001), "0.0001");
        assert_eq!(format_real(0.000012345678), "1.23457e-05");
        assert_eq!(format_real(-0.5), "-0.5");
        assert_eq!(format_real(999999.5), "1e+06");
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(metrics_csv(&[]).unwrap(), format!("{METRICS_HEADER}\n"));
    }
}
