//! Flat `key = value` experiment configuration.
//!
//! Hyperparameter keys mirror the preset fields (`learning_rate`, `momentum`,
//! `dropout`, `threshold_rate_1`, `threshold_rate_2`, `te_window_length`,
//! `batch_size`); defaults come from the chosen `arch` preset. Lines starting
//! with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use super::arch::{parse_layers, preset};
use super::dataset::DataSource;
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::te::{Direction, PairPolicy, ThresholdMode};
use crate::train::{Seeds, TeConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ArchChoice {
    Preset(String),
    Custom {
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arch: ArchChoice,
    pub dataset: DataSource,
    /// Class count for IDX datasets.
    pub classes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// `None` keeps the architecture's own dropout probabilities.
    pub dropout: Option<f64>,
    pub batch_size: usize,
    pub te: TeConfig,
    pub epochs: usize,
    pub target_accuracy: f64,
    pub seeds: Seeds,
    pub run_id: String,
    pub record_timing: bool,
    pub metrics_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
}

fn on_off(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected on|off, got {v:?}"))),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

/// Parses `idx:IMG,LBL[,IMG_T,LBL_T]` or `synth:classes,n[,side[,n_test]]`.
pub fn parse_dataset(v: &str, seed: u64) -> Result<DataSource> {
    let bad = || Error::config(format!("dataset: cannot parse {v:?}"));
    let (kind, rest) = v.split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    match (kind, parts.len()) {
        ("idx", 2) | ("idx", 4) => Ok(DataSource::Idx {
            train_images: parts[0].into(),
            train_labels: parts[1].into(),
            test: (parts.len() == 4).then(|| (parts[2].into(), parts[3].into())),
        }),
        ("synth", 2..=4) => {
            let classes = num("dataset", parts[0])?;
            let n_train: usize = num("dataset", parts[1])?;
            let side = parts
                .get(2)
                .map(|s| num("dataset", s))
                .transpose()?
                .unwrap_or(16);
            let n_test = parts
                .get(3)
                .map(|s| num("dataset", s))
                .transpose()?
                .unwrap_or(n_train / 4);
            Ok(DataSource::Synthetic {
                classes,
                n_train,
                n_test,
                side,
                seed,
            })
        }
        _ => Err(bad()),
    }
}

impl ExperimentConfig {
    /// Defaults for a preset architecture on a 2000-sample synthetic set.
    pub fn for_preset(name: &str) -> Result<Self> {
        let p = preset(name)?;
        let h = p.hyper;
        Ok(ExperimentConfig {
            arch: ArchChoice::Preset(p.name.to_string()),
            dataset: DataSource::Synthetic {
                classes: 10,
                n_train: 2000,
                n_test: 500,
                side: p.input_shape[1],
                seed: 0,
            },
            classes: 10,
            learning_rate: h.learning_rate,
            momentum: h.momentum,
            dropout: None,
            batch_size: h.batch_size,
            te: TeConfig {
                g_src: h.threshold_rate_1,
                g_dst: h.threshold_rate_2,
                window: h.te_window_length,
                ..TeConfig::default()
            },
            epochs: 10,
            target_accuracy: 0.9,
            seeds: Seeds::from_base(0),
            run_id: "run".into(),
            record_timing: true,
            metrics_out: None,
            report_out: None,
            checkpoint_out: None,
        })
    }

    /// Builds a config from ordered `(key, value)` pairs; the last `arch`
    /// picks the defaults, then every pair is applied in order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let arch = pairs
            .iter()
            .rev()
            .find(|(k, _)| *k == "arch")
            .map(|(_, v)| *v)
            .unwrap_or("usps");
        let mut cfg = ExperimentConfig::for_preset(if arch == "custom" { "usps" } else { arch })?;
        // The base seed goes first so per-stream overrides win regardless of order.
        if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| *k == "seed") {
            cfg.seeds = Seeds::from_base(num("seed", v)?);
        }
        for (k, v) in &pairs {
            if *k != "seed" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "arch" if v == "custom" => {
                if !matches!(self.arch, ArchChoice::Custom { .. }) {
                    self.arch = ArchChoice::Custom {
                        input_shape: [1, 16, 16],
                        layers: Vec::new(),
                    };
                }
            }
            "arch" => {
                preset(v)?;
                self.arch = ArchChoice::Preset(v.to_string());
            }
            "layers" => {
                let layers = parse_layers(v)?;
                self.arch = match &self.arch {
                    ArchChoice::Custom { input_shape, .. } => ArchChoice::Custom {
                        input_shape: *input_shape,
                        layers,
                    },
                    ArchChoice::Preset(_) => ArchChoice::Custom {
                        input_shape: [1, 16, 16],
                        layers,
                    },
                };
            }
            "input_shape" => {
                let d: Vec<usize> = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?;
                let shape: [usize; 3] = d
                    .try_into()
                    .map_err(|_| Error::config("input_shape needs channels,height,width"))?;
                self.arch = match &self.arch {
                    ArchChoice::Custom { layers, .. } => ArchChoice::Custom {
                        input_shape: shape,
                        layers: layers.clone(),
                    },
                    ArchChoice::Preset(_) => ArchChoice::Custom {
                        input_shape: shape,
                        layers: Vec::new(),
                    },
                };
            }
            "dataset" => {
                let seed = match self.dataset {
                    DataSource::Synthetic { seed, .. } => seed,
                    _ => 0,
                };
                self.dataset = parse_dataset(v, seed)?;
                if let DataSource::Synthetic { classes, .. } = self.dataset {
                    self.classes = classes;
                }
            }
            "dataset_seed" => {
                if let DataSource::Synthetic { seed, .. } = &mut self.dataset {
                    *seed = num(key, v)?;
                }
            }
            "classes" => self.classes = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "dropout" => self.dropout = Some(num(key, v)?),
            "threshold_rate_1" => self.te.g_src = num(key, v)?,
            "threshold_rate_2" => self.te.g_dst = num(key, v)?,
            "te_window_length" => self.te.window = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "te" => self.te.enabled = on_off(key, v)?,
            "te_pair_fraction" => self.te.pair_fraction = num(key, v)?,
            "te_pair_policy" => self.te.pair_policy = v.parse::<PairPolicy>()?,
            "te_direction" => self.te.direction = v.parse::<Direction>()?,
            "te_warmup_batches" => {
                self.te.warmup_batches = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "te_every_n_batches" => self.te.every_n_batches = num(key, v)?,
            "te_log_base" => self.te.log_base = num(key, v)?,
            "te_threshold_mode" => {
                self.te.threshold_mode = match v {
                    "absolute" => ThresholdMode::Absolute,
                    "mean" => ThresholdMode::MeanMultiplier,
                    _ => {
                        return Err(Error::config(format!(
                            "{key}: expected absolute|mean, got {v:?}"
                        )))
                    }
                }
            }
            "te_force_zero" => self.te.force_zero = on_off(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "target_accuracy" => self.target_accuracy = num(key, v)?,
            "seed" => self.seeds = Seeds::from_base(num(key, v)?),
            "seed_init" => self.seeds.init = num(key, v)?,
            "seed_shuffle" => self.seeds.shuffle = num(key, v)?,
            "seed_dropout" => self.seeds.dropout = num(key, v)?,
            "seed_pairs" => self.seeds.pairs = num(key, v)?,
            "run_id" => self.run_id = v.to_string(),
            "record_timing" => self.record_timing = on_off(key, v)?,
            "metrics_out" => self.metrics_out = Some(v.into()),
            "report_out" => self.report_out = Some(v.into()),
            "checkpoint_out" => self.checkpoint_out = Some(v.into()),
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::config(format!(
                "target accuracy must be in (0,1], got {}",
                self.target_accuracy
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if let ArchChoice::Custom { layers, .. } = &self.arch {
            if layers.is_empty() {
                return Err(Error::config("custom architecture needs a `layers` list"));
            }
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout must be in [0,1), got {p}")));
            }
        }
        if self.run_id.contains([',', '\n', '"']) {
            return Err(Error::config(
                "run_id must not contain commas, quotes or newlines",
            ));
        }
        self.te.warmup_for(self.batch_size)?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            te: self.te.clone(),
            record_timing: self.record_timing,
        }
    }

    /// Input shape and layers, with the dropout override applied.
    pub fn architecture(&self) -> Result<([usize; 3], Vec<LayerSpec>)> {
        let (shape, mut layers) = match &self.arch {
            ArchChoice::Preset(n) => {
                let p = preset(n)?;
                (p.input_shape, p.layers)
            }
            ArchChoice::Custom {
                input_shape,
                layers,
            } => (*input_shape, layers.clone()),
        };
        if let Some(p) = self.dropout {
            for l in &mut layers {
                if let LayerSpec::Dropout { p: q } = l {
                    *q = p;
                }
            }
        }
        Ok((shape, layers))
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(&str, &str)>> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::config(format!("config line {}: expected key = value", n + 1))
                })
        })
        .collect()
}

pub fn load_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_defaults_fill_hyperparameters() {
        let c = ExperimentConfig::parse("arch = usps").unwrap();
        assert_eq!((c.learning_rate, c.momentum, c.batch_size), (0.01, 0.9, 60));
        assert_eq!((c.te.g_src, c.te.g_dst, c.te.window), (5.0, 0.99, 90));
        let f = ExperimentConfig::parse("arch = fashionmnist").unwrap();
        assert_eq!((f.te.g_src, f.te.window, f.batch_size), (2.0, 100, 100));
    }

    #[test]
    fn keys_override_and_validate() {
        let c = ExperimentConfig::parse(
            "# comment\narch = usps-mini\nte = off\nseed_init = 9\nseed = 3\nte_pair_fraction = 0.1\ndataset = synth:10,400,16",
        )
        .unwrap();
        assert!(!c.te.enabled);
        assert_eq!(c.seeds.init, 9);
        assert_eq!(c.seeds.shuffle, Seeds::from_base(3).shuffle);
        assert_eq!(c.te.pair_fraction, 0.1);
        assert!(matches!(
            c.dataset,
            DataSource::Synthetic {
                n_train: 400,
                n_test: 100,
                ..
            }
        ));
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("target_accuracy = 1.5").is_err());
        assert!(ExperimentConfig::parse("te_warmup_batches = 1").is_err());
        assert!(ExperimentConfig::parse("learning_rate").is_err());
    }

    #[test]
    fn custom_layers() {
        let c = ExperimentConfig::parse(
            "arch = custom\ninput_shape = 1,8,8\nlayers = linear(64,10) softmax",
        )
        .unwrap();
        let (shape, layers) = c.architecture().unwrap();
        assert_eq!(shape, [1, 8, 8]);
        assert_eq!(layers.len(), 2);
    }
}
