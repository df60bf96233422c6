//! Built-in architectures and the textual layer-list format
//! (`conv2d(1,32,3,1,1) batchnorm2d(32) relu ...`).

use crate::error::{Error, Result};
use crate::nn::LayerSpec;

/// Per-dataset training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub threshold_rate_1: f64,
    pub threshold_rate_2: f64,
    pub te_window_length: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub hyper: Hyper,
    /// Too slow on a CPU for routine tests.
    pub long_running: bool,
}

pub const PRESET_NAMES: [&str; 6] = [
    "usps",
    "usps-mini",
    "fashionmnist",
    "cifar10",
    "stl10",
    "svhn",
];

fn conv_block(
    layers: &mut Vec<LayerSpec>,
    cin: usize,
    cout: usize,
    pad: usize,
    dropout: Option<f64>,
) {
    layers.push(LayerSpec::conv2d(cin, cout, 3, pad));
    layers.push(LayerSpec::batchnorm2d(cout));
    layers.push(LayerSpec::Relu);
    if let Some(p) = dropout {
        layers.push(LayerSpec::Dropout { p });
    }
}

fn pool(layers: &mut Vec<LayerSpec>) {
    layers.push(LayerSpec::maxpool2d(2));
}

const fn hyper(dropout: f64, g1: f64, u: usize, batch: usize) -> Hyper {
    Hyper {
        learning_rate: 0.01,
        momentum: 0.9,
        dropout,
        threshold_rate_1: g1,
        threshold_rate_2: 0.99,
        te_window_length: u,
        batch_size: batch,
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    let mut l = Vec::new();
    let p = match name {
        "usps" => {
            conv_block(&mut l, 1, 32, 1, None);
            pool(&mut l);
            conv_block(&mut l, 32, 64, 0, None);
            pool(&mut l);
            l.extend([
                LayerSpec::linear(576, 144),
                LayerSpec::Dropout { p: 0.25 },
                LayerSpec::linear(144, 10),
                LayerSpec::Softmax,
            ]);
            Preset {
                name: "usps",
                input_shape: [1, 16, 16],
                layers: l,
                hyper: hyper(0.25, 5.0, 90, 60),
                long_running: false,
            }
        }
        "usps-mini" => {
            conv_block(&mut l, 1, 16, 1, None);
            pool(&mut l);
            conv_block(&mut l, 16, 32, 0, None);
            pool(&mut l);
            l.extend([LayerSpec::linear(288, 10), LayerSpec::Softmax]);
            Preset {
                name: "usps-mini",
                input_shape: [1, 16, 16],
                layers: l,
                hyper: hyper(0.0, 5.0, 90, 60),
                long_running: false,
            }
        }
        "fashionmnist" => {
            conv_block(&mut l, 1, 32, 1, None);
            pool(&mut l);
            conv_block(&mut l, 32, 64, 0, None);
            pool(&mut l);
            l.extend([
                LayerSpec::linear(2304, 600),
                LayerSpec::Dropout { p: 0.25 },
                LayerSpec::linear(600, 120),
                LayerSpec::linear(120, 10),
                LayerSpec::Softmax,
            ]);
            Preset {
                name: "fashionmnist",
                input_shape: [1, 28, 28],
                layers: l,
                hyper: hyper(0.25, 2.0, 100, 100),
                long_running: false,
            }
        }
        "cifar10" => {
            for (cin, cout) in [(3, 128), (128, 128)] {
                conv_block(&mut l, cin, cout, 1, None);
            }
            pool(&mut l);
            for (cin, cout) in [(128, 256), (256, 256)] {
                conv_block(&mut l, cin, cout, 1, None);
            }
            pool(&mut l);
            for (cin, cout) in [(256, 512), (512, 512)] {
                conv_block(&mut l, cin, cout, 1, None);
            }
            pool(&mut l);
            conv_block(&mut l, 512, 1024, 0, None);
            pool(&mut l);
            l.extend([LayerSpec::linear(1024, 10), LayerSpec::Softmax]);
            Preset {
                name: "cifar10",
                input_shape: [3, 32, 32],
                layers: l,
                hyper: hyper(0.0, 2.0, 100, 500),
                long_running: true,
            }
        }
        "stl10" => {
            for (cin, cout) in [(3, 32), (32, 64), (64, 128), (128, 128)] {
                conv_block(&mut l, cin, cout, 1, None);
                pool(&mut l);
            }
            conv_block(&mut l, 128, 256, 0, None);
            conv_block(&mut l, 256, 256, 0, None);
            pool(&mut l);
            l.extend([LayerSpec::linear(256, 10), LayerSpec::Softmax]);
            Preset {
                name: "stl10",
                input_shape: [3, 96, 96],
                layers: l,
                hyper: hyper(0.0, 2.0, 4000, 200),
                long_running: true,
            }
        }
        "svhn" => {
            let d = Some(0.3);
            for (cin, cout) in [(3, 32), (32, 64), (64, 128)] {
                conv_block(&mut l, cin, cout, 1, d);
                conv_block(&mut l, cout, cout, 1, d);
                pool(&mut l);
            }
            conv_block(&mut l, 128, 256, 0, d);
            pool(&mut l);
            l.extend([LayerSpec::linear(256, 10), LayerSpec::Softmax]);
            Preset {
                name: "svhn",
                input_shape: [3, 32, 32],
                layers: l,
                hyper: hyper(0.3, 2.0, 200, 200),
                long_running: true,
            }
        }
        _ => {
            return Err(Error::config(format!(
                "unknown architecture {name:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

fn format_layer(l: &LayerSpec) -> String {
    match *l {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => format!("conv2d({in_channels},{out_channels},{kernel},{stride},{padding})"),
        LayerSpec::BatchNorm2d {
            channels,
            eps,
            momentum,
        } => format!("batchnorm2d({channels},{eps:?},{momentum:?})"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::MaxPool2d { kernel, stride } => format!("maxpool2d({kernel},{stride})"),
        LayerSpec::Dropout { p } => format!("dropout({p:?})"),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => format!("linear({in_features},{out_features})"),
        LayerSpec::Softmax => "softmax".into(),
    }
}

/// Space-separated layer list; [`parse_layers`] restores it exactly.
pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(format_layer)
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_layer(tok: &str) -> Result<LayerSpec> {
    let bad = || Error::config(format!("cannot parse layer {tok:?}"));
    let (name, args) = match tok.split_once('(') {
        Some((n, rest)) => (n, rest.strip_suffix(')').ok_or_else(bad)?),
        None => (tok, ""),
    };
    let args: Vec<&str> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',').map(str::trim).collect()
    };
    let int = |i: usize| -> Result<usize> { args[i].parse().map_err(|_| bad()) };
    let real = |i: usize| -> Result<f64> { args[i].parse().map_err(|_| bad()) };
    let spec = match (name.trim(), args.len()) {
        ("conv2d", 4) => LayerSpec::conv2d(int(0)?, int(1)?, int(2)?, int(3)?),
        ("conv2d", 5) => LayerSpec::Conv2d {
            in_channels: int(0)?,
            out_channels: int(1)?,
            kernel: int(2)?,
            stride: int(3)?,
            padding: int(4)?,
        },
        ("batchnorm2d", 1) => LayerSpec::batchnorm2d(int(0)?),
        ("batchnorm2d", 3) => LayerSpec::BatchNorm2d {
            channels: int(0)?,
            eps: real(1)?,
            momentum: real(2)?,
        },
        ("relu", 0) => LayerSpec::Relu,
        ("maxpool2d", 1) => LayerSpec::maxpool2d(int(0)?),
        ("maxpool2d", 2) => LayerSpec::MaxPool2d {
            kernel: int(0)?,
            stride: int(1)?,
        },
        ("dropout", 1) => LayerSpec::Dropout { p: real(0)? },
        ("linear", 2) => LayerSpec::linear(int(0)?, int(1)?),
        ("softmax", 0) => LayerSpec::Softmax,
        _ => return Err(bad()),
    };
    Ok(spec)
}

/// Parses layers separated by whitespace or `;`.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    let layers = text
        .split(|c: char| c.is_whitespace() || c == ';')
        .filter(|t| !t.is_empty())
        .map(parse_layer)
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::config("empty layer list"));
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    #[test]
    fn presets_build_and_flatten_to_listed_widths() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            if p.long_running {
                // Shape inference only; allocating these is wasteful in tests.
                let mut s = p.input_shape.to_vec();
                for l in &p.layers {
                    s = l.output_shape(&s).unwrap();
                }
                assert_eq!(s, vec![10], "{name}");
            } else {
                let net = Network::<f32>::new(&p.input_shape, p.layers.clone(), 0).unwrap();
                assert_eq!(net.output_shape(), &[10], "{name}");
            }
        }
        assert!(preset("lenet").is_err());
    }

    #[test]
    fn layer_text_round_trips() {
        for name in PRESET_NAMES {
            let layers = preset(name).unwrap().layers;
            assert_eq!(parse_layers(&format_layers(&layers)).unwrap(), layers);
        }
        let short =
            parse_layers("conv2d(1,4,3,1); relu; maxpool2d(2) linear(64,10) softmax").unwrap();
        assert_eq!(short[0], LayerSpec::conv2d(1, 4, 3, 1));
        assert!(parse_layers("linear(3)").is_err());
        assert!(parse_layers("").is_err());
    }
}
