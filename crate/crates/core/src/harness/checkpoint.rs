//! Checkpoint files.
//!
//! Layout (integers little-endian): magic `TECNN1`, `u16` version, `u32`
//! record count, the records, then the SHA-256 of every preceding byte.
//! A record is `u8` kind, `u16` name length, the UTF-8 name and a payload:
//!
//! | kind | payload |
//! |------|---------|
//! | 1 tensor | `u8` dtype, `u8` ndim, `u32` dims, raw values |
//! | 2 rng | 32-byte ChaCha seed, `u64` stream, `u128` word position |
//! | 3 u64 | value |
//! | 4 text | `u32` length, UTF-8 bytes |
//! | 5 bits | `u32` capacity, `u64` lifetime count, `u32` bit count, packed bits (LSB first) |

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::arch::{format_layers, parse_layers};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::te::{BinaryWindow, PairPolicy, PairSet, Recorder, TeMatrix, ThresholdMode};
use crate::tensor::{DType, Real, Tensor};
use crate::train::{attach_te_hook, RngStreams, TrainState};

pub const MAGIC: &[u8; 6] = b"TECNN1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Tensor {
        dtype: DType,
        dims: Vec<usize>,
        raw: Vec<u8>,
    },
    Rng {
        seed: [u8; 32],
        stream: u64,
        word_pos: u128,
    },
    U64(u64),
    Text(String),
    Bits {
        capacity: usize,
        total: u64,
        bits: Vec<bool>,
    },
}

impl Payload {
    fn kind(&self) -> u8 {
        match self {
            Payload::Tensor { .. } => 1,
            Payload::Rng { .. } => 2,
            Payload::U64(_) => 3,
            Payload::Text(_) => 4,
            Payload::Bits { .. } => 5,
        }
    }
}

fn ckpt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn record(&mut self, name: &str, p: Payload) {
        let b = &mut self.buf;
        b.push(p.kind());
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        match p {
            Payload::Tensor { dtype, dims, raw } => {
                b.push(dtype.code());
                b.push(dims.len() as u8);
                for d in dims {
                    b.extend_from_slice(&(d as u32).to_le_bytes());
                }
                b.extend_from_slice(&raw);
            }
            Payload::Rng {
                seed,
                stream,
                word_pos,
            } => {
                b.extend_from_slice(&seed);
                b.extend_from_slice(&stream.to_le_bytes());
                b.extend_from_slice(&word_pos.to_le_bytes());
            }
            Payload::U64(v) => b.extend_from_slice(&v.to_le_bytes()),
            Payload::Text(t) => {
                b.extend_from_slice(&(t.len() as u32).to_le_bytes());
                b.extend_from_slice(t.as_bytes());
            }
            Payload::Bits {
                capacity,
                total,
                bits,
            } => {
                b.extend_from_slice(&(capacity as u32).to_le_bytes());
                b.extend_from_slice(&total.to_le_bytes());
                b.extend_from_slice(&(bits.len() as u32).to_le_bytes());
                let mut packed = vec![0u8; bits.len().div_ceil(8)];
                for (i, &bit) in bits.iter().enumerate() {
                    packed[i / 8] |= (bit as u8) << (i % 8);
                }
                b.extend_from_slice(&packed);
            }
        }
        self.count += 1;
    }

    fn tensor<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        let mut raw = Vec::with_capacity(t.len() * T::DTYPE.size());
        t.data().iter().for_each(|v| v.write_le(&mut raw));
        self.record(
            name,
            Payload::Tensor {
                dtype: T::DTYPE,
                dims: t.shape().to_vec(),
                raw,
            },
        );
    }

    fn reals(&mut self, name: &str, v: &[f64]) {
        let mut raw = Vec::with_capacity(v.len() * 8);
        v.iter().for_each(|x| x.write_le(&mut raw));
        self.record(
            name,
            Payload::Tensor {
                dtype: DType::F64,
                dims: vec![v.len()],
                raw,
            },
        );
    }

    fn rng(&mut self, name: &str, r: &ChaCha8Rng) {
        self.record(
            name,
            Payload::Rng {
                seed: r.get_seed(),
                stream: r.get_stream(),
                word_pos: r.get_word_pos(),
            },
        );
    }

    fn window(&mut self, name: &str, w: &BinaryWindow) {
        self.record(
            name,
            Payload::Bits {
                capacity: w.capacity(),
                total: w.total(),
                bits: w.to_vec(),
            },
        );
    }

    fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.buf.len() + 44);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.buf);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ckpt(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ckpt("record text is not UTF-8"))
    }

    fn payload(&mut self, kind: u8) -> Result<Payload> {
        Ok(match kind {
            1 => {
                let dtype = DType::from_code(self.u8()?).ok_or_else(|| ckpt("unknown dtype"))?;
                let ndim = self.u8()? as usize;
                let dims = (0..ndim)
                    .map(|_| self.u32().map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let len = dims.iter().product::<usize>() * dtype.size();
                Payload::Tensor {
                    dtype,
                    dims,
                    raw: self.take(len)?.to_vec(),
                }
            }
            2 => Payload::Rng {
                seed: self.take(32)?.try_into().unwrap(),
                stream: self.u64()?,
                word_pos: u128::from_le_bytes(self.take(16)?.try_into().unwrap()),
            },
            3 => Payload::U64(self.u64()?),
            4 => {
                let n = self.u32()? as usize;
                Payload::Text(self.text(n)?)
            }
            5 => {
                let capacity = self.u32()? as usize;
                let total = self.u64()?;
                let n = self.u32()? as usize;
                let packed = self.take(n.div_ceil(8))?;
                Payload::Bits {
                    capacity,
                    total,
                    bits: (0..n)
                        .map(|i| (packed[i / 8] >> (i % 8)) & 1 == 1)
                        .collect(),
                }
            }
            k => return Err(ckpt(format!("unknown record kind {k}"))),
        })
    }
}

/// Records by name, in file order.
struct Records {
    order: Vec<String>,
    map: HashMap<String, Payload>,
}

impl Records {
    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ckpt("not a checkpoint (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != VERSION {
            return Err(ckpt(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ckpt("checksum mismatch"));
        }
        let mut c = Cursor {
            bytes: body,
            pos: 8,
        };
        let count = c.u32()?;
        let mut order = Vec::with_capacity(count as usize);
        let mut map = HashMap::with_capacity(count as usize);
        for _ in 0..count {
            let kind = c.u8()?;
            let n = c.u16()? as usize;
            let name = c.text(n)?;
            let p = c.payload(kind)?;
            if map.insert(name.clone(), p).is_some() {
                return Err(ckpt(format!("duplicate record {name:?}")));
            }
            order.push(name);
        }
        if c.pos != body.len() {
            return Err(ckpt("trailing bytes after the last record"));
        }
        Ok(Records { order, map })
    }

    fn get(&self, name: &str) -> Result<&Payload> {
        self.map
            .get(name)
            .ok_or_else(|| ckpt(format!("missing record {name:?}")))
    }

    fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    fn u64(&self, name: &str) -> Result<u64> {
        match self.get(name)? {
            Payload::U64(v) => Ok(*v),
            _ => Err(ckpt(format!("record {name:?} is not an integer"))),
        }
    }

    fn usize(&self, name: &str) -> Result<usize> {
        usize::try_from(self.u64(name)?).map_err(|_| ckpt(format!("record {name:?} overflows")))
    }

    fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Payload::Text(t) => Ok(t),
            _ => Err(ckpt(format!("record {name:?} is not text"))),
        }
    }

    fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        match self.get(name)? {
            Payload::Tensor { dtype, dims, raw } if *dtype == T::DTYPE => {
                let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
                if dims.is_empty() || dims.contains(&0) {
                    return Ok(Tensor::zeros(&[0]));
                }
                Tensor::from_vec(dims, data)
            }
            Payload::Tensor { dtype, .. } => Err(ckpt(format!(
                "record {name:?} holds {dtype:?}, expected {:?}",
                T::DTYPE
            ))),
            _ => Err(ckpt(format!("record {name:?} is not a tensor"))),
        }
    }

    fn reals(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor::<f64>(name)?.into_data())
    }

    fn rng(&self, name: &str) -> Result<ChaCha8Rng> {
        match self.get(name)? {
            Payload::Rng {
                seed,
                stream,
                word_pos,
            } => {
                let mut r = ChaCha8Rng::from_seed(*seed);
                r.set_stream(*stream);
                r.set_word_pos(*word_pos);
                Ok(r)
            }
            _ => Err(ckpt(format!("record {name:?} is not an rng state"))),
        }
    }

    fn window(&self, name: &str) -> Result<BinaryWindow> {
        match self.get(name)? {
            Payload::Bits {
                capacity,
                total,
                bits,
            } => BinaryWindow::restore(*capacity, bits, *total)
                .ok_or_else(|| ckpt(format!("inconsistent window record {name:?}"))),
            _ => Err(ckpt(format!("record {name:?} is not a bit window"))),
        }
    }
}

fn policy_code(p: PairPolicy) -> u64 {
    match p {
        PairPolicy::PerEpoch => 0,
        PairPolicy::PerWindow => 1,
    }
}

fn encode<T: Real>(net: &Network<T>, state: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.record("arch", Payload::Text(format_layers(net.layers())));
    let shape = net
        .input_shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",");
    w.record("input_shape", Payload::Text(shape));
    w.record("init_seed", Payload::U64(net.rng_seed()));
    for (name, t) in net.named_tensors() {
        w.tensor(&format!("param.{name}"), t);
    }
    w.record("run_id", Payload::Text(state.run_id.clone()));
    w.record("epoch", Payload::U64(state.epoch as u64));
    w.record("global_batch", Payload::U64(state.global_batch));
    w.record("warmup", Payload::U64(state.warmup as u64));
    w.record("te_applications", Payload::U64(state.te_applications));
    w.record(
        "violations",
        Payload::U64(state.non_amplification_violations),
    );
    w.record("clamped", Payload::U64(state.clamped_probabilities));
    w.rng("rng.shuffle", &state.rngs.shuffle);
    w.rng("rng.dropout", &state.rngs.dropout);
    w.rng("rng.pairs", &state.rngs.pairs);
    if let Some(rec) = &state.recorder {
        let (g_src, g_dst) = rec.thresholds();
        w.record("te.window", Payload::U64(rec.capacity() as u64));
        w.reals("te.thresholds", &[g_src, g_dst]);
        let mode = (rec.threshold_mode() == ThresholdMode::MeanMultiplier) as u64;
        w.record("te.mode", Payload::U64(mode));
        for (dst, n, tag) in [(false, rec.n_src(), "src"), (true, rec.n_dst(), "dst")] {
            for i in 0..n {
                let win = if dst {
                    rec.dst_window(i)
                } else {
                    rec.src_window(i)
                };
                w.window(&format!("te.{tag}.{i}"), win);
                if let Some((mut values, sum)) = rec.mean_state(dst, i) {
                    values.push(sum);
                    w.reals(&format!("te.{tag}_mean.{i}"), &values);
                }
            }
        }
        if let Some(at) = state.gate_opened_at {
            w.record("te.gate_opened_at", Payload::U64(at));
        }
        if let Some(p) = &state.pairs {
            let text = p
                .pairs()
                .iter()
                .map(|(i, j)| format!("{i}:{j}"))
                .collect::<Vec<_>>()
                .join(" ");
            w.record("te.pairs", Payload::Text(text));
            w.record("te.pair_policy", Payload::U64(policy_code(p.policy())));
            if let Some(f) = p.fraction() {
                w.reals("te.pair_fraction", &[f]);
            }
        }
        let te = &state.te;
        w.reals("te.matrix", te.values());
        let active = (0..te.n_src()).flat_map(|i| (0..te.n_dst()).map(move |j| (i, j)));
        let bits: Vec<bool> = active.map(|(i, j)| te.is_active(i, j)).collect();
        w.record(
            "te.active",
            Payload::Bits {
                capacity: bits.len().max(1),
                total: bits.len() as u64,
                bits,
            },
        );
        w.record("te.matrix_warmup", Payload::U64(te.is_warmup() as u64));
    }
    w.finish()
}

/// Serialized network and training state.
pub fn checkpoint_bytes<T: Real>(net: &Network<T>, state: &TrainState) -> Vec<u8> {
    encode(net, state)
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, state: &TrainState, path: &Path) -> Result<()> {
    fs::write(path, encode(net, state)).map_err(|e| Error::io(path, e))
}

fn restore_te(
    r: &Records,
    net_monitored: crate::train::Monitored,
    state: &mut TrainState,
) -> Result<()> {
    let window = r.usize("te.window")?;
    let g = r.reals("te.thresholds")?;
    if g.len() != 2 {
        return Err(ckpt("te.thresholds needs two values"));
    }
    let mode = match r.u64("te.mode")? {
        0 => ThresholdMode::Absolute,
        1 => ThresholdMode::MeanMultiplier,
        m => return Err(ckpt(format!("unknown threshold mode {m}"))),
    };
    let (n_src, n_dst) = (net_monitored.n_src, net_monitored.n_dst);
    let mut rec = Recorder::new(n_src, n_dst, window, g[0], g[1], mode)?;
    for (dst, n, tag) in [(false, n_src, "src"), (true, n_dst, "dst")] {
        for i in 0..n {
            let win = r.window(&format!("te.{tag}.{i}"))?;
            let mean_name = format!("te.{tag}_mean.{i}");
            let mean = if r.has(&mean_name) {
                let mut v = r.reals(&mean_name)?;
                let sum = v.pop().ok_or_else(|| ckpt("empty running-mean record"))?;
                Some((v, sum))
            } else {
                None
            };
            rec.restore_neuron(dst, i, win, mean)?;
        }
    }
    state.recorder = Some(rec);
    state.monitored = Some(net_monitored);
    state.gate_opened_at = if r.has("te.gate_opened_at") {
        Some(r.u64("te.gate_opened_at")?)
    } else {
        None
    };
    if r.has("te.pairs") {
        let pairs = r
            .text("te.pairs")?
            .split_whitespace()
            .map(|t| {
                let (i, j) = t.split_once(':').ok_or_else(|| ckpt("malformed pair"))?;
                let parse = |s: &str| s.parse::<usize>().map_err(|_| ckpt("malformed pair"));
                Ok((parse(i)?, parse(j)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let policy = if r.u64("te.pair_policy")? == 1 {
            PairPolicy::PerWindow
        } else {
            PairPolicy::PerEpoch
        };
        let fraction = if r.has("te.pair_fraction") {
            r.reals("te.pair_fraction")?.first().copied()
        } else {
            None
        };
        state.pairs = Some(PairSet::restore(pairs, fraction, policy)?);
    }
    let values = r.reals("te.matrix")?;
    let active = match r.get("te.active")? {
        Payload::Bits { bits, .. } => bits.clone(),
        _ => return Err(ckpt("te.active is not a bit record")),
    };
    if values.len() != n_src * n_dst || active.len() != values.len() {
        return Err(ckpt("te matrix size does not match the network"));
    }
    let mut te = if r.u64("te.matrix_warmup")? == 1 {
        TeMatrix::warmup(n_src, n_dst)
    } else {
        TeMatrix::zeros(n_src, n_dst)
    };
    for (k, (&v, &a)) in values.iter().zip(&active).enumerate() {
        if a {
            te.set(k / n_dst, k % n_dst, v);
        }
    }
    state.te = te;
    Ok(())
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<(Network<T>, TrainState)> {
    let r = Records::parse(bytes)?;
    let layers = parse_layers(r.text("arch")?)?;
    let input_shape = r
        .text("input_shape")?
        .split(',')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| ckpt("malformed input shape"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut net = Network::<T>::new(&input_shape, layers, r.u64("init_seed")?)?;
    let mut restored = 0;
    for (name, t) in net.named_tensors_mut() {
        let stored = r.tensor::<T>(&format!("param.{name}"))?;
        if stored.shape() != t.shape() {
            return Err(ckpt(format!(
                "record {name:?} has shape {:?}, network expects {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        *t = stored;
        restored += 1;
    }
    let param_records = r.order.iter().filter(|n| n.starts_with("param.")).count();
    if param_records != restored {
        return Err(ckpt(format!(
            "{param_records} parameter records for a network with {restored} tensors"
        )));
    }
    let mut state = TrainState {
        run_id: r.text("run_id")?.to_string(),
        epoch: r.usize("epoch")?,
        global_batch: r.u64("global_batch")?,
        rngs: RngStreams {
            shuffle: r.rng("rng.shuffle")?,
            dropout: r.rng("rng.dropout")?,
            pairs: r.rng("rng.pairs")?,
        },
        monitored: None,
        recorder: None,
        warmup: r.usize("warmup")?,
        pairs: None,
        te: TeMatrix::zeros(0, 0),
        gate_opened_at: None,
        te_applications: r.u64("te_applications")?,
        non_amplification_violations: r.u64("violations")?,
        clamped_probabilities: r.u64("clamped")?,
    };
    if r.has("te.window") {
        restore_te(&r, attach_te_hook(&net)?, &mut state)?;
    }
    Ok((net, state))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Network<T>, TrainState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
