//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ARN1"
//! u64 length, UTF-8 key=value block (config, epoch, optimizer steps, RNG state)
//! u64 tensor count
//! per tensor: u64 name length, name, u64 rows, u64 cols, rows·cols f32
//! ```
//!
//! Parameters and optimizer moments are kept at `f32` precision during
//! training, so the payload round-trips exactly and a resumed run continues
//! bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;

use crate::autodiff::Matrix;
use crate::config::{parse_kv, TrainConfig};
use crate::error::{Error, Result};
use crate::gcn::TrainRng;
use crate::optim::AdamState;
use crate::params::Parameters;
use crate::training::Trainer;

const MAGIC: &[u8; 4] = b"ARN1";

const META_KEYS: [&str; 7] = [
    "channels",
    "epoch",
    "model_step",
    "gen_step",
    "disc_step",
    "rng_seed",
    "noise_rng",
];

fn rng_entry(rng: &TrainRng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

fn parse_rng(text: &str) -> Result<TrainRng> {
    let bad = || Error::Checkpoint(format!("malformed rng state {text:?}"));
    let mut parts = text.split(':');
    let (Some(seed), Some(stream), Some(pos), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if seed.len() != 64 {
        return Err(bad());
    }
    let mut bytes = [0u8; 32];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = TrainRng::from_seed(bytes);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

fn tensors(trainer: &Trainer) -> Vec<(String, &Matrix)> {
    let mut out = Vec::new();
    fn push<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, list: Vec<&'a Matrix>) {
        for (i, m) in list.into_iter().enumerate() {
            out.push((format!("{prefix}.{i}"), m));
        }
    }
    push(&mut out, "model", trainer.model.params());
    push(&mut out, "model.m", trainer.model_opt.first.iter().collect());
    push(&mut out, "model.v", trainer.model_opt.second.iter().collect());
    let adv = &trainer.adversary;
    push(&mut out, "gen", adv.generator.params());
    push(&mut out, "gen.m", adv.gen_opt.first.iter().collect());
    push(&mut out, "gen.v", adv.gen_opt.second.iter().collect());
    push(&mut out, "disc", adv.discriminator.params());
    push(&mut out, "disc.m", adv.disc_opt.first.iter().collect());
    push(&mut out, "disc.v", adv.disc_opt.second.iter().collect());
    out
}

pub fn to_bytes(trainer: &Trainer) -> Vec<u8> {
    let mut kv = trainer.config.to_kv();
    let _ = writeln!(kv, "channels={}", trainer.channels);
    let _ = writeln!(kv, "epoch={}", trainer.epoch);
    let _ = writeln!(kv, "model_step={}", trainer.model_opt.step);
    let _ = writeln!(kv, "gen_step={}", trainer.adversary.gen_opt.step);
    let _ = writeln!(kv, "disc_step={}", trainer.adversary.disc_opt.step);
    let _ = writeln!(kv, "rng_seed={}", rng_entry(&trainer.rng));
    let _ = writeln!(kv, "noise_rng={}", rng_entry(&trainer.noise_rng));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(kv.len() as u64).to_le_bytes());
    out.extend_from_slice(kv.as_bytes());
    let list = tensors(trainer);
    out.extend_from_slice(&(list.len() as u64).to_le_bytes());
    for (name, m) in list {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} out of range")))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

fn meta<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing key {key}")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("invalid value for {key}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let kv_len = r.len()?;
    let map = parse_kv(r.text(kv_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut config = TrainConfig::default();
    for (k, v) in &map {
        if !META_KEYS.contains(&k.as_str()) {
            config.set(k, v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
    }
    let channels: usize = meta(&map, "channels")?;
    let mut trainer = Trainer::new(config, channels).map_err(|e| Error::Checkpoint(e.to_string()))?;
    trainer.epoch = meta(&map, "epoch")?;
    trainer.model_opt.step = meta(&map, "model_step")?;
    trainer.adversary.gen_opt.step = meta(&map, "gen_step")?;
    trainer.adversary.disc_opt.step = meta(&map, "disc_step")?;
    trainer.rng = parse_rng(&meta::<String>(&map, "rng_seed")?)?;
    trainer.noise_rng = parse_rng(&meta::<String>(&map, "noise_rng")?)?;

    let count = r.len()?;
    let mut stored = BTreeMap::new();
    for _ in 0..count {
        let n = r.len()?;
        let name = r.text(n)?.to_string();
        let (rows, cols) = (r.len()?, r.len()?);
        let size = rows
            .checked_mul(cols)
            .and_then(|s| s.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
        let data = r.take(size)?;
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let m = Matrix::from_shape_vec((rows, cols), values).expect("shape matches length");
        stored.insert(name, m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut fill = |prefix: &str, slots: Vec<&mut Matrix>| -> Result<()> {
        for (i, slot) in slots.into_iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let m = stored
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if m.dim() != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    m.dim(),
                    slot.dim()
                )));
            }
            *slot = m;
        }
        Ok(())
    };
    fn moments(s: &mut AdamState) -> (Vec<&mut Matrix>, Vec<&mut Matrix>) {
        (s.first.iter_mut().collect(), s.second.iter_mut().collect())
    }
    fill("model", trainer.model.params_mut())?;
    let (m, v) = moments(&mut trainer.model_opt);
    fill("model.m", m)?;
    fill("model.v", v)?;
    let adv = &mut trainer.adversary;
    fill("gen", adv.generator.params_mut())?;
    let (m, v) = moments(&mut adv.gen_opt);
    fill("gen.m", m)?;
    fill("gen.v", v)?;
    fill("disc", adv.discriminator.params_mut())?;
    let (m, v) = moments(&mut adv.disc_opt);
    fill("disc.m", m)?;
    fill("disc.v", v)?;
    if let Some(name) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(trainer)
}

pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(trainer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
