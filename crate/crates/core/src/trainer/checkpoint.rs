//! Binary checkpoints.
//!
//! ```text
//! "DDCP"  u32 version  u32 tensor_count
//! tensor_count × { u16 name_len, name, u8 rank, rank × u32 dim, f32 payload }
//! u32 meta_len, UTF-8 `key=value` lines
//! ```
//!
//! All integers and floats are little-endian. Tensor names carry the prefixes
//! `cp.`, `den.`, `ema.cp.`, `ema.den.`, `opt.m.` and `opt.v.`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ParamSet, Prediction, UNet, UNetConfig};
use crate::numerics::{OptimizerState, Tensor};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

use super::{TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DDCP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A decoded checkpoint: the full training state.
pub type Checkpoint = Trainer;

fn unet_meta(prefix: &str, cfg: &UNetConfig, out: &mut BTreeMap<String, String>) {
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    out.insert(format!("{prefix}.in_channels"), cfg.in_channels.to_string());
    out.insert(format!("{prefix}.out_channels"), cfg.out_channels.to_string());
    out.insert(format!("{prefix}.base_channels"), cfg.base_channels.to_string());
    out.insert(format!("{prefix}.channel_multipliers"), join(&cfg.channel_multipliers));
    out.insert(format!("{prefix}.bottleneck_dilations"), join(&cfg.bottleneck_dilations));
    out.insert(format!("{prefix}.time_embed_dim"), cfg.time_embed_dim.to_string());
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

pub(super) fn trainer_metadata(t: &Trainer) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    unet_meta("cp", t.bundle.coarse.config(), &mut m);
    unet_meta("den", t.bundle.denoiser.config(), &mut m);
    let (b0, b1) = t.bundle.schedule.beta_range();
    m.insert("schedule.steps".into(), t.bundle.schedule.steps().to_string());
    m.insert("schedule.beta_start".into(), b0.to_string());
    m.insert("schedule.beta_end".into(), b1.to_string());
    m.insert("prediction".into(), t.bundle.prediction.name().into());
    for (k, v) in t.config.to_pairs() {
        m.insert(format!("train.{k}"), v);
    }
    m.insert("iteration".into(), t.iteration.to_string());
    let o = &t.optimizer;
    m.insert("opt.step".into(), o.step.to_string());
    m.insert("opt.lr".into(), o.lr.to_string());
    m.insert("opt.beta1".into(), o.beta1.to_string());
    m.insert("opt.beta2".into(), o.beta2.to_string());
    m.insert("opt.eps".into(), o.eps.to_string());
    m.insert("rng.seed".into(), hex(&t.rng.get_seed()));
    m.insert("rng.stream".into(), t.rng.get_stream().to_string());
    m.insert("rng.word_pos".into(), t.rng.get_word_pos().to_string());
    m
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend(v.to_le_bytes());
    }
}

/// Serializes the full training state.
pub fn write_checkpoint(t: &Trainer) -> Vec<u8> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let sets: [(&str, &ParamSet); 4] = [
        ("cp.", &t.bundle.coarse_params),
        ("den.", &t.bundle.denoiser_params),
        ("ema.cp.", &t.bundle.ema_coarse),
        ("ema.den.", &t.bundle.ema_denoiser),
    ];
    for (prefix, set) in sets {
        for (k, v) in set {
            tensors.push((format!("{prefix}{k}"), v.shape().to_vec(), v.to_vec()));
        }
    }
    for (prefix, moments) in [("opt.m.", &t.optimizer.first_moment), ("opt.v.", &t.optimizer.second_moment)] {
        for (k, v) in moments {
            tensors.push((format!("{prefix}{k}"), vec![v.len()], v.clone()));
        }
    }

    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in &tensors {
        put_tensor(&mut out, name, shape, data);
    }
    let meta: String = trainer_metadata(t)
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    out.extend((meta.len() as u32).to_le_bytes());
    out.extend(meta.as_bytes());
    out
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, write_checkpoint(t)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, &path.display().to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::format(self.context, offset, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

struct Meta {
    map: BTreeMap<String, String>,
    context: String,
    offset: usize,
}

impl Meta {
    fn str(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(&self.context, self.offset, format!("missing metadata key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key)?;
        v.parse()
            .map_err(|_| Error::format(&self.context, self.offset, format!("bad metadata value {key}={v}")))
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.str(key)?;
        v.split(',')
            .map(|x| {
                x.parse()
                    .map_err(|_| Error::format(&self.context, self.offset, format!("bad metadata value {key}={v}")))
            })
            .collect()
    }

    fn unet(&self, prefix: &str) -> Result<UNetConfig> {
        Ok(UNetConfig {
            in_channels: self.parse(&format!("{prefix}.in_channels"))?,
            out_channels: self.parse(&format!("{prefix}.out_channels"))?,
            base_channels: self.parse(&format!("{prefix}.base_channels"))?,
            channel_multipliers: self.list(&format!("{prefix}.channel_multipliers"))?,
            bottleneck_dilations: self.list(&format!("{prefix}.bottleneck_dilations"))?,
            time_embed_dim: self.parse(&format!("{prefix}.time_embed_dim"))?,
        })
    }
}

/// Decodes a checkpoint. Either the whole state is returned or an error
/// naming the byte offset of the first problem.
pub fn read_checkpoint(bytes: &[u8], context: &str) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0, context };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.err(0, "bad magic, expected DDCP"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut tensors: BTreeMap<String, (usize, Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..count {
        let start = r.pos;
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| r.err(start + 2, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.err(start, "tensor size overflows"))?;
        let payload = r.take(numel, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(name.clone(), (start, shape, data)).is_some() {
            return Err(r.err(start, format!("duplicate tensor `{name}`")));
        }
    }
    let meta_start = r.pos;
    let meta_len = r.u32("metadata length")? as usize;
    let meta_bytes = r.take(meta_len, "metadata")?;
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after metadata"));
    }
    let text = std::str::from_utf8(meta_bytes).map_err(|_| r.err(meta_start + 4, "metadata is not UTF-8"))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| r.err(meta_start, format!("metadata line without `=`: {line}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let meta = Meta {
        map,
        context: context.to_string(),
        offset: meta_start,
    };

    let coarse = UNet::new(meta.unet("cp")?)?;
    let denoiser = UNet::new(meta.unet("den")?)?;
    let schedule = NoiseSchedule::linear(
        meta.parse("schedule.steps")?,
        meta.parse("schedule.beta_start")?,
        meta.parse("schedule.beta_end")?,
    )?;
    let mut config = TrainConfig::default();
    for key in TrainConfig::KEYS {
        config.set(key, meta.str(&format!("train.{key}"))?)?;
    }

    let mut take_set = |prefix: &str, net: &UNet| -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for (name, shape) in net.layout() {
            let full = format!("{prefix}{name}");
            let (offset, got, data) = tensors
                .remove(&full)
                .ok_or_else(|| Error::format(context, meta_start, format!("missing tensor `{full}`")))?;
            if got != shape {
                return Err(Error::format(
                    context,
                    offset,
                    format!("tensor `{full}` has shape {got:?}, expected {shape:?}"),
                ));
            }
            set.insert(name, Tensor::parameter(&shape, data)?);
        }
        Ok(set)
    };
    let coarse_params = take_set("cp.", &coarse)?;
    let denoiser_params = take_set("den.", &denoiser)?;
    let ema_coarse = take_set("ema.cp.", &coarse)?;
    let ema_denoiser = take_set("ema.den.", &denoiser)?;

    let mut optimizer = OptimizerState::new(meta.parse("opt.lr")?);
    optimizer.beta1 = meta.parse("opt.beta1")?;
    optimizer.beta2 = meta.parse("opt.beta2")?;
    optimizer.eps = meta.parse("opt.eps")?;
    optimizer.step = meta.parse("opt.step")?;
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for (prefix, set) in [("cp.", &coarse_params), ("den.", &denoiser_params)] {
        for (k, v) in set {
            sizes.insert(format!("{prefix}{k}"), v.numel());
        }
    }
    for (name, (offset, shape, data)) in tensors {
        let (moments, key) = if let Some(k) = name.strip_prefix("opt.m.") {
            (&mut optimizer.first_moment, k)
        } else if let Some(k) = name.strip_prefix("opt.v.") {
            (&mut optimizer.second_moment, k)
        } else {
            return Err(Error::format(context, offset, format!("unexpected tensor `{name}`")));
        };
        if sizes.get(key) != Some(&data.len()) || shape.len() != 1 {
            return Err(Error::format(
                context,
                offset,
                format!("optimizer moment `{name}` does not match any parameter"),
            ));
        }
        moments.insert(key.to_string(), data);
    }

    let seed = unhex(meta.str("rng.seed")?)
        .ok_or_else(|| Error::format(context, meta_start, "bad metadata value rng.seed"))?;
    let mut rng = Rng::from_seed(seed);
    rng.set_stream(meta.parse("rng.stream")?);
    rng.set_word_pos(meta.parse("rng.word_pos")?);

    let bundle = ModelBundle {
        coarse,
        denoiser,
        coarse_params,
        denoiser_params,
        ema_coarse,
        ema_denoiser,
        schedule,
        prediction: Prediction::parse(meta.str("prediction")?)?,
    };
    let mut trainer = Trainer::new(bundle, config)?;
    trainer.optimizer = optimizer;
    trainer.iteration = meta.parse("iteration")?;
    trainer.rng = rng;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UNetConfig;

    fn small() -> Trainer {
        let cfg = |c: UNetConfig| UNetConfig {
            base_channels: 4,
            channel_multipliers: vec![1, 2],
            bottleneck_dilations: vec![1, 2, 4, 8],
            ..c
        };
        let bundle = ModelBundle::new(
            cfg(UNetConfig::coarse(1)),
            cfg(UNetConfig::denoiser(1)),
            NoiseSchedule::default_linear(),
            &mut crate::rng::seeded(3),
        )
        .unwrap();
        Trainer::new(bundle, TrainConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let t = small();
        let bytes = write_checkpoint(&t);
        let back = read_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = write_checkpoint(&small());
        for cut in [0, 3, 4, 11, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut], "mem").is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = write_checkpoint(&small());
        bytes[0] = b'X';
        let e = read_checkpoint(&bytes, "mem").unwrap_err().to_string();
        assert!(e.contains("offset 0"), "{e}");
    }

    #[test]
    fn seed_hex_round_trip() {
        let s: [u8; 32] = std::array::from_fn(|i| (i * 7) as u8);
        assert_eq!(unhex(&hex(&s)), Some(s));
        assert_eq!(unhex("zz"), None);
    }
}
