//! Model checkpoint archive.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"UQCKPT\0\x01"
//! header_len   u32
//! header       header_len bytes of UTF-8 text, one `key = value` per line:
//!                format = uq-checkpoint 1
//!                variant = <baseline|bayesian1|bayesian2|variational>
//!                classes = <C>
//!                input_shape = <d0> [<d1> ...]
//!                layer = <layer text>        (repeated, in order)
//!                init_seed = <u64>
//!                train_seed = <u64>
//!                epochs = <usize>
//!                final_loss = <f64, shortest round-trip decimal>
//! n_params     u32
//! n_params x:
//!   name_len   u16, then name_len bytes of UTF-8
//!   ndim       u8, then ndim x u64 extents
//!   payload    product(extents) x f64
//! ```
//!
//! Parameters are stored in name order. Decoding an encoded checkpoint
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ModelParams;
use super::spec::{LayerSpec, ModelSpec, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"UQCKPT\0\x01";
const FORMAT_LINE: &str = "uq-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub train_seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

fn header_text(ck: &Checkpoint) -> String {
    let s = &ck.spec;
    let mut out = String::new();
    out.push_str(&format!("format = {FORMAT_LINE}\n"));
    out.push_str(&format!("variant = {}\n", s.variant));
    out.push_str(&format!("classes = {}\n", s.classes));
    let dims: Vec<String> = s.input_shape.iter().map(ToString::to_string).collect();
    out.push_str(&format!("input_shape = {}\n", dims.join(" ")));
    for l in &s.layers {
        out.push_str(&format!("layer = {l}\n"));
    }
    out.push_str(&format!("init_seed = {}\n", ck.params.seed));
    out.push_str(&format!("train_seed = {}\n", ck.meta.train_seed));
    out.push_str(&format!("epochs = {}\n", ck.meta.epochs));
    out.push_str(&format!("final_loss = {}\n", ck.meta.final_loss));
    out
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = header_text(ck);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    buf.extend_from_slice(&(ck.params.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ck.params.tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.ndim()).map_err(|_| Error::invalid("too many dimensions"))?;
        buf.push(ndim);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                "checkpoint",
                format!("offset {}", self.pos),
                format!("truncated: need {n} more bytes"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

fn header_err(line: usize, msg: impl Into<String>) -> Error {
    Error::parse("checkpoint header", format!("line {line}"), msg)
}

fn parse_header(text: &str) -> Result<(ModelSpec, u64, TrainingMeta)> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut layers = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once(" = ") else {
            return Err(header_err(i + 1, format!("expected `key = value`, got {line:?}")));
        };
        if k == "layer" {
            layers.push(v.parse::<LayerSpec>().map_err(|e| header_err(i + 1, e.to_string()))?);
        } else if fields.insert(k, v).is_some() {
            return Err(header_err(i + 1, format!("duplicate key {k}")));
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| header_err(0, format!("missing key {k}")));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| header_err(0, format!("bad value for {k}: {v:?}")))
    }
    if get("format")? != FORMAT_LINE {
        return Err(header_err(1, "unsupported format"));
    }
    let input_shape = get("input_shape")?
        .split_whitespace()
        .map(|d| num::<usize>("input_shape", d))
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec {
        layers,
        variant: get("variant")?.parse::<Variant>()?,
        classes: num("classes", get("classes")?)?,
        input_shape,
    };
    spec.validate()?;
    let meta = TrainingMeta {
        train_seed: num("train_seed", get("train_seed")?)?,
        epochs: num("epochs", get("epochs")?)?,
        final_loss: num("final_loss", get("final_loss")?)?,
    };
    Ok((spec, num("init_seed", get("init_seed")?)?, meta))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::parse("checkpoint", "offset 0", "bad magic"));
    }
    let hlen = u32::from_le_bytes(r.array()?) as usize;
    let header = std::str::from_utf8(r.take(hlen)?)
        .map_err(|_| Error::parse("checkpoint", "offset 12", "header is not UTF-8"))?;
    let (spec, init_seed, meta) = parse_header(header)?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let nlen = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::parse("checkpoint", format!("offset {at}"), "name is not UTF-8"))?
            .to_string();
        let ndim = r.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(r.array()?) as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            Error::parse("checkpoint", format!("offset {at}"), "shape overflows")
        })?;
        let payload = r.take(numel.checked_mul(8).unwrap_or(usize::MAX))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("checkpoint", format!("offset {}", r.pos), "trailing bytes"));
    }
    let params = ModelParams {
        tensors,
        seed: init_seed,
    };
    params.check_against(&spec)?;
    Ok(Checkpoint { spec, params, meta })
}

/// Writes to a sibling temporary file and renames it into place, so an
/// interrupted write never leaves a partial checkpoint at `path`.
pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::build_model;

    fn sample() -> Checkpoint {
        let spec = ModelSpec::mini_resnet(Variant::Bayesian2, [1, 8, 8], 4, 0.5).unwrap();
        let params = build_model(&spec, 42).unwrap();
        Checkpoint {
            spec,
            params,
            meta: TrainingMeta {
                train_seed: 7,
                epochs: 3,
                final_loss: 0.1 + 0.2,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.spec, ck.spec);
        assert!(back.params.bit_identical(&ck.params));
        assert_eq!(back.meta.final_loss.to_bits(), ck.meta.final_loss.to_bits());
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn header_is_readable_text() {
        let bytes = encode(&sample()).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        assert!(text.contains("variant = bayesian2\n"));
        assert_eq!(text.matches("layer = dropout 0.5").count(), 4);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn save_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        save(&path, &sample()).unwrap();
        assert!(path.exists());
        assert!(!dir.path().join("checkpoint.bin.tmp").exists());
        let back = load(&path).unwrap();
        assert!(back.params.bit_identical(&sample().params));
    }
}
