//! Binary checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VTCKPT\0\0" | version u32 | config text (u64 len + UTF-8)
//! iteration u64 | seed u64 | rng word position u128
//! dtype (u32 len + "f32"/"f64") | param count u32
//! per param: name (u32 len + UTF-8) | ndim u32 | dims u64 * ndim | data
//! ```

use std::path::Path;

use super::config::Config;
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VTCKPT\0\0";
pub const VERSION: u32 = 1;

/// Training progress stored next to the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub seed: u64,
    /// Position of the training sampler's random stream.
    pub rng_word_pos: u128,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = model.config.to_toml_string();
    put_u64(&mut out, cfg.len() as u64);
    out.extend_from_slice(cfg.as_bytes());
    put_u64(&mut out, meta.iteration);
    put_u64(&mut out, meta.seed);
    out.extend_from_slice(&meta.rng_word_pos.to_le_bytes());
    put_str32(&mut out, T::NAME);
    put_u32(&mut out, model.params.len() as u32);
    for (_, name, var) in model.params.iter() {
        put_str32(&mut out, name);
        let value = var.value();
        put_u32(&mut out, value.shape().len() as u32);
        for &d in value.shape() {
            put_u64(&mut out, d as u64);
        }
        for &x in value.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool, what: &str) -> Result<usize> {
        let n = if wide { self.u64(what)? } else { self.u32(what)? as u64 };
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))
    }

    fn string(&mut self, wide: bool, what: &str) -> Result<String> {
        let n = self.len(wide, what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let cfg_text = r.string(true, "config")?;
    let config = Config::from_toml_str(&cfg_text)?;
    let iteration = r.u64("iteration")?;
    let seed = r.u64("seed")?;
    let rng_word_pos = u128::from_le_bytes(r.take(16, "rng state")?.try_into().expect("16 bytes"));
    let dtype = r.string(false, "dtype")?;
    let elem = match dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Format(format!("unsupported dtype {other}"))),
    };
    let mut model = Model::<T>::new(config)?;
    let count = r.u32("param count")? as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, the configured model {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name = r.string(false, "parameter name")?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(elem).ok_or_else(|| Error::Format("dims overflow".into()))?, &name)?;
        let data: Vec<T> = raw
            .chunks_exact(elem)
            .map(|c| if elem == 4 { T::lit(f32::read_le(c) as f64) } else { T::lit(f64::read_le(c)) })
            .collect();
        let id = model
            .params
            .id_of(&name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter {name}")))?;
        if model.params.var(id).shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {shape:?}, the model expects {:?}",
                model.params.var(id).shape()
            )));
        }
        let idx = model.params.iter().position(|(i, _, _)| i == id).expect("id exists");
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Format(format!("parameter {name} appears twice")));
        }
        model.params.set(id, Tensor::new(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last parameter".into()));
    }
    Ok((
        model,
        CheckpointMeta {
            iteration,
            seed,
            rng_word_pos,
        },
    ))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> Config {
        Config::from_toml_str("model.channels = 8\nmodel.backbone_widths = [4, 6, 8]\nmodel.roi_size = 4\nmodel.mask_size = 8\nmodel.latent_dim = 6\nmodel.edge_dim = 5\nmodel.hidden_dim = 7\nmodel.encoder_channels = 3\nseed = 9").unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            iteration: 17,
            seed: 9,
            rng_word_pos: 1 << 70,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = Model::<f32>::new(small_config()).unwrap();
        let bytes = encode_checkpoint(&m, &meta());
        let (back, got) = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(got, meta());
        assert_eq!(back.config, m.config);
        assert_eq!(encode_checkpoint(&back, &got), bytes);
        for ((_, a, va), (_, b, vb)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a, b);
            assert_eq!(va.value(), vb.value());
        }
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let m = Model::<f32>::new(small_config()).unwrap();
        let bytes = encode_checkpoint(&m, &meta());
        let step = (bytes.len() / 97).max(1);
        for cut in (0..bytes.len()).step_by(step) {
            match decode_checkpoint::<f32>(&bytes[..cut]) {
                Err(Error::Format(_)) => {}
                Err(e) => panic!("cut {cut}: unexpected error {e}"),
                Ok(_) => panic!("cut {cut}: truncated checkpoint loaded"),
            }
        }
    }

    #[test]
    fn version_is_checked() {
        let m = Model::<f32>::new(small_config()).unwrap();
        let mut bytes = encode_checkpoint(&m, &meta());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes),
            Err(Error::VersionMismatch { found: 7, expected: VERSION })
        ));
    }

    #[test]
    fn garbage_and_trailing_bytes_are_rejected() {
        assert!(matches!(decode_checkpoint::<f32>(b"not a checkpoint"), Err(Error::Format(_))));
        let m = Model::<f32>::new(small_config()).unwrap();
        let mut bytes = encode_checkpoint(&m, &meta());
        bytes.push(0);
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn f32_weights_load_into_f64_exactly() {
        let m = Model::<f32>::new(small_config()).unwrap();
        let (wide, _) = decode_checkpoint::<f64>(&encode_checkpoint(&m, &meta())).unwrap();
        for ((_, _, a), (_, _, b)) in m.params.iter().zip(wide.params.iter()) {
            assert!(a.value().data().iter().zip(b.value().data()).all(|(x, y)| *x as f64 == *y));
        }
    }
}
