//! "VDCK" checkpoints: run config text plus every named parameter tensor,
//! closed by a CRC32 of all preceding bytes. Integers are little-endian.

use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::net::{Diffuser, LayerGroup, ParameterStore};
use crate::numerics::Tensor;

pub const VDCK_MAGIC: &[u8; 4] = b"VDCK";
pub const VDCK_VERSION: u32 = 1;
/// The only payload type written so far.
pub const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Config of the run; `model.flows` names the flows the parameters cover.
    pub config: RunConfig,
    pub params: ParameterStore,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("text is not UTF-8".into()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    /// Snapshot of `model`; the config's model section is replaced by the
    /// model's own.
    pub fn from_model(config: &RunConfig, model: &Diffuser) -> Self {
        let mut config = config.clone();
        config.model = model.config().clone();
        Self { config, params: model.params().clone() }
    }

    pub fn model(&self) -> Result<Diffuser> {
        Diffuser::from_parts(self.config.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(VDCK_MAGIC);
        out.extend_from_slice(&VDCK_VERSION.to_le_bytes());
        let text = self.config.render();
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.len())?;
        for (name, p) in self.params.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            out.push(p.group.tag());
            out.push(DTYPE_F64);
            put_u32(&mut out, p.value.rank())?;
            for &d in p.value.shape() {
                put_u32(&mut out, d)?;
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != VDCK_MAGIC {
            return Err(Error::Checkpoint("not a VDCK checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: body, at: 4 };
        let version = r.u32()?;
        if version != VDCK_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config = RunConfig::parse(&r.text()?)?;
        let count = r.u32()? as usize;
        let mut params = ParameterStore::new();
        for _ in 0..count {
            let name = r.text()?;
            let tag = r.u8()?;
            let group = LayerGroup::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("bad group tag {tag}")))?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("unsupported dtype {dtype} for '{name}'")));
            }
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            if params.contains(&name) {
                return Err(Error::Checkpoint(format!("parameter '{name}' stored twice")));
            }
            params.insert(name, Tensor::new(&shape, data)?, group)?;
        }
        if r.at != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.at)));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// CRC32 trailer of a checkpoint file's bytes, for provenance lines.
pub fn stored_crc(bytes: &[u8]) -> Option<u32> {
    let tail = bytes.get(bytes.len().checked_sub(4)?..)?;
    Some(u32::from_le_bytes(tail.try_into().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream_rng;

    fn small() -> (RunConfig, Diffuser) {
        let mut cfg = RunConfig::default();
        cfg.model.channels = [8, 8];
        cfg.model.text_hidden = 8;
        cfg.resume = Some(crate::training::Progress { stage: 1, step: 4 });
        let mut m = Diffuser::new(cfg.model.clone(), 3).unwrap();
        m.params_mut().perturb(0.1, &mut stream_rng(1, &[]));
        (cfg, m)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, m) = small();
        let ck = Checkpoint::from_model(&cfg, &m);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VDCK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(back.params.bit_eq(m.params()));
        for (name, p) in m.params().iter() {
            assert_eq!(back.params.group(name), Some(p.group));
        }
        assert_eq!(back.config, ck.config);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(back.model().unwrap().params().bit_eq(m.params()));
        assert_eq!(stored_crc(&bytes), Some(crc32fast::hash(&bytes[..bytes.len() - 4])));
    }

    #[test]
    fn corruption_is_refused() {
        let (cfg, m) = small();
        let mut bytes = Checkpoint::from_model(&cfg, &m).to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"VDCX00000000"), Err(Error::Checkpoint(_))));
        let good = Checkpoint::from_model(&cfg, &m).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 9]).is_err());
    }
}
