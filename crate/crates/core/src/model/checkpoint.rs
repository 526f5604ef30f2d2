//! Binary checkpoint: magic, version, a JSON header, then the active
//! parameters by name as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BDACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    seed: u64,
    #[serde(default)]
    echo: serde_json::Value,
}

/// A loaded model plus the free-form JSON stored alongside it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub echo: serde_json::Value,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::contract(format!("{what} too large for checkpoint")))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Document(format!("checkpoint: {}", msg.into()))
}

impl Model {
    pub fn write_checkpoint(&self, w: &mut impl Write, echo: &serde_json::Value) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            model: self.cfg.clone(),
            seed: self.seed,
            echo: echo.clone(),
        })?;
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_u32(w, len_u32(header.len(), "header")?)?;
        w.write_all(&header)?;
        let ids = self.active_params();
        put_u32(w, len_u32(ids.len(), "parameter count")?)?;
        for id in ids {
            let p = self.store.get(id);
            put_u32(w, len_u32(p.name.len(), "name")?)?;
            w.write_all(p.name.as_bytes())?;
            let shape = p.value.shape();
            put_u32(w, len_u32(shape.len(), "rank")?)?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut header = vec![0u8; get_u32(r)? as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut model = Model::build(&header.model, header.seed)?;
        let expected = model.active_params();
        let count = get_u32(r)? as usize;
        if count != expected.len() {
            return Err(bad(format!("{count} parameters stored, model has {}", expected.len())));
        }
        for _ in 0..count {
            let mut name = vec![0u8; get_u32(r)? as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
            let ndim = get_u32(r)? as usize;
            let shape = (0..ndim).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let id = model
                .store
                .find(&name)
                .filter(|id| expected.contains(id))
                .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
            if model.store.value(id).shape() != shape.as_slice() {
                return Err(bad(format!(
                    "{name}: stored shape {shape:?}, model expects {:?}",
                    model.store.value(id).shape()
                )));
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data)?;
            t.check_finite(&name)?;
            model.store.get_mut(id).value = t;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            model,
            echo: header.echo,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, echo: &serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let run = || -> Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            self.write_checkpoint(&mut w, echo)?;
            w.flush()?;
            Ok(())
        };
        run().map_err(|e| e.in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let run = || -> Result<Checkpoint> {
            let mut r = BufReader::new(File::open(path)?);
            Model::read_checkpoint(&mut r)
        };
        run().map_err(|e| e.in_file(path))
    }
}
