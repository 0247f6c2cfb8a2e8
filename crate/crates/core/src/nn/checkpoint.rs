//! Checkpoint directories: `params.bin` (tensors as little-endian f64 with a
//! shape header) plus `manifest.json`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, SequenceModel};
use crate::error::{GmeError, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"GMET";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_tensors<T: Scalar>(path: &Path, tensors: &[Array2<T>]) -> Result<()> {
    let io = |e| GmeError::io(path, e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in tensors {
        w.write_all(&(t.nrows() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(t.ncols() as u32).to_le_bytes()).map_err(io)?;
        for v in t.iter() {
            w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_tensors<T: Scalar>(path: &Path) -> Result<Vec<Array2<T>>> {
    let io = |e| GmeError::io(path, e);
    let mut r = BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    if &word != MAGIC {
        return Err(GmeError::Serde(format!("{} is not a tensor file", path.display())));
    }
    let read_u32 = |r: &mut BufReader<std::fs::File>| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(io)?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let n = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = read_u32(&mut r)?;
        let cols = read_u32(&mut r)?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b).map_err(io)?;
            data.push(T::of(f64::from_le_bytes(b)));
        }
        out.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches data"));
    }
    Ok(out)
}

/// Metadata stored next to a parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Which model this is ("attribution", "recombiner", "maskgen").
    pub kind: String,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub step: usize,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| GmeError::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&p).map_err(|e| GmeError::io(&p, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Rejects a checkpoint built for another vocabulary or model kind.
    pub fn expect(&self, kind: &str, vocab_hash: &str) -> Result<()> {
        if self.kind != kind {
            return Err(GmeError::Config(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.kind
            )));
        }
        if self.vocab_hash != vocab_hash {
            return Err(GmeError::Config(format!(
                "{kind} checkpoint vocabulary hash {} does not match {vocab_hash}",
                self.vocab_hash
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> SequenceModel<T> {
    pub fn save(&self, dir: &Path, manifest: &Manifest) -> Result<()> {
        debug_assert_eq!(&manifest.model, self.config());
        manifest.save(dir)?;
        save_tensors(&dir.join(PARAMS_FILE), self.params())
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let manifest = Manifest::load(dir)?;
        let mut model = SequenceModel::new(manifest.model.clone(), 0)?;
        model.set_params(load_tensors(&dir.join(PARAMS_FILE))?)?;
        Ok((model, manifest))
    }
}
