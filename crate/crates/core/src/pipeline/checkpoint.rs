//! Run directories: a JSON manifest plus little-endian float64 tensor blobs.
//!
//! Blob layout: `u32` tensor count, then per tensor a `u32` rank, `u64`
//! dimensions and the `f64` data in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, RunConfig, TrainOutput};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";
pub const EMBEDDINGS: &str = "embeddings.bin";
const FORMAT: &str = "hgcl-run/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: RunConfig,
    pub feature_dim: usize,
    pub n_views: usize,
    pub tensors: Vec<TensorEntry>,
    pub losses: Vec<f64>,
}

pub fn write_tensors(mut w: impl Write, tensors: &[&Tensor]) -> Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated tensor blob: {e}")))?;
    Ok(buf)
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<Tensor>> {
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
            .collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<_>>()?;
        out.push(Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes in tensor blob", rest.len())));
    }
    Ok(out)
}

/// Writes the manifest, parameters and final embeddings into `dir`.
pub fn save_run(dir: impl AsRef<Path>, cfg: &RunConfig, out: &TrainOutput, feature_dim: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let named = out.params.named();
    let manifest = RunManifest {
        format: FORMAT.into(),
        config: cfg.clone(),
        feature_dim,
        n_views: out.params.encoder.layers.len(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        losses: out.losses.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
    let mut blob = Vec::new();
    write_tensors(&mut blob, &tensors)?;
    fs::write(dir.join(PARAMS), blob)?;
    let mut blob = Vec::new();
    write_tensors(&mut blob, &[&out.embeddings])?;
    fs::write(dir.join(EMBEDDINGS), blob)?;
    Ok(())
}

/// Reads back what [`save_run`] wrote.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(RunManifest, TrainOutput)> {
    let dir = dir.as_ref();
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let tensors = read_tensors(fs::File::open(dir.join(PARAMS))?)?;
    let mut params = ModelParams::init(
        &manifest.config.encoder,
        manifest.feature_dim,
        manifest.n_views,
        manifest.config.seed,
    )?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if tensors.len() != names.len() || manifest.tensors.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {} in blob and {} in manifest",
            names.len(),
            tensors.len(),
            manifest.tensors.len()
        )));
    }
    for (((slot, name), entry), t) in params.params_mut().into_iter().zip(&names).zip(&manifest.tensors).zip(tensors) {
        if &entry.name != name || slot.shape() != t.shape() || entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not fit {} {:?}",
                entry.name,
                t.shape(),
                name,
                slot.shape()
            )));
        }
        *slot = t;
    }
    let embeddings = read_tensors(fs::File::open(dir.join(EMBEDDINGS))?)?
        .pop()
        .ok_or_else(|| Error::Checkpoint("empty embeddings blob".into()))?;
    let losses = manifest.losses.clone();
    Ok((
        manifest,
        TrainOutput {
            params,
            embeddings,
            losses,
        },
    ))
}
