//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `LUMOSCKP`, a little-endian `u32` version, a
//! little-endian `u32` header length, the JSON header, then every parameter
//! tensor in store order as little-endian floats of the header's dtype.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use lumos_core::datamodel::TaskSpec;
use lumos_core::model::{Model, ModelConfig};
use lumos_core::tensor::{Mat, Scalar};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"LUMOSCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub tasks: Vec<TaskSpec>,
    pub epoch: usize,
}

pub fn encode<F: Scalar>(model: &Model<F>, tasks: &[TaskSpec], epoch: usize) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: model.config().clone(),
        dtype: F::DTYPE.to_string(),
        tensors: model
            .params()
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        tasks: tasks.to_vec(),
        epoch,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.count_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(json.len())?.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in model.params().iter() {
        for v in t.as_slice() {
            match F::DTYPE {
                "f32" => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

/// Decodes a checkpoint into a model of element type `F`, converting the
/// stored dtype if needed.
pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<(Model<F>, CheckpointHeader)> {
    ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not a LUMOS checkpoint (bad magic)");
    let version = u32::from_le_bytes(bytes[8..12].try_into()?);
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let hlen = u32::from_le_bytes(bytes[12..16].try_into()?) as usize;
    ensure!(bytes.len() >= 16 + hlen, "truncated checkpoint header");
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen]).context("checkpoint header")?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => bail!("unsupported checkpoint dtype `{other}`"),
    };
    let mut model = Model::<F>::new(header.model.clone())?;
    let mut cursor = 16 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (entry, (_, name, expected)) in header.tensors.iter().zip(model.params().iter()) {
        ensure!(
            entry.name == name && entry.rows == expected.rows() && entry.cols == expected.cols(),
            "checkpoint tensor `{}` ({}x{}) does not match model tensor `{name}` ({}x{})",
            entry.name,
            entry.rows,
            entry.cols,
            expected.rows(),
            expected.cols()
        );
        let n = entry.rows * entry.cols;
        let end = cursor + n * width;
        ensure!(bytes.len() >= end, "truncated checkpoint data in `{}`", entry.name);
        let data = bytes[cursor..end]
            .chunks_exact(width)
            .map(|c| {
                let v = if width == 4 {
                    f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                } else {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                };
                F::from_f64_lossy(v)
            })
            .collect();
        tensors.push(Mat::from_vec(entry.rows, entry.cols, data)?);
        cursor = end;
    }
    ensure!(cursor == bytes.len(), "trailing bytes after checkpoint data");
    model.load_params(tensors)?;
    Ok((model, header))
}

pub fn save<F: Scalar>(path: &Path, model: &Model<F>, tasks: &[TaskSpec], epoch: usize) -> Result<()> {
    fs::write(path, encode(model, tasks, epoch)?).with_context(|| format!("writing {}", path.display()))
}

pub fn load<F: Scalar>(path: &Path) -> Result<(Model<F>, CheckpointHeader)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}
