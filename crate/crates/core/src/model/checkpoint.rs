//! Checkpoint file: `ISOFCKPT`, a little-endian `u64` header length, a JSON
//! header, then every parameter tensor in header order (tensor file format).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{ensure, Error, Result};
use crate::loss::HypersphereSpec;
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::Real;

const MAGIC: &[u8; 8] = b"ISOFCKPT";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub lr_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: u32,
    model: ModelConfig,
    hypersphere: HypersphereSpec,
    params: Vec<CheckpointParam>,
    meta: serde_json::Value,
}

/// A trained (or freshly initialized) detector with its fixed hypersphere.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub hypersphere: HypersphereSpec,
    /// Free-form run information (configuration echo, epoch, metrics).
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real, W: Write>(out: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    ensure!(
        ckpt.hypersphere.dim() == ckpt.model.embedding_dim(),
        Shape,
        "center has dimension {}, embeddings {}",
        ckpt.hypersphere.dim(),
        ckpt.model.embedding_dim()
    );
    let params = ckpt.model.params();
    let header = Header {
        format: FORMAT,
        model: ckpt.model.config().clone(),
        hypersphere: ckpt.hypersphere.clone(),
        params: params
            .iter()
            .map(|(n, p)| CheckpointParam { name: n.clone(), shape: p.value.shape().to_vec(), lr_scale: p.lr_scale })
            .collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, p) in params {
        write_tensor(out, &p.value)?;
    }
    Ok(())
}

/// Reads a checkpoint into precision `T`, validating every parameter name
/// and shape against the architecture the stored configuration builds.
pub fn read_checkpoint<T: Real, R: Read>(input: &mut R) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    ensure!(&magic == MAGIC, Format, "not a checkpoint file");
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    ensure!(len < 1 << 30, Format, "implausible checkpoint header length {}", len);
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    ensure!(header.format == FORMAT, Format, "unsupported checkpoint format {}", header.format);
    let mut model = Model::<T>::build(&header.model, 0)?;
    {
        let mut params = model.params_mut();
        ensure!(params.len() == header.params.len(), Format, "checkpoint holds {} tensors, model has {}", header.params.len(), params.len());
        for ((name, p), stored) in params.iter_mut().zip(&header.params) {
            ensure!(*name == stored.name, Format, "expected parameter {}, found {}", name, stored.name);
            let value = read_tensor::<T, R>(input)?;
            ensure!(
                value.shape() == p.value.shape() && value.shape() == stored.shape.as_slice(),
                Format,
                "parameter {} has shape {:?}, expected {:?}",
                name,
                value.shape(),
                p.value.shape()
            );
            p.value = value;
            p.lr_scale = stored.lr_scale;
        }
    }
    ensure!(
        header.hypersphere.dim() == model.embedding_dim(),
        Format,
        "center has dimension {}, embeddings {}",
        header.hypersphere.dim(),
        model.embedding_dim()
    );
    Ok(Checkpoint { model, hypersphere: header.hypersphere, meta: header.meta })
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut bytes.as_slice())
}
