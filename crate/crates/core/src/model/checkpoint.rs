//! Checkpoints: a TOML architecture descriptor plus a flat little-endian
//! `f64` blob of the parameters in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, GridParams, MlpParams, Representation, VelocityModel};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Real;
use crate::volume::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDescriptor {
    pub arch: Arch,
    /// Coarse grid the model was evaluated on.
    pub coarse_dims: [usize; 3],
    pub param_count: usize,
}

pub fn write_checkpoint<T: Real>(
    model: &VelocityModel<T>,
    coarse: Dims,
    arch: &Arch,
    descriptor_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let desc = CheckpointDescriptor {
        arch: *arch,
        coarse_dims: coarse.0,
        param_count: model.param_count(),
    };
    let text = toml::to_string(&desc).expect("descriptor serializes");
    fs::write(descriptor_path, text).map_err(|e| Error::io(descriptor_path, e))?;
    let blob: Vec<u8> = model
        .params()
        .iter()
        .flat_map(|v| v.as_f64().to_le_bytes())
        .collect();
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))
}

pub fn read_checkpoint<T: Real>(
    descriptor_path: &Path,
    blob_path: &Path,
) -> Result<(CheckpointDescriptor, VelocityModel<T>)> {
    let text = fs::read_to_string(descriptor_path).map_err(|e| Error::io(descriptor_path, e))?;
    let desc: CheckpointDescriptor = toml::from_str(&text).map_err(|e| Error::Format {
        path: descriptor_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let bytes = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    if bytes.len() != 8 * desc.param_count {
        return Err(Error::Corrupt {
            path: blob_path.to_path_buf(),
            msg: format!(
                "expected {} parameters, blob holds {} bytes",
                desc.param_count,
                bytes.len()
            ),
        });
    }
    let values: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let coarse = Dims(desc.coarse_dims);
    let model = match desc.arch.representation {
        Representation::Mlp => VelocityModel::Mlp(MlpParams::from_values(&desc.arch, values)?),
        Representation::Grid => VelocityModel::Grid(GridParams {
            field: VectorField::new(coarse, [1.0; 3], values)?,
        }),
    };
    Ok((desc, model))
}
