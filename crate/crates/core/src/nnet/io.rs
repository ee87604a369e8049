//! JSON weight files.
//!
//! ```json
//! {"version":1,"arch":"gru",
//!  "dims":{"input":3,"hidden":[32,32],"output":1,
//!          "output_activation":"sigmoid","hidden_activation":"tanh"},
//!  "shapes":[{"name":"gru0.wz","rows":32,"cols":3}, ...],
//!  "data":[...]}
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Arch, NetworkSpec, Parameters, ShapeEntry};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub output_activation: Activation,
    pub hidden_activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFile {
    pub version: u32,
    pub arch: String,
    pub dims: Dims,
    pub shapes: Vec<ShapeEntry>,
    pub data: Vec<f64>,
}

impl WeightFile {
    pub fn new(spec: &NetworkSpec, params: &Parameters) -> Self {
        WeightFile {
            version: FORMAT_VERSION,
            arch: spec.arch.as_str().to_string(),
            dims: Dims {
                input: spec.input_dim,
                hidden: spec.hidden_dims.clone(),
                output: spec.output_dim,
                output_activation: spec.output_activation,
                hidden_activation: spec.hidden_activation,
            },
            shapes: params.shapes().to_vec(),
            data: params.as_slice().to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(NetworkSpec, Parameters)> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Version(self.version));
        }
        let arch: Arch = self.arch.parse()?;
        let spec = NetworkSpec {
            arch,
            input_dim: self.dims.input,
            hidden_dims: self.dims.hidden,
            output_dim: self.dims.output,
            output_activation: self.dims.output_activation,
            hidden_activation: self.dims.hidden_activation,
        };
        spec.validate()?;
        let params = Parameters::from_parts(self.shapes, self.data)?;
        params.check_matches(&spec)?;
        Ok((spec, params))
    }

    pub fn from_json(text: &str) -> Result<(NetworkSpec, Parameters)> {
        let file: WeightFile = serde_json::from_str(text)?;
        file.into_parts()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn save(spec: &NetworkSpec, params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = WeightFile::new(spec, params).to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(NetworkSpec, Parameters)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    WeightFile::from_json(&text)
}
