//! Versioned JSON artifacts for fitted models.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format: String,
    pub format_version: u32,
    pub crate_version: String,
    pub payload: T,
}

impl<T> Artifact<T> {
    pub fn new(payload: T) -> Self {
        Artifact {
            format: "quantstack".into(),
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            payload,
        }
    }

    pub fn into_inner(self) -> Result<T> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::ArtifactVersion(self.format_version));
        }
        Ok(self.payload)
    }
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, value)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
