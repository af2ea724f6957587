use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KoopmanModel;
use crate::error::{Error, Result};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    model: KoopmanModel<f64>,
}

/// Writes a model as versioned JSON. Floats round-trip bit-exactly.
pub fn save_model(
    model: &KoopmanModel<f64>,
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        config_hash: config_hash.map(str::to_owned),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KoopmanModel<f64>> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: MODEL_FILE_VERSION,
        });
    }
    file.model.validate()?;
    Ok(file.model)
}
