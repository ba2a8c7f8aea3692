//! Versioned JSON checkpoints shared by the classifier and the norm-VAE.
//! Weight matrices are stored as `{rows, cols, data}` with `data` row-major.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "spl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

pub fn to_json<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        payload,
    };
    Ok(serde_json::to_string(&env)?)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != FORMAT {
        return Err(Error::Usage(format!("not a checkpoint: format {:?}", env.format)));
    }
    if env.version != VERSION {
        return Err(Error::Usage(format!(
            "checkpoint version {} unsupported (expected {VERSION})",
            env.version
        )));
    }
    if env.kind != kind {
        return Err(Error::Usage(format!("checkpoint holds a {:?}, expected {kind:?}", env.kind)));
    }
    Ok(env.payload)
}

pub fn save<T: Serialize>(path: impl AsRef<Path>, kind: &str, payload: &T) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(kind, payload)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(kind, &text)
}
