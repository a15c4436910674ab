//! JSON container for saved predictors, polytopes, gains and reports.
//!
//! Every file is `{"kind": ..., "version": 1, "body": ...}`; loading checks
//! the kind so a polytope cannot be passed where a predictor is expected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: expected a `{expected}` file, found `{found}`")]
    Kind {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported version {found}")]
    Version { path: String, found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    body: T,
}

pub fn to_string<T: Serialize>(kind: &str, body: &T) -> String {
    serde_json::to_string_pretty(&Envelope {
        kind: kind.to_string(),
        version: VERSION,
        body,
    })
    .expect("artifact serialization")
}

pub fn save<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| ArtifactError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, to_string(kind, body)).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, ArtifactError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: p.clone(),
        source,
    })?;
    let raw: Envelope<serde_json::Value> = serde_json::from_str(&text).map_err(|source| ArtifactError::Parse {
        path: p.clone(),
        source,
    })?;
    if raw.kind != kind {
        return Err(ArtifactError::Kind {
            path: p,
            expected: kind.to_string(),
            found: raw.kind,
        });
    }
    if raw.version != VERSION {
        return Err(ArtifactError::Version {
            path: p,
            found: raw.version,
        });
    }
    serde_json::from_value(raw.body).map_err(|source| ArtifactError::Parse { path: p, source })
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("hash serialization");
    hex::encode(Sha256::digest(bytes))
}
