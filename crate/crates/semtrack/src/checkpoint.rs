//! Network checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FFCN"  u32 version  [32] sha256(architecture description)
//! u64 parameter count  f32 x count
//! u32 metadata length  metadata (UTF-8 JSON)
//! [32] sha256 of everything above
//! ```
//!
//! Loading checks the trailing checksum and that the architecture digest
//! matches the network the caller expects.

use std::fs;
use std::path::Path;

use semtrack_core::fcn::{NetworkParams, NetworkSpec};
use sha2::{Digest, Sha256};

use crate::error::{format_err, Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"FFCN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn architecture_digest(spec: &NetworkSpec) -> [u8; 32] {
    Sha256::digest(spec.describe().as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub params: Vec<f32>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        spec: &NetworkSpec,
        params: &NetworkParams<f32>,
        metadata: serde_json::Value,
    ) -> Self {
        Self {
            digest: architecture_digest(spec),
            params: params.flatten(),
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata.to_string();
        let mut out = Vec::with_capacity(84 + self.params.len() * 4 + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| format_err(path, m);
        if bytes.len() < 4 + 4 + 32 + 8 + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(bad("not a network checkpoint"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad(
                "checkpoint checksum mismatch (file is corrupt or truncated)",
            ));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format_err(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let digest: [u8; 32] = body[8..40].try_into().unwrap();
        let count = u64::from_le_bytes(body[40..48].try_into().unwrap()) as usize;
        let params_end = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(48))
            .ok_or_else(|| bad("bad parameter count"))?;
        if body.len() < params_end + 4 {
            return Err(bad("truncated parameter block"));
        }
        let params = body[48..params_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let meta_len =
            u32::from_le_bytes(body[params_end..params_end + 4].try_into().unwrap()) as usize;
        let meta = &body[params_end + 4..];
        if meta.len() != meta_len {
            return Err(bad("metadata length mismatch"));
        }
        let metadata = serde_json::from_slice(meta).map_err(|e| format_err(path, e))?;
        Ok(Self {
            digest,
            params,
            metadata,
        })
    }

    /// Parameters for `spec`; fails when the checkpoint was written for a
    /// different architecture.
    pub fn params_for(&self, spec: &NetworkSpec) -> Result<NetworkParams<f32>> {
        let expected = architecture_digest(spec);
        if self.digest != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint architecture {} does not match the network ({})",
                hex(&self.digest),
                hex(&expected)
            )));
        }
        Ok(NetworkParams::from_flat(spec, &self.params)?)
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, ckpt.to_bytes()).at(path)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    Checkpoint::from_bytes(&bytes, path)
}
