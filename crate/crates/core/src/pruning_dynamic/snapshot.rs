use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"OPSNAP1\n";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Everything needed to resume sampling mid-run: the sampler's scores and
/// the generators it draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSnapshot {
    pub strategy: String,
    /// Last completed step.
    pub step: usize,
    pub sampler: serde_json::Value,
    /// Cached negative-mining windows.
    #[serde(default)]
    pub miner: serde_json::Value,
    pub sample_rng: Rng,
    pub mining_rng: Rng,
}

impl SamplerSnapshot {
    /// Magic, little-endian `u32` version, little-endian `u64` payload
    /// length, then the JSON payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let payload = serde_json::to_vec(self)?;
        let io = |e| Error::io(Path::new("<snapshot>"), e);
        w.write_all(SNAPSHOT_MAGIC).map_err(io)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(payload.len() as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&payload).map_err(io)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| format("truncated snapshot header".into()))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(format("not a sampler snapshot".into()));
        }
        let mut version = [0u8; 4];
        let mut len = [0u8; 8];
        r.read_exact(&mut version)
            .and_then(|_| r.read_exact(&mut len))
            .map_err(|_| format("truncated snapshot header".into()))?;
        let version = u32::from_le_bytes(version);
        if version != SNAPSHOT_VERSION {
            return Err(format(format!(
                "snapshot version {version} is not supported (expected {SNAPSHOT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(len) as usize;
        let mut payload = Vec::new();
        r.take(len as u64 + 1)
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        if payload.len() != len {
            return Err(format(format!(
                "snapshot payload is {} bytes, header says {len}",
                payload.len()
            )));
        }
        serde_json::from_slice(&payload).map_err(|e| format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file), path)
    }
}
