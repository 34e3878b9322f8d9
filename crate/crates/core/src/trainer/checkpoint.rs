//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "NCSN"  u32 version
//! u32 D  u32 W  u32 H  u32 L  u32 iteration
//! L x f64 sigma
//! per parameter tensor, in network storage order:
//!     u32 rank  rank x u32 dim  prod(dims) x f64 value
//! u64 seed  u32 objective
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::network::{MlpShape, NcsnMlp};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

use super::ObjectiveKind;

pub const MAGIC: [u8; 4] = *b"NCSN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainMeta {
    pub iteration: u32,
    pub seed: u64,
    pub objective: ObjectiveKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub shape: MlpShape,
    pub sigmas: Vec<f64>,
    pub params: Vec<Tensor>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn from_network(net: &NcsnMlp, meta: TrainMeta) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            shape: net.shape(),
            sigmas: net.schedule().sigmas().to_vec(),
            params: net.params().to_vec(),
            meta,
        }
    }

    pub fn network(&self) -> Result<NcsnMlp> {
        let schedule = NoiseSchedule::new(self.sigmas.clone())?;
        NcsnMlp::from_parts(self.shape, schedule, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let s = self.shape;
        for v in [s.dim, s.hidden, s.layers, s.levels] {
            out.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.meta.iteration.to_le_bytes());
        for sigma in &self.sigmas {
            out.extend_from_slice(&sigma.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&to_u32(p.rank())?.to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&to_u32(d)?.to_le_bytes());
            }
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&self.meta.objective.code().to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let shape = MlpShape {
            dim: r.u32("header")? as usize,
            hidden: r.u32("header")? as usize,
            layers: r.u32("header")? as usize,
            levels: r.u32("header")? as usize,
        };
        let iteration = r.u32("header")?;
        let mut sigmas = Vec::with_capacity(shape.levels.min(1 << 16));
        for _ in 0..shape.levels {
            sigmas.push(r.f64("sigmas")?);
        }
        let expected = shape.param_shapes();
        let mut params = Vec::with_capacity(expected.len());
        for want in &expected {
            let rank = r.u32("tensor rank")? as usize;
            if rank != want.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {} has rank {rank}, expected {}",
                    params.len(),
                    want.len()
                )));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("tensor dims")? as usize);
            }
            if &dims != want {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {} has shape {dims:?}, expected {want:?}",
                    params.len()
                )));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 8, "tensor values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params.push(t);
        }
        let seed = u64::from_le_bytes(r.take(8, "metadata")?.try_into().expect("8 bytes"));
        let code = r.u32("metadata")?;
        let objective = ObjectiveKind::from_code(code)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown objective code {code}")))?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            version,
            shape,
            sigmas,
            params,
            meta: TrainMeta {
                iteration,
                seed,
                objective,
            },
        })
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the checkpoint header")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(net: &NcsnMlp, meta: TrainMeta, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_network(net, meta).to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(CheckpointError::Io)?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
