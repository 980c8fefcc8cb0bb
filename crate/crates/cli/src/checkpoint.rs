//! Little-endian binary checkpoint: magic, version, config record, tensor table.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fgmamba_core::model::{FgMamba, ModelConfig};
use fgmamba_core::params::ParamStore;
use fgmamba_core::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FGMB";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file is truncated")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameters do not match the stored configuration: {0}")]
    Mismatch(#[from] fgmamba_core::Error),
}

fn write_u32(w: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_u32::<LittleEndian>(v)
}

fn write_config(w: &mut impl Write, c: &ModelConfig) -> io::Result<()> {
    for v in [
        c.channels,
        c.n_fgblocks,
        c.n_gasm_per_block,
        c.scale,
        c.state_dim,
        c.expansion,
    ] {
        write_u32(w, v)?;
    }
    w.write_u8(c.use_gau as u8)?;
    w.write_u8(c.use_pffm as u8)?;
    write_u32(w, c.in_channels)
}

pub fn to_bytes(model: &FgMamba<f32>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    write_config(&mut out, model.config())?;
    write_u32(&mut out, model.params().len())?;
    for (name, t) in model.params().iter() {
        write_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        out.write_u8(DTYPE_F32)?;
        write_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            write_u32(&mut out, e)?;
        }
        for &v in t.data() {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(out)
}

/// Maps end-of-input to [`CheckpointError::Truncated`].
fn eof<T>(r: io::Result<T>) -> Result<T, CheckpointError> {
    r.map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_len(r: &mut Cursor<&[u8]>) -> Result<usize, CheckpointError> {
    Ok(eof(r.read_u32::<LittleEndian>())? as usize)
}

fn read_flag(r: &mut Cursor<&[u8]>, what: &str) -> Result<bool, CheckpointError> {
    match eof(r.read_u8())? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(CheckpointError::Malformed(format!("{what} flag is {v}"))),
    }
}

fn remaining(r: &Cursor<&[u8]>) -> usize {
    r.get_ref().len() - r.position() as usize
}

pub fn from_bytes(bytes: &[u8]) -> Result<FgMamba<f32>, CheckpointError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    eof(r.read_exact(&mut magic))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = eof(r.read_u32::<LittleEndian>())?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut fields = [0usize; 6];
    for f in &mut fields {
        *f = read_len(&mut r)?;
    }
    let [channels, n_fgblocks, n_gasm_per_block, scale, state_dim, expansion] = fields;
    let config = ModelConfig {
        channels,
        n_fgblocks,
        n_gasm_per_block,
        scale,
        state_dim,
        expansion,
        use_gau: read_flag(&mut r, "use_gau")?,
        use_pffm: read_flag(&mut r, "use_pffm")?,
        in_channels: read_len(&mut r)?,
    };
    config.validate()?;

    let count = read_len(&mut r)?;
    let mut params = ParamStore::default();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = read_len(&mut r)?;
        if len > remaining(&r) {
            return Err(CheckpointError::Truncated);
        }
        let mut name = vec![0u8; len];
        eof(r.read_exact(&mut name))?;
        let name =
            String::from_utf8(name).map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        if !seen.insert(name.clone()) {
            return Err(CheckpointError::Malformed(format!("duplicate tensor `{name}`")));
        }
        let dtype = eof(r.read_u8())?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::Malformed(format!(
                "unknown dtype code {dtype} for `{name}`"
            )));
        }
        let rank = read_len(&mut r)?;
        if rank * 4 > remaining(&r) {
            return Err(CheckpointError::Truncated);
        }
        let shape = (0..rank).map(|_| read_len(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| CheckpointError::Malformed(format!("extents of `{name}` overflow")))?;
        if n.saturating_mul(4) > remaining(&r) {
            return Err(CheckpointError::Truncated);
        }
        let mut data = vec![0f32; n];
        eof(r.read_f32_into::<LittleEndian>(&mut data))?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params.insert(name, t);
    }
    let extra = remaining(&r);
    if extra != 0 {
        return Err(CheckpointError::TrailingBytes(extra));
    }
    Ok(FgMamba::from_params(config, params)?)
}

/// Writes through a sibling temporary file so a failed save never leaves a
/// partial checkpoint behind.
pub fn save(model: &FgMamba<f32>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = to_bytes(model)?;
    let tmp = path.with_extension("fgmb.partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FgMamba<f32>, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
