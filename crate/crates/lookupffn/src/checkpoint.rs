//! Binary parameter checkpoints for [`LookupFfn`] layers.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "LFFN"
//!      4     4  version (u32, currently 1)
//!      8     4  d_in (u32)
//!     12     4  d_out (u32)
//!     16     4  h (u32)
//!     20     4  tau (u32)
//!     24     1  variant (u8: 0 softmax, 1 scaled, 2 sigmoid-tau1, 3 gelu-tau1)
//!     25     1  projection kind (u8: 0 dense, 1 bh, 2 acdc, 3 signflip)
//!     26     4  m (u32: bh stages, acdc depth, else 0)
//!     30     4  b (u32: bh block size, else 0)
//!     34     …  projection parameters (f64), then tables h × 2^tau × d_out (f64)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use lookupffn_core::lookup::{HashTables, LookupConfig, LookupFfn, Variant};
use lookupffn_core::proj::{ProjKind, Projection};

pub const MAGIC: [u8; 4] = *b"LFFN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 34;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unknown {field} code {code}")]
    UnknownCode { field: &'static str, code: u8 },
    #[error("checkpoint body has {got} values, header implies {want}")]
    Length { got: usize, want: usize },
    #[error(transparent)]
    Layer(#[from] lookupffn_core::Error),
}

fn u32_field(v: usize) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "size exceeds u32"))
}

pub fn write_checkpoint(mut w: impl Write, layer: &LookupFfn) -> Result<(), CheckpointError> {
    let cfg = layer.config();
    let kind = layer.projection().spec().kind();
    let (m, b) = match kind {
        ProjKind::Bh { stages, block } => (stages, block),
        ProjKind::Acdc { depth } => (depth, 0),
        ProjKind::Dense | ProjKind::SignFlip => (0, 0),
    };
    w.write_all(&MAGIC)?;
    for v in [VERSION, u32_field(cfg.d_in)?, u32_field(cfg.d_out)?, u32_field(cfg.h)?, u32_field(cfg.tau)?] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[cfg.variant.code(), kind.code()])?;
    w.write_all(&u32_field(m)?.to_le_bytes())?;
    w.write_all(&u32_field(b)?.to_le_bytes())?;
    for v in layer.projection().params().iter().chain(layer.tables().data()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(CheckpointError::Length {
            got: bytes.len() / 8,
            want: n,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Reads a layer; the neighbor count is set to 1 (it is not stored).
pub fn read_checkpoint(mut r: impl Read) -> Result<LookupFfn, CheckpointError> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    let [d_in, d_out, h, tau] = dims;
    let mut codes = [0u8; 2];
    r.read_exact(&mut codes)?;
    let variant = Variant::from_code(codes[0]).ok_or(CheckpointError::UnknownCode {
        field: "variant",
        code: codes[0],
    })?;
    let (m, b) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let kind = match codes[1] {
        0 => ProjKind::Dense,
        1 => ProjKind::Bh { stages: m, block: b },
        2 => ProjKind::Acdc { depth: m },
        3 => ProjKind::SignFlip,
        code => return Err(CheckpointError::UnknownCode { field: "projection", code }),
    };
    let cfg = LookupConfig::new(d_in, d_out, h, tau).with_variant(variant);
    cfg.validate()?;
    let spec = cfg.projection_spec(kind)?;
    let n_proj = spec.stored_len();
    let n_tab = h * cfg.table_rows() * d_out;
    let mut all = read_f64s(&mut r, n_proj + n_tab)?;
    let tables = all.split_off(n_proj);
    let proj = Projection::from_params(spec, all)?;
    let tables = HashTables::from_vec(&cfg, tables)?;
    Ok(LookupFfn::from_parts(cfg, proj, tables)?)
}

pub fn save(path: &Path, layer: &LookupFfn) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), layer)
}

pub fn load(path: &Path) -> Result<LookupFfn, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
