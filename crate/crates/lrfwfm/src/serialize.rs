//! Binary model format, little-endian throughout.
//!
//! Layout:
//!
//! ```text
//! magic   8 bytes  "LRFWFM01"
//! kind    u32      0 = FM, 1 = dense FwFM, 2 = pruned FwFM, 3 = DPLR
//! m       u32      field count
//! m_c     u32      context field count
//! k       u32      embedding dimension
//! rank    u32      DPLR rank, 0 when absent
//! n       u64      total feature count
//! sizes   m * u32  per-field vocabulary sizes
//! b0      f32
//! b       n * f32
//! W       n*k * f32, row-major
//! payload kind-specific:
//!   dense : m(m-1)/2 * f32, upper triangle row-major
//!   pruned: u32 q, then q * { u32 i, u32 j, f32 value }, sorted by (i, j)
//!   dplr  : rank*m * f32 (U, row-major), then rank * f32 (e)
//! ```
//!
//! The derived DPLR diagonal is recomputed at load time, never stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DenseSym, Dplr, InteractionSpec, ModelParams, PrunedSparse};
use crate::schema::FieldSchema;

pub const MAGIC: &[u8; 8] = b"LRFWFM01";

pub const KIND_FM: u32 = 0;
pub const KIND_DENSE: u32 = 1;
pub const KIND_PRUNED: u32 = 2;
pub const KIND_DPLR: u32 = 3;

pub fn kind_code(interaction: &InteractionSpec) -> u32 {
    match interaction {
        InteractionSpec::FmImplicit => KIND_FM,
        InteractionSpec::DenseSym(_) => KIND_DENSE,
        InteractionSpec::PrunedSparse(_) => KIND_PRUNED,
        InteractionSpec::Dplr(_) => KIND_DPLR,
    }
}

pub fn kind_name(code: u32) -> &'static str {
    match code {
        KIND_FM => "fm",
        KIND_DENSE => "fwfm",
        KIND_PRUNED => "pruned",
        KIND_DPLR => "dplr",
        _ => "unknown",
    }
}

struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f32_slice(&mut self, vs: &[f32]) -> Result<()> {
        for &v in vs {
            self.f32(v)?;
        }
        Ok(())
    }
}

struct LeReader<R: Read> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }
    fn f32(&mut self) -> Result<f32> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(f32::from_le_bytes(buf))
    }
    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0f32; count];
        let mut buf = vec![0u8; count * 4];
        self.inner.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            out[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(out)
    }
}

pub fn write_model<W: Write>(params: &ModelParams, writer: W) -> Result<()> {
    let mut w = LeWriter { inner: writer };
    w.inner.write_all(MAGIC)?;
    w.u32(kind_code(&params.interaction))?;
    let m = params.num_fields() as u32;
    w.u32(m)?;
    w.u32(params.num_context() as u32)?;
    w.u32(params.k as u32)?;
    let rank = match &params.interaction {
        InteractionSpec::Dplr(d) => d.rank() as u32,
        _ => 0,
    };
    w.u32(rank)?;
    w.u64(params.n() as u64)?;
    for f in params.schema.fields() {
        w.u32(f.vocab_size)?;
    }
    w.f32(params.b0)?;
    w.f32_slice(&params.b)?;
    w.f32_slice(&params.w)?;
    match &params.interaction {
        InteractionSpec::FmImplicit => {}
        InteractionSpec::DenseSym(dense) => w.f32_slice(dense.upper())?,
        InteractionSpec::PrunedSparse(pruned) => {
            w.u32(pruned.keep_count() as u32)?;
            for &(i, j, v) in pruned.entries() {
                w.u32(i)?;
                w.u32(j)?;
                w.f32(v)?;
            }
        }
        InteractionSpec::Dplr(dplr) => {
            w.f32_slice(dplr.u())?;
            w.f32_slice(dplr.e())?;
        }
    }
    w.inner.flush()?;
    Ok(())
}

/// Read a model. The returned schema is a placeholder carrying only the
/// counts stored in the file; attach a vocabulary file before encoding rows.
pub fn read_model<R: Read>(reader: R) -> Result<ModelParams> {
    let mut r = LeReader { inner: reader };
    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, not a model file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let kind = r.u32()?;
    if kind > KIND_DPLR {
        return Err(Error::Format(format!("unknown model kind {kind}")));
    }
    let m = r.u32()? as usize;
    let m_c = r.u32()? as usize;
    let k = r.u32()? as usize;
    let rank = r.u32()? as usize;
    let n = r.u64()? as usize;
    let mut sizes = Vec::with_capacity(m);
    for _ in 0..m {
        sizes.push(r.u32()?);
    }
    if sizes.iter().map(|&s| s as u64).sum::<u64>() != n as u64 {
        return Err(Error::Format(format!(
            "vocabulary sizes sum to {} but header says n={n}",
            sizes.iter().map(|&s| s as u64).sum::<u64>()
        )));
    }
    let schema = FieldSchema::placeholder(m, m_c, &sizes)?;
    let b0 = r.f32()?;
    let b = r.f32_vec(n)?;
    let w = r.f32_vec(n * k)?;
    let interaction = match kind {
        KIND_FM => InteractionSpec::FmImplicit,
        KIND_DENSE => {
            let tri = r.f32_vec(m * (m - 1) / 2)?;
            InteractionSpec::DenseSym(DenseSym::from_upper(m, tri)?)
        }
        KIND_PRUNED => {
            let q = r.u32()? as usize;
            let mut entries = Vec::with_capacity(q);
            for _ in 0..q {
                let i = r.u32()?;
                let j = r.u32()?;
                let v = r.f32()?;
                entries.push((i, j, v));
            }
            for win in entries.windows(2) {
                if (win[0].0, win[0].1) >= (win[1].0, win[1].1) {
                    return Err(Error::Format("pruned entries are not sorted".into()));
                }
            }
            InteractionSpec::PrunedSparse(PrunedSparse::new(m, entries)?)
        }
        KIND_DPLR => {
            if rank == 0 {
                return Err(Error::Format("DPLR model with rank 0".into()));
            }
            let u = r.f32_vec(rank * m)?;
            let e = r.f32_vec(rank)?;
            InteractionSpec::Dplr(Dplr::new(rank, m, u, e)?)
        }
        _ => unreachable!(),
    };
    ModelParams::new(schema, k, b0, b, w, interaction)
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    write_model(params, BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_model(BufReader::new(file))
}

pub fn model_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_model(params, &mut buf)?;
    Ok(buf)
}

/// Replace a loaded model's placeholder schema with a full one from a
/// vocabulary file, after checking the shapes agree.
pub fn attach_vocab(params: ModelParams, schema: FieldSchema) -> Result<ModelParams> {
    if !params.schema.shape_matches(&schema) {
        return Err(Error::Data(
            "vocabulary file does not match the model (field counts or vocab sizes differ)".into(),
        ));
    }
    ModelParams::new(schema, params.k, params.b0, params.b, params.w, params.interaction)
}
