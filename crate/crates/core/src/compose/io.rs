//! `CDCK` compressed-representation files.
//!
//! Layout: magic `CDCK`, u32 version, u32 record count, u16 n_c, u16 n_e,
//! u16 k; then per record u32 sample id and the f32 factors `U_k`
//! (row-major `n_c x k`), `S_k`, `V_k` (row-major `k x n_e`).

use std::path::Path;

use super::CompressedRep;
use crate::binio::{to_u16, to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const COMPRESSED_MAGIC: &[u8; 4] = b"CDCK";
pub const COMPRESSED_VERSION: u32 = 1;

pub fn write_compressed(records: &[(usize, CompressedRep)], path: &Path) -> Result<()> {
    let (n_c, n_e, k) = records.first().map_or((0, 0, 0), |(_, c)| (c.n_c(), c.n_e(), c.k()));
    let mut w = Writer::new();
    w.bytes(COMPRESSED_MAGIC);
    w.u32(COMPRESSED_VERSION);
    w.u32(to_u32(records.len(), "record count")?);
    w.u16(to_u16(n_c, "n_c")?);
    w.u16(to_u16(n_e, "n_e")?);
    w.u16(to_u16(k, "k")?);
    for (id, c) in records {
        if (c.n_c(), c.n_e(), c.k()) != (n_c, n_e, k) {
            return Err(Error::Shape(format!("record {id} differs in shape")));
        }
        w.u32(to_u32(*id, "sample id")?);
        for v in c.flatten() {
            w.f32(v as f32);
        }
    }
    w.finish(path)
}

pub fn read_compressed(path: &Path) -> Result<Vec<(usize, CompressedRep)>> {
    let mut r = Reader::open(path)?;
    r.magic(COMPRESSED_MAGIC)?;
    r.version(COMPRESSED_VERSION)?;
    let count = r.u32("header")? as usize;
    let n_c = r.u16("header")? as usize;
    let n_e = r.u16("header")? as usize;
    let k = r.u16("header")? as usize;
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let what = format!("record {n} of {count}");
        let id = r.u32(&what)? as usize;
        let vals: Vec<f64> = r.f32s(k * (n_c + n_e + 1), &what)?.into_iter().map(f64::from).collect();
        let (u, rest) = vals.split_at(n_c * k);
        let (s, v) = rest.split_at(k);
        let bad = |e: Error| r.malformed(format!("{what}: {e}"));
        out.push((
            id,
            CompressedRep {
                u: Matrix::from_vec(n_c, k, u.to_vec()).map_err(bad)?,
                s: s.to_vec(),
                v: Matrix::from_vec(k, n_e, v.to_vec()).map_err(bad)?,
            },
        ));
    }
    r.expect_end()?;
    Ok(out)
}
