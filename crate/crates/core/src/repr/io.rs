//! `CDTS` template files and `CDIR-REP` representation dumps.
//!
//! Template layout: magic `CDTS`, u32 version, u16 n_c, u16 n_e, f64 Ebar
//! (row-major), f64 T, u8 threshold flag followed by `n_c` f64 thresholds
//! when set, then two id lists (u32 count, u32 ids) for the template and
//! threshold samples.
//!
//! Dump layout: magic `CDIR-REP`, u32 version, u32 record count, u16 n_c,
//! u16 n_e, u16 n_l; then per record u32 sample id, `n_c*n_e` f32 values of
//! D (row-major), class mask bits and context mask bits (LSB-first).

use std::path::Path;

use super::TemplateSet;
use crate::binio::{to_u16, to_u32, Reader, Writer};
use crate::error::Result;
use crate::numerics::Matrix;

pub const TEMPLATE_MAGIC: &[u8; 4] = b"CDTS";
pub const TEMPLATE_VERSION: u32 = 1;
pub const REP_MAGIC: &[u8; 8] = b"CDIR-REP";
pub const REP_VERSION: u32 = 1;

fn write_ids(w: &mut Writer, ids: &[usize]) -> Result<()> {
    w.u32(to_u32(ids.len(), "id count")?);
    for &id in ids {
        w.u32(to_u32(id, "sample id")?);
    }
    Ok(())
}

fn read_ids(r: &mut Reader, what: &str) -> Result<Vec<usize>> {
    let n = r.u32(what)? as usize;
    (0..n).map(|_| Ok(r.u32(what)? as usize)).collect()
}

pub fn write_templates(ts: &TemplateSet, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(TEMPLATE_MAGIC);
    w.u32(TEMPLATE_VERSION);
    w.u16(to_u16(ts.n_c(), "n_c")?);
    w.u16(to_u16(ts.n_e(), "n_e")?);
    for &v in ts.ebar.data().iter().chain(ts.templates.data()) {
        w.f64(v);
    }
    w.u8(u8::from(ts.has_thresholds()));
    if ts.has_thresholds() {
        for &t in &ts.thresholds {
            w.f64(t);
        }
    }
    write_ids(&mut w, &ts.template_ids)?;
    write_ids(&mut w, &ts.threshold_ids)?;
    w.finish(path)
}

pub fn read_templates(path: &Path) -> Result<TemplateSet> {
    let mut r = Reader::open(path)?;
    r.magic(TEMPLATE_MAGIC)?;
    r.version(TEMPLATE_VERSION)?;
    let n_c = r.u16("header")? as usize;
    let n_e = r.u16("header")? as usize;
    let ebar = r.f64s(n_c * n_e, "environment expectations")?;
    let t = r.f64s(n_c * n_e, "templates")?;
    let ebar = Matrix::from_vec(n_c, n_e, ebar).map_err(|e| r.malformed(e.to_string()))?;
    let templates = Matrix::from_vec(n_c, n_e, t).map_err(|e| r.malformed(e.to_string()))?;
    let thresholds = match r.u8("threshold flag")? {
        0 => Vec::new(),
        1 => r.f64s(n_c, "thresholds")?,
        f => return Err(r.malformed(format!("threshold flag {f}"))),
    };
    let template_ids = read_ids(&mut r, "template ids")?;
    let threshold_ids = read_ids(&mut r, "threshold ids")?;
    r.expect_end()?;
    Ok(TemplateSet {
        ebar,
        templates,
        thresholds,
        template_ids,
        threshold_ids,
    })
}

/// One dumped representation with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RepRecord {
    pub id: usize,
    pub d: Matrix,
    pub classes: Vec<bool>,
    pub context: Vec<bool>,
}

impl RepRecord {
    /// Rounds the stored values to the on-disk precision.
    pub fn new(id: usize, d: &Matrix, classes: Vec<bool>, context: Vec<bool>) -> Result<Self> {
        let rounded = d.data().iter().map(|&v| f64::from(v as f32)).collect();
        Ok(RepRecord {
            id,
            d: Matrix::from_vec(d.rows(), d.cols(), rounded)?,
            classes,
            context,
        })
    }
}

pub fn write_reps(records: &[RepRecord], path: &Path) -> Result<()> {
    let first = records.first();
    let (n_c, n_e, n_l) = first.map_or((0, 0, 0), |r| (r.d.rows(), r.d.cols(), r.context.len()));
    let mut w = Writer::new();
    w.bytes(REP_MAGIC);
    w.u32(REP_VERSION);
    w.u32(to_u32(records.len(), "record count")?);
    w.u16(to_u16(n_c, "n_c")?);
    w.u16(to_u16(n_e, "n_e")?);
    w.u16(to_u16(n_l, "n_l")?);
    for rec in records {
        if rec.d.rows() != n_c || rec.d.cols() != n_e || rec.classes.len() != n_c || rec.context.len() != n_l {
            return Err(crate::Error::Shape(format!("record {} differs in shape", rec.id)));
        }
        w.u32(to_u32(rec.id, "sample id")?);
        for &v in rec.d.data() {
            w.f32(v as f32);
        }
        w.bits(&rec.classes);
        w.bits(&rec.context);
    }
    w.finish(path)
}

pub fn read_reps(path: &Path) -> Result<Vec<RepRecord>> {
    let mut r = Reader::open(path)?;
    r.magic(REP_MAGIC)?;
    r.version(REP_VERSION)?;
    let count = r.u32("header")? as usize;
    let n_c = r.u16("header")? as usize;
    let n_e = r.u16("header")? as usize;
    let n_l = r.u16("header")? as usize;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let what = format!("record {k} of {count}");
        let id = r.u32(&what)? as usize;
        let d: Vec<f64> = r.f32s(n_c * n_e, &what)?.into_iter().map(f64::from).collect();
        let d = Matrix::from_vec(n_c, n_e, d).map_err(|e| r.malformed(format!("{what}: {e}")))?;
        let classes = r.bits(n_c, &what)?;
        let context = r.bits(n_l, &what)?;
        out.push(RepRecord {
            id,
            d,
            classes,
            context,
        });
    }
    r.expect_end()?;
    Ok(out)
}
