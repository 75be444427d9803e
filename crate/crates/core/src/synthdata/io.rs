//! `CDIR` dataset files.
//!
//! Layout (little-endian): magic `CDIR`, u32 version, u32 sample count,
//! u16 H, u16 W, u16 C, u16 n_c, u16 n_l, then the split-tag table (u8 entry
//! count; per entry u8 tag, u8 name length, ASCII name). Each sample follows
//! as `H*W*C` f32 pixels, `ceil(n_c/8)` class-mask bytes, `ceil(n_l/8)`
//! context-mask bytes (LSB-first) and a u8 split tag.

use std::path::Path;

use super::{Dataset, Split};
use crate::binio::{to_u16, to_u32, Reader, Writer};
use crate::error::Result;

pub const DATASET_MAGIC: &[u8; 4] = b"CDIR";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(to_u32(ds.len(), "sample count")?);
    w.u16(to_u16(ds.height, "height")?);
    w.u16(to_u16(ds.width, "width")?);
    w.u16(to_u16(ds.channels, "channels")?);
    w.u16(to_u16(ds.n_c, "n_c")?);
    w.u16(to_u16(ds.n_l, "n_l")?);
    w.u8(Split::ALL.len() as u8);
    for s in Split::ALL {
        w.u8(s as u8);
        w.u8(s.name().len() as u8);
        w.bytes(s.name().as_bytes());
    }
    for k in 0..ds.len() {
        for &p in ds.image(k) {
            w.f32(p);
        }
        w.bits(ds.classes(k));
        w.bits(ds.context(k));
        w.u8(ds.split(k) as u8);
    }
    w.finish(path)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = Reader::open(path)?;
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let count = r.u32("header")? as usize;
    let height = r.u16("header")? as usize;
    let width = r.u16("header")? as usize;
    let channels = r.u16("header")? as usize;
    let n_c = r.u16("header")? as usize;
    let n_l = r.u16("header")? as usize;
    let n_tags = r.u8("split-tag table")?;
    let mut known = Vec::new();
    for _ in 0..n_tags {
        let tag = r.u8("split-tag table")?;
        let len = r.u8("split-tag table")? as usize;
        let name = r.bytes(len, "split-tag table")?;
        match Split::from_tag(tag) {
            Some(s) if s.name().as_bytes() == name.as_slice() => known.push(tag),
            _ => {
                return Err(r.malformed(format!(
                    "unknown split tag {tag} ({})",
                    String::from_utf8_lossy(&name)
                )))
            }
        }
    }

    let image_len = height * width * channels;
    let mut pixels = Vec::with_capacity(count * image_len);
    let mut classes = Vec::with_capacity(count * n_c);
    let mut context = Vec::with_capacity(count * n_l);
    let mut splits = Vec::with_capacity(count);
    for k in 0..count {
        let what = format!("sample {k} of {count}");
        pixels.extend(r.f32s(image_len, &what)?);
        classes.extend(r.bits(n_c, &what)?);
        context.extend(r.bits(n_l, &what)?);
        let tag = r.u8(&what)?;
        match Split::from_tag(tag).filter(|_| known.contains(&tag)) {
            Some(s) => splits.push(s),
            None => return Err(r.malformed(format!("sample {k} has split tag {tag}"))),
        }
    }
    r.expect_end()?;
    Dataset::from_parts(height, width, channels, n_c, n_l, pixels, classes, context, splits)
}
