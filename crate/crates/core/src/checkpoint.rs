//! `CDMW` model checkpoints.
//!
//! Layout (little-endian): magic `CDMW`, u32 version, u8 head tag (0 critic,
//! 1 binary cross-entropy), u16 n_c, u16 n_e, u16 outputs, u16 input H, W, C
//! and the three conv widths; the layer table (u8 count, then per block u8
//! name length, name, u8 rank, u32 dims); u32 parameter count and the f32
//! weights in layer-table order; u8 environment-source tag; u8 held-out flag
//! and u16 label; u8 environment flag followed by the environment block
//! (u32 n_l, u32 n_e, u32 R, u16 label count per environment, packed
//! column-major selection bits); u64 seed; u16 threshold count and f64
//! thresholds.

use std::path::Path;

use crate::binio::{to_u16, to_u32, Reader, Writer};
use crate::config::EnvSource;
use crate::envmask::EnvironmentSpec;
use crate::error::Result;
use crate::net::{Architecture, HeadKind, Model};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDMW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub env_source: EnvSource,
    /// Context label withheld from training, in the dataset's full indexing.
    pub holdout: Option<usize>,
    pub environments: Option<EnvironmentSpec>,
    pub seed: u64,
    /// Per-output decision thresholds (baseline heads).
    pub thresholds: Vec<f64>,
}

pub(crate) fn write_environments(w: &mut Writer, spec: &EnvironmentSpec) -> Result<()> {
    w.u32(to_u32(spec.n_l, "n_l")?);
    w.u32(to_u32(spec.n_e(), "n_e")?);
    w.u32(to_u32(spec.max_labels, "R")?);
    for s in spec.sizes() {
        w.u16(to_u16(s, "environment size")?);
    }
    w.bits(&spec.v_column_major());
    Ok(())
}

fn read_environments(r: &mut Reader) -> Result<EnvironmentSpec> {
    let what = "environment block";
    let n_l = r.u32(what)? as usize;
    let n_e = r.u32(what)? as usize;
    let max_labels = r.u32(what)? as usize;
    let sizes: Vec<usize> = (0..n_e).map(|_| Ok(r.u16(what)? as usize)).collect::<Result<_>>()?;
    let bits = r.bits(n_l * n_e, what)?;
    let spec = EnvironmentSpec::from_column_major(n_l, n_e, max_labels, &bits)
        .map_err(|e| r.malformed(format!("{what}: {e}")))?;
    if spec.sizes() != sizes {
        return Err(r.malformed("environment sizes disagree with the selection bits"));
    }
    Ok(spec)
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let m = &ck.model;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let (tag, n_c, n_e) = match *m.head() {
        HeadKind::Critic { n_c, n_e } => (0u8, n_c, n_e),
        HeadKind::Bxent { .. } => (1u8, 0, 0),
    };
    w.u8(tag);
    w.u16(to_u16(n_c, "n_c")?);
    w.u16(to_u16(n_e, "n_e")?);
    w.u16(to_u16(m.outputs(), "outputs")?);
    let a = m.arch();
    for v in [a.in_h, a.in_w, a.in_c, a.widths[0], a.widths[1], a.widths[2]] {
        w.u16(to_u16(v, "architecture")?);
    }
    w.u8(m.blocks().len() as u8);
    for b in m.blocks() {
        w.u8(b.name.len() as u8);
        w.bytes(b.name.as_bytes());
        w.u8(b.shape.len() as u8);
        for &d in &b.shape {
            w.u32(to_u32(d, "layer dimension")?);
        }
    }
    w.u32(to_u32(m.num_params(), "parameter count")?);
    for &p in m.params() {
        w.f32(p);
    }
    w.u8(ck.env_source.tag());
    match ck.holdout {
        Some(h) => {
            w.u8(1);
            w.u16(to_u16(h, "held-out label")?);
        }
        None => {
            w.u8(0);
            w.u16(0);
        }
    }
    match &ck.environments {
        Some(spec) => {
            w.u8(1);
            write_environments(&mut w, spec)?;
        }
        None => w.u8(0),
    }
    w.u64(ck.seed);
    w.u16(to_u16(ck.thresholds.len(), "threshold count")?);
    for &t in &ck.thresholds {
        w.f64(t);
    }
    w.finish(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::open(path)?;
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let tag = r.u8("header")?;
    let n_c = r.u16("header")? as usize;
    let n_e = r.u16("header")? as usize;
    let outputs = r.u16("header")? as usize;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u16("header")? as usize;
    }
    let arch = Architecture {
        in_h: dims[0],
        in_w: dims[1],
        in_c: dims[2],
        widths: [dims[3], dims[4], dims[5]],
    };
    let head = match tag {
        0 => HeadKind::Critic { n_c, n_e },
        1 => HeadKind::Bxent { outputs },
        t => return Err(r.malformed(format!("unknown head tag {t}"))),
    };
    if head.outputs() != outputs {
        return Err(r.malformed("output count disagrees with the head shape"));
    }
    let reference = Model::<f32>::zeros(arch, head).map_err(|e| r.malformed(e.to_string()))?;
    let n_blocks = r.u8("layer table")? as usize;
    if n_blocks != reference.blocks().len() {
        return Err(r.malformed(format!("{n_blocks} layers, expected {}", reference.blocks().len())));
    }
    for b in reference.blocks() {
        let len = r.u8("layer table")? as usize;
        let name = r.bytes(len, "layer table")?;
        let rank = r.u8("layer table")? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| Ok(r.u32("layer table")? as usize))
            .collect::<Result<_>>()?;
        if name != b.name.as_bytes() || shape != b.shape {
            return Err(r.malformed(format!(
                "layer {} has shape {shape:?}, expected {} {:?}",
                String::from_utf8_lossy(&name),
                b.name,
                b.shape
            )));
        }
    }
    let count = r.u32("weights")? as usize;
    if count != reference.num_params() {
        return Err(r.malformed(format!("{count} weights, expected {}", reference.num_params())));
    }
    let params = r.f32s(count, "weights")?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(r.malformed("non-finite weight"));
    }
    let model = Model::from_params(arch, head, params).map_err(|e| r.malformed(e.to_string()))?;
    let env_tag = r.u8("environment source")?;
    let env_source = EnvSource::from_tag(env_tag).ok_or_else(|| r.malformed(format!("environment source tag {env_tag}")))?;
    let has_holdout = r.u8("held-out label")?;
    let h = r.u16("held-out label")? as usize;
    let holdout = match has_holdout {
        0 => None,
        1 => Some(h),
        f => return Err(r.malformed(format!("held-out flag {f}"))),
    };
    let environments = match r.u8("environment flag")? {
        0 => None,
        1 => Some(read_environments(&mut r)?),
        f => return Err(r.malformed(format!("environment flag {f}"))),
    };
    let seed = r.u64("seed")?;
    let n_t = r.u16("thresholds")? as usize;
    let thresholds = r.f64s(n_t, "thresholds")?;
    r.expect_end()?;
    Ok(Checkpoint {
        model,
        env_source,
        holdout,
        environments,
        seed,
        thresholds,
    })
}
