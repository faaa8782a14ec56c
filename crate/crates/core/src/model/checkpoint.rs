//! Binary checkpoint: magic, config hash, step, architecture, then the
//! student, teacher and both optimizer moment arrays as little-endian f64.

use std::fs;
use std::path::Path;

use super::params::{ModelArch, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"T2S1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub step: u64,
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    ck.student.same_layout(&ck.teacher)?;
    let n = ck.student.len();
    if ck.first_moment.len() != n || ck.second_moment.len() != n {
        return Err(Error::ShapeMismatch("moment arrays do not match parameters".into()));
    }
    let mut buf = Vec::with_capacity(4 + 8 * (10 + 4 * n));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut buf, ck.config_hash);
    put_u64(&mut buf, ck.step);
    let a = &ck.student.arch;
    for v in [a.classes, a.enc1, a.enc2, a.feat_dim, a.proj_hidden, a.embed_dim, n] {
        put_u64(&mut buf, v as u64);
    }
    put_f64s(&mut buf, &ck.student.data);
    put_f64s(&mut buf, &ck.teacher.data);
    put_f64s(&mut buf, &ck.first_moment);
    put_f64s(&mut buf, &ck.second_moment);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let config_hash = r.u64()?;
    let step = r.u64()?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let arch = ModelArch {
        classes: dims[0],
        enc1: dims[1],
        enc2: dims[2],
        feat_dim: dims[3],
        proj_hidden: dims[4],
        embed_dim: dims[5],
    };
    let n = dims[6];
    if ModelParams::zeros(&arch).len() != n {
        return Err(Error::format(path, "parameter count disagrees with architecture"));
    }
    let student = ModelParams {
        arch: arch.clone(),
        data: r.f64s(n)?,
    };
    let teacher = ModelParams { arch, data: r.f64s(n)? };
    let first_moment = r.f64s(n)?;
    let second_moment = r.f64s(n)?;
    if r.pos != buf.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        config_hash,
        step,
        student,
        teacher,
        first_moment,
        second_moment,
    })
}
