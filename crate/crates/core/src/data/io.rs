//! Directory format: `manifest.txt` plus one binary PPM (P6) image and one
//! binary PGM (P5) label map per sample.

use std::fs;
use std::path::Path;

use super::{Domain, DomainDataset, SegSample};
use crate::error::{Error, Result};
use crate::numerics::{Grid2D, LabelMap, IGNORE};

const MANIFEST: &str = "manifest.txt";

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse a binary PNM header; returns (width, height, payload).
fn read_pnm(path: &Path, magic: &str) -> Result<(usize, usize, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&raw[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    if tokens[0] != magic {
        return Err(Error::format(path, format!("expected magic {magic}, found {}", tokens[0])));
    }
    let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::format(path, format!("bad number `{s}`"))) };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported")));
    }
    let payload = raw.get(pos..).unwrap_or_default().to_vec();
    Ok((w, h, payload))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "C={} H={} W={} domain={} n={}\n",
        ds.classes,
        ds.height(),
        ds.width(),
        ds.domain.as_str(),
        ds.len()
    );
    for (k, s) in ds.samples.iter().enumerate() {
        let (img, lbl) = (format!("img_{k}.ppm"), format!("lbl_{k}.pgm"));
        let bytes: Vec<u8> = s.image.data.iter().map(|v| quantize(*v)).collect();
        write_pnm(&dir.join(&img), "P6", s.image.width, s.image.height, &bytes)?;
        write_pnm(&dir.join(&lbl), "P5", s.label.width, s.label.height, &s.label.data)?;
        manifest.push_str(&format!("{img} {lbl}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| {
        Error::io(
            &mpath,
            std::io::Error::new(e.kind(), format!("missing or unreadable manifest: {e}")),
        )
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(&mpath, "empty manifest"))?;
    let mut fields = std::collections::HashMap::new();
    for kv in header.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::format(&mpath, format!("bad header field `{kv}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::format(&mpath, format!("header lacks `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(&mpath, format!("`{k}` is not an integer")))
    };
    let (classes, h, w, n) = (num("C")?, num("H")?, num("W")?, num("n")?);
    let domain = Domain::parse(get("domain")?).ok_or_else(|| Error::format(&mpath, "unknown domain"))?;

    let mut samples = Vec::with_capacity(n);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (img, lbl) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (dir.join(a), dir.join(b)),
            _ => return Err(Error::format(&mpath, format!("bad sample line `{line}`"))),
        };
        let (iw, ih, ibytes) = read_pnm(&img, "P6")?;
        let (lw, lh, lbytes) = read_pnm(&lbl, "P5")?;
        if (iw, ih) != (w, h) || (lw, lh) != (w, h) {
            return Err(Error::format(&lbl, format!("dimensions {iw}x{ih} / {lw}x{lh} differ from manifest {w}x{h}")));
        }
        if ibytes.len() < w * h * 3 || lbytes.len() < w * h {
            return Err(Error::format(&img, "truncated payload"));
        }
        if let Some(bad) = lbytes[..w * h].iter().find(|&&v| v != IGNORE && v as usize >= classes) {
            return Err(Error::format(&lbl, format!("class index {bad} >= C={classes}")));
        }
        let image = Grid2D::from_vec(h, w, 3, ibytes[..w * h * 3].iter().map(|b| *b as f64 / 255.0).collect())?;
        let label = LabelMap {
            height: h,
            width: w,
            data: lbytes[..w * h].to_vec(),
        };
        samples.push(SegSample { image, label });
    }
    if samples.len() != n {
        return Err(Error::format(&mpath, format!("manifest declares {n} samples, lists {}", samples.len())));
    }
    DomainDataset::new(samples, domain, classes)
}
