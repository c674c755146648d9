//! Binary raster formats: PGM (P5), Middlebury `.flo`, raw float depth grids
//! and signed 16-bit residuals.

use crate::error::{Error, Result};
use crate::pwarp::{DepthField, FlowField, LumaRaster, Residual};

const FLO_MAGIC: &[u8; 4] = b"PIEH";

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub fn write_pgm(r: &LumaRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.samples);
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<LumaRaster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(invalid("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(invalid("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| invalid(format!("bad PGM {what} `{t}`")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(invalid(format!("PGM maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    let data = bytes.get(pos + 1..).unwrap_or_default();
    if data.len() != w * h {
        return Err(invalid(format!("PGM has {} sample bytes, expected {}", data.len(), w * h)));
    }
    LumaRaster::new(w, h, data.to_vec())
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or_else(|| invalid("truncated header"))?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn f32s(bytes: &[u8], count: usize, what: &str) -> Result<Vec<f32>> {
    if bytes.len() != count * 4 {
        return Err(invalid(format!("{what} has {} payload bytes, expected {}", bytes.len(), count * 4)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

pub fn write_flo(f: &FlowField) -> Vec<u8> {
    let mut out = FLO_MAGIC.to_vec();
    out.extend((f.width as u32).to_le_bytes());
    out.extend((f.height as u32).to_le_bytes());
    for (u, v) in f.u.iter().zip(&f.v) {
        out.extend((*u as f32).to_le_bytes());
        out.extend((*v as f32).to_le_bytes());
    }
    out
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.get(..4) != Some(FLO_MAGIC) {
        return Err(invalid("missing .flo magic `PIEH`"));
    }
    let (w, h) = (u32_at(bytes, 4)? as usize, u32_at(bytes, 8)? as usize);
    let vals = f32s(&bytes[12..], 2 * w * h, ".flo")?;
    let u = vals.iter().step_by(2).map(|&x| x as f64).collect();
    let v = vals.iter().skip(1).step_by(2).map(|&x| x as f64).collect();
    FlowField::new(w, h, u, v)
}

/// `u32 cols, u32 rows` followed by row-major `f32` depths, little-endian.
pub fn write_depth_grid(d: &DepthField) -> Vec<u8> {
    let mut out = (d.cols as u32).to_le_bytes().to_vec();
    out.extend((d.rows as u32).to_le_bytes());
    for v in &d.values {
        out.extend((*v as f32).to_le_bytes());
    }
    out
}

pub fn read_depth_grid(bytes: &[u8]) -> Result<DepthField> {
    let (cols, rows) = (u32_at(bytes, 0)? as usize, u32_at(bytes, 4)? as usize);
    let vals = f32s(&bytes[8..], cols * rows, "depth grid")?;
    DepthField::new(cols, rows, vals.into_iter().map(f64::from).collect())
}

/// `u32 width, u32 height` followed by row-major `i16` samples, little-endian.
pub fn write_residual(r: &Residual) -> Vec<u8> {
    let mut out = (r.width as u32).to_le_bytes().to_vec();
    out.extend((r.height as u32).to_le_bytes());
    for v in &r.data {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn read_residual(bytes: &[u8]) -> Result<Residual> {
    let (w, h) = (u32_at(bytes, 0)? as usize, u32_at(bytes, 4)? as usize);
    let payload = &bytes[8..];
    if payload.len() != 2 * w * h {
        return Err(invalid(format!("residual has {} payload bytes, expected {}", payload.len(), 2 * w * h)));
    }
    let data = payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(Residual { width: w, height: h, data })
}
