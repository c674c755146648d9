//! Partitioning-adaptive warping.
//!
//! The motion field is averaged over blocks whose size follows the
//! predicted QT depth: depth `k` uses `128 >> k` pixel blocks, and a
//! fractional depth `q` blends the two neighbouring levels with bracket
//! weights `(k+1-q, q-k)`. The reference frame is then backward-warped with
//! the adapted field and subtracted from the current frame.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::FramePartition;
use crate::partition::GRID;

const CTU_SIZE: usize = crate::partition::CTU_SIZE as usize;
const CELL: usize = crate::partition::CELL as usize;

/// Depths are clamped below this so that the deepest bracket is `[2, 3)`.
pub const MAX_DEPTH: f64 = 3.0 - 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::GeometryMismatch(format!("flow components do not match {width}x{height}")));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("flow contains non-finite values".into()));
        }
        Ok(FlowField { width, height, u, v })
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Replicate-pads to the next multiple of 128 in both directions.
    pub fn padded(&self) -> FlowField {
        let (pw, ph) = (pad_to_ctu(self.width), pad_to_ctu(self.height));
        let mut out = FlowField::uniform(pw, ph, 0.0, 0.0);
        for y in 0..ph {
            let sy = y.min(self.height - 1);
            for x in 0..pw {
                let (u, v) = self.at(x.min(self.width - 1), sy);
                out.u[y * pw + x] = u;
                out.v[y * pw + x] = v;
            }
        }
        out
    }

    pub fn cropped(&self, width: usize, height: usize) -> FlowField {
        let pick = |c: &[f64]| (0..height).flat_map(|y| c[y * self.width..y * self.width + width].to_vec()).collect();
        FlowField { width, height, u: pick(&self.u), v: pick(&self.v) }
    }
}

fn pad_to_ctu(n: usize) -> usize {
    n.div_ceil(CTU_SIZE) * CTU_SIZE
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaRaster {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl LumaRaster {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if samples.len() != width * height || width == 0 || height == 0 {
            return Err(Error::GeometryMismatch(format!("{} samples for a {width}x{height} raster", samples.len())));
        }
        Ok(LumaRaster { width, height, samples })
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }
}

/// Real-valued raster (warp output).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Signed residual samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i16>,
}

/// Real-valued QT depth per 4x4 cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl DepthField {
    pub fn new(cols: usize, rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != cols * rows {
            return Err(Error::GeometryMismatch(format!("{} depths for {cols}x{rows} cells", values.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("depth contains non-finite values".into()));
        }
        Ok(DepthField { cols, rows, values })
    }

    pub fn uniform(cols: usize, rows: usize, q: f64) -> Self {
        DepthField { cols, rows, values: vec![q; cols * rows] }
    }

    /// Integer QT depths of a frame's partition maps, over the padded frame.
    pub fn from_frame(frame: &FramePartition) -> Self {
        let (cols, rows) = (frame.cols() * GRID, frame.rows() * GRID);
        let mut values = vec![0.0; cols * rows];
        for (i, map) in frame.ctus.iter().enumerate() {
            let (cr, cc) = (i / frame.cols(), i % frame.cols());
            for r in 0..GRID {
                for c in 0..GRID {
                    values[(cr * GRID + r) * cols + cc * GRID + c] = map.qd[(r, c)] as f64;
                }
            }
        }
        DepthField { cols, rows, values }
    }

    /// Clamped depth at pixel (`x`, `y`) (nearest-neighbour upsampling).
    pub fn at_pixel(&self, x: usize, y: usize) -> f64 {
        self.values[(y / CELL) * self.cols + x / CELL].clamp(0.0, MAX_DEPTH)
    }
}

/// Block means over `128 >> k` pixel blocks, broadcast back to the pixels.
pub fn pool_flow(flow: &FlowField, k: usize) -> Result<FlowField> {
    if k > 3 {
        return Err(Error::InvalidInput(format!("pooling level must be in 0..=3, got {k}")));
    }
    if !flow.width.is_multiple_of(CTU_SIZE) || !flow.height.is_multiple_of(CTU_SIZE) || flow.width == 0 || flow.height == 0 {
        return Err(Error::InvalidInput(format!(
            "flow {}x{} is not padded to a multiple of {CTU_SIZE}",
            flow.width, flow.height
        )));
    }
    let b = CTU_SIZE >> k;
    let mut out = FlowField::uniform(flow.width, flow.height, 0.0, 0.0);
    let n = (b * b) as f64;
    for by in (0..flow.height).step_by(b) {
        for bx in (0..flow.width).step_by(b) {
            let (mut su, mut sv) = (0.0, 0.0);
            for y in by..by + b {
                let row = y * flow.width;
                su += flow.u[row + bx..row + bx + b].iter().sum::<f64>();
                sv += flow.v[row + bx..row + bx + b].iter().sum::<f64>();
            }
            let (mu, mv) = (su / n, sv / n);
            for y in by..by + b {
                let row = y * flow.width;
                out.u[row + bx..row + bx + b].fill(mu);
                out.v[row + bx..row + bx + b].fill(mv);
            }
        }
    }
    Ok(out)
}

/// Blends the pooled fields per pixel according to the depth. Flows whose
/// size is not a multiple of 128 are replicate-padded, processed and cropped;
/// `depth` must cover the padded size.
pub fn adaptive_flow(flow: &FlowField, depth: &DepthField) -> Result<FlowField> {
    let padded = flow.padded();
    let (pw, ph) = (padded.width, padded.height);
    if depth.cols * CELL < pw || depth.rows * CELL < ph {
        return Err(Error::GeometryMismatch(format!(
            "depth covers {}x{} pixels, flow needs {pw}x{ph}",
            depth.cols * CELL,
            depth.rows * CELL
        )));
    }
    let levels = (0..=3).map(|k| pool_flow(&padded, k)).collect::<Result<Vec<_>>>()?;
    let mut out = FlowField::uniform(pw, ph, 0.0, 0.0);
    for y in 0..ph {
        for x in 0..pw {
            let q = depth.at_pixel(x, y);
            let k = q.floor() as usize;
            let (w0, w1) = (k as f64 + 1.0 - q, q - k as f64);
            let i = y * pw + x;
            out.u[i] = w0 * levels[k].u[i] + w1 * levels[k + 1].u[i];
            out.v[i] = w0 * levels[k].v[i] + w1 * levels[k + 1].v[i];
        }
    }
    Ok(out.cropped(flow.width, flow.height))
}

/// Bilinear sample with coordinates clamped to the border.
fn sample(r: &LumaRaster, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (r.width - 1) as f64);
    let y = y.clamp(0.0, (r.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(r.width - 1), (y0 + 1).min(r.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx, yy| r.at(xx, yy) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward warp: `out(x, y) = ref(x + u, y + v)`.
pub fn warp(reference: &LumaRaster, flow: &FlowField) -> Result<Plane> {
    if reference.width != flow.width || reference.height != flow.height {
        return Err(Error::GeometryMismatch(format!(
            "reference {}x{} vs flow {}x{}",
            reference.width, reference.height, flow.width, flow.height
        )));
    }
    let w = reference.width;
    let mut data = vec![0.0; w * reference.height];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let (u, v) = flow.at(x, y);
            *out = sample(reference, x as f64 + u, y as f64 + v);
        }
    });
    Ok(Plane { width: w, height: reference.height, data })
}

/// `cur - warp(ref, adaptive_flow(flow, depth))`, rounded to integers.
/// Also returns the adapted flow.
pub fn pwarp_residual(
    cur: &LumaRaster,
    reference: &LumaRaster,
    flow: &FlowField,
    depth: &DepthField,
) -> Result<(Residual, FlowField)> {
    if cur.width != reference.width || cur.height != reference.height {
        return Err(Error::GeometryMismatch(format!(
            "current {}x{} vs reference {}x{}",
            cur.width, cur.height, reference.width, reference.height
        )));
    }
    let vp = adaptive_flow(flow, depth)?;
    let aligned = warp(reference, &vp)?;
    let data = cur.samples.iter().zip(&aligned.data).map(|(&c, &a)| (c as f64 - a).round() as i16).collect();
    Ok((Residual { width: cur.width, height: cur.height, data }, vp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> FlowField {
        let u = (0..w * h).map(|i| if (i % w + i / w).is_multiple_of(2) { 1.0 } else { -1.0 }).collect();
        let v = (0..w * h).map(|i| (i % 7) as f64 * 0.25).collect();
        FlowField::new(w, h, u, v).unwrap()
    }

    fn ramp(w: usize, h: usize) -> LumaRaster {
        LumaRaster::new(w, h, (0..w * h).map(|i| (i % w) as u8).collect()).unwrap()
    }

    #[test]
    fn pooling_matches_direct_block_means() {
        let f = checker(128, 256);
        let p = pool_flow(&f, 3).unwrap();
        for (bx, by) in [(0, 0), (16, 32), (112, 240)] {
            let mut su = 0.0;
            let mut sv = 0.0;
            for y in by..by + 16 {
                for x in bx..bx + 16 {
                    su += f.at(x, y).0;
                    sv += f.at(x, y).1;
                }
            }
            let (u, v) = p.at(bx + 5, by + 9);
            assert!((u - su / 256.0).abs() < 1e-12 && (v - sv / 256.0).abs() < 1e-12);
        }
        assert!(pool_flow(&checker(100, 128), 0).is_err());
    }

    #[test]
    fn integer_depth_selects_one_level() {
        let f = checker(128, 128);
        let out = adaptive_flow(&f, &DepthField::uniform(32, 32, 1.0)).unwrap();
        assert_eq!(out, pool_flow(&f, 1).unwrap());
    }

    #[test]
    fn large_depth_uses_the_finest_bracket() {
        let f = checker(128, 128);
        let out = adaptive_flow(&f, &DepthField::uniform(32, 32, 7.0)).unwrap();
        let v3 = pool_flow(&f, 3).unwrap();
        for (a, b) in out.u.iter().zip(&v3.u) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn unpadded_flow_is_padded_and_cropped() {
        let f = FlowField::uniform(130, 70, 2.5, -1.0);
        let out = adaptive_flow(&f, &DepthField::uniform(64, 32, 1.5)).unwrap();
        assert_eq!((out.width, out.height), (130, 70));
        assert!(out.u.iter().all(|&u| (u - 2.5).abs() < 1e-12));
        assert!(adaptive_flow(&f, &DepthField::uniform(32, 32, 1.5)).is_err());
    }

    #[test]
    fn half_pixel_on_ramp_is_neighbour_mean() {
        let r = ramp(128, 8);
        let out = warp(&r, &FlowField::uniform(128, 8, 0.5, 0.0)).unwrap();
        for x in 0..127 {
            assert_eq!(out.data[3 * 128 + x], x as f64 + 0.5);
        }
        assert_eq!(out.data[3 * 128 + 127], 127.0);
    }

    #[test]
    fn zero_flow_zero_residual() {
        let r = ramp(128, 128);
        let (res, _) =
            pwarp_residual(&r, &r, &FlowField::uniform(128, 128, 0.0, 0.0), &DepthField::uniform(32, 32, 2.0)).unwrap();
        assert!(res.data.iter().all(|&d| d == 0));
    }
}
