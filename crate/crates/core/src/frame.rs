//! Frame-level assembly of per-CTU partition maps.

use crate::error::{Error, Result};
use crate::map::{project_qt_depth, Grid, PartitionMap};
use crate::partition::{PartitionRules, CELL, CTU_SIZE, GRID, MTT_LAYERS};

/// Partition maps of one frame, CTUs stored row-major. Frames whose size is
/// not a multiple of 128 are padded; padded cells are ignored by metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePartition {
    pub poc: u32,
    pub width: u32,
    pub height: u32,
    pub ctus: Vec<PartitionMap>,
}

pub fn ctu_grid_dims(width: u32, height: u32) -> (usize, usize) {
    let s = CTU_SIZE as u32;
    (height.div_ceil(s) as usize, width.div_ceil(s) as usize)
}

impl FramePartition {
    /// Frame with every CTU unsplit.
    pub fn new(poc: u32, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("empty frame {width}x{height}")));
        }
        let (rows, cols) = ctu_grid_dims(width, height);
        Ok(FramePartition { poc, width, height, ctus: vec![PartitionMap::zeros(); rows * cols] })
    }

    pub fn rows(&self) -> usize {
        ctu_grid_dims(self.width, self.height).0
    }

    pub fn cols(&self) -> usize {
        ctu_grid_dims(self.width, self.height).1
    }

    pub fn ctu(&self, row: usize, col: usize) -> &PartitionMap {
        &self.ctus[row * self.cols() + col]
    }

    pub fn ctu_mut(&mut self, row: usize, col: usize) -> &mut PartitionMap {
        let cols = self.cols();
        &mut self.ctus[row * cols + col]
    }

    /// Whether cell (`r`, `c`) of CTU (`row`, `col`) lies inside the picture.
    pub fn cell_in_picture(&self, row: usize, col: usize, r: usize, c: usize) -> bool {
        let x = col as u32 * CTU_SIZE as u32 + c as u32 * CELL as u32;
        let y = row as u32 * CTU_SIZE as u32 + r as u32 * CELL as u32;
        x < self.width && y < self.height
    }

    /// In-picture cell coordinates of one CTU.
    pub fn picture_cells(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .filter(move |&(r, c)| self.cell_in_picture(row, col, r, c))
    }

    pub fn same_geometry(&self, other: &FramePartition) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.ctus.len() != other.ctus.len() {
            return Err(Error::GeometryMismatch(format!(
                "{}x{} ({} CTUs) vs {}x{} ({} CTUs)",
                self.width,
                self.height,
                self.ctus.len(),
                other.width,
                other.height,
                other.ctus.len()
            )));
        }
        Ok(())
    }

    fn ctu_coords(&self) -> impl Iterator<Item = (usize, usize)> {
        let cols = self.cols();
        (0..self.rows()).flat_map(move |r| (0..cols).map(move |c| (r, c)))
    }
}

/// Fraction of in-picture cells on which each layer agrees; the mask entry
/// is the fraction of CTUs with matching mask flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerAccuracy {
    pub qd: f64,
    pub mask: f64,
    pub md: [f64; MTT_LAYERS],
    pub mdir: [f64; MTT_LAYERS],
}

pub fn layer_accuracy(pred: &FramePartition, label: &FramePartition) -> Result<LayerAccuracy> {
    pred.same_geometry(label)?;
    let mut cells = 0usize;
    let mut qd = 0usize;
    let mut md = [0usize; MTT_LAYERS];
    let mut mdir = [0usize; MTT_LAYERS];
    let mut mask = 0usize;
    for (row, col) in label.ctu_coords() {
        let (p, l) = (pred.ctu(row, col), label.ctu(row, col));
        mask += (p.mask == l.mask) as usize;
        for (r, c) in label.picture_cells(row, col) {
            cells += 1;
            qd += (p.qd[(r, c)] == l.qd[(r, c)]) as usize;
            for n in 0..MTT_LAYERS {
                md[n] += (p.md[n][(r, c)] == l.md[n][(r, c)]) as usize;
                mdir[n] += (p.mdir[n][(r, c)] == l.mdir[n][(r, c)]) as usize;
            }
        }
    }
    let frac = |k: usize| k as f64 / cells as f64;
    Ok(LayerAccuracy {
        qd: frac(qd),
        mask: mask as f64 / label.ctus.len() as f64,
        md: md.map(frac),
        mdir: mdir.map(frac),
    })
}

/// Frame-level QT inconsistency: deviant in-picture cells over in-picture cells.
pub fn frame_inconsistency(frame: &FramePartition, rules: &PartitionRules) -> (usize, f64) {
    let mut deviant = 0usize;
    let mut cells = 0usize;
    for (row, col) in frame.ctu_coords() {
        let qd: &Grid = &frame.ctu(row, col).qd;
        let projected = project_qt_depth(qd, rules);
        for (r, c) in frame.picture_cells(row, col) {
            cells += 1;
            deviant += (qd[(r, c)] != projected[(r, c)]) as usize;
        }
    }
    (deviant, deviant as f64 / cells as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_dims() {
        let f = FramePartition::new(0, 1920, 1080).unwrap();
        assert_eq!((f.rows(), f.cols()), (9, 15));
        assert!(f.cell_in_picture(8, 0, 13, 0));
        assert!(!f.cell_in_picture(8, 0, 14, 0));
    }

    #[test]
    fn identical_frames_are_fully_accurate() {
        let f = FramePartition::new(3, 200, 130).unwrap();
        let acc = layer_accuracy(&f, &f).unwrap();
        assert_eq!(acc.qd, 1.0);
        assert_eq!(acc.mask, 1.0);
        assert_eq!(acc.md, [1.0; 3]);
    }

    #[test]
    fn shifted_qd_is_zero_accuracy() {
        let label = FramePartition::new(0, 256, 128).unwrap();
        let mut pred = label.clone();
        for m in pred.ctus.iter_mut() {
            m.qd = Grid::filled(1);
        }
        let acc = layer_accuracy(&pred, &label).unwrap();
        assert_eq!(acc.qd, 0.0);
        assert_eq!(acc.md[0], 1.0);
    }

    #[test]
    fn padded_cells_are_ignored() {
        let label = FramePartition::new(0, 64, 64).unwrap();
        let mut pred = label.clone();
        // cell outside the 64x64 picture
        pred.ctus[0].qd[(20, 20)] = 3;
        assert_eq!(layer_accuracy(&pred, &label).unwrap().qd, 1.0);
        pred.ctus[0].qd[(0, 0)] = 3;
        assert_eq!(layer_accuracy(&pred, &label).unwrap().qd, 255.0 / 256.0);
    }

    #[test]
    fn mismatched_geometry_rejected() {
        let a = FramePartition::new(0, 256, 128).unwrap();
        let b = FramePartition::new(0, 128, 128).unwrap();
        assert!(layer_accuracy(&a, &b).is_err());
    }
}
