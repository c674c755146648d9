//! `PMAP1` text format.
//!
//! ```text
//! PMAP1 <poc> <width> <height>
//! CTU <row> <col> <mask 0|1>
//! <7 grids: qd, md1..md3, mdir1..mdir3, each 32 lines of 32 integers>
//! ...
//! ```
//!
//! CTUs are written row-major; the reader accepts any order as long as every
//! CTU appears exactly once.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::frame::FramePartition;
use crate::map::{Grid, PartitionMap};
use crate::partition::{GRID, MTT_LAYERS};

pub fn write_pmap(frame: &FramePartition) -> String {
    let mut out = String::new();
    writeln!(out, "PMAP1 {} {} {}", frame.poc, frame.width, frame.height).unwrap();
    let cols = frame.cols();
    for (i, map) in frame.ctus.iter().enumerate() {
        writeln!(out, "CTU {} {} {}", i / cols, i % cols, map.mask as u8).unwrap();
        let layers = std::iter::once(&map.qd).chain(map.md.iter()).chain(map.mdir.iter());
        for grid in layers {
            write_grid(&mut out, grid);
        }
    }
    out
}

fn write_grid(out: &mut String, grid: &Grid) {
    for row in &grid.0 {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            let t = l.trim();
            if !t.is_empty() {
                self.line = i + 1;
                return Some(t);
            }
        }
        None
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn expect(&mut self, what: &str) -> Result<&'a str> {
        self.next_content().ok_or_else(|| Error::Parse {
            line: self.line + 1,
            msg: format!("unexpected end of input, expected {what}"),
        })
    }
}

fn parse_num<T: std::str::FromStr>(lines: &Lines<'_>, tok: &str) -> Result<T> {
    tok.parse::<T>().map_err(|_| lines.err(format!("bad number `{tok}`")))
}

pub fn read_pmap(text: &str) -> Result<FramePartition> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    let header = lines.expect("PMAP1 header")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "PMAP1" {
        return Err(lines.err("expected `PMAP1 poc width height`"));
    }
    let poc: u32 = parse_num(&lines, fields[1])?;
    let width: u32 = parse_num(&lines, fields[2])?;
    let height: u32 = parse_num(&lines, fields[3])?;
    let mut frame = FramePartition::new(poc, width, height).map_err(|e| lines.err(e.to_string()))?;
    let (rows, cols) = (frame.rows(), frame.cols());
    let mut seen = vec![false; rows * cols];

    while let Some(head) = lines.next_content() {
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 4 || f[0] != "CTU" {
            return Err(lines.err("expected `CTU row col mask`"));
        }
        let row: usize = parse_num(&lines, f[1])?;
        let col: usize = parse_num(&lines, f[2])?;
        let mask = match f[3] {
            "0" => false,
            "1" => true,
            m => return Err(lines.err(format!("mask must be 0 or 1, got `{m}`"))),
        };
        if row >= rows || col >= cols {
            return Err(lines.err(format!("CTU ({row},{col}) outside the {rows}x{cols} grid")));
        }
        if std::mem::replace(&mut seen[row * cols + col], true) {
            return Err(lines.err(format!("CTU ({row},{col}) appears twice")));
        }
        let mut map = PartitionMap { mask, ..PartitionMap::zeros() };
        map.qd = read_grid(&mut lines)?;
        for n in 0..MTT_LAYERS {
            map.md[n] = read_grid(&mut lines)?;
        }
        for n in 0..MTT_LAYERS {
            map.mdir[n] = read_grid(&mut lines)?;
        }
        *frame.ctu_mut(row, col) = map;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line: lines.line,
            msg: format!("CTU ({},{}) missing", missing / cols, missing % cols),
        });
    }
    Ok(frame)
}

fn read_grid(lines: &mut Lines<'_>) -> Result<Grid> {
    let mut grid = Grid::zeros();
    for r in 0..GRID {
        let line = lines.expect("grid row")?;
        let mut count = 0;
        for (c, tok) in line.split_whitespace().enumerate() {
            if c >= GRID {
                return Err(lines.err(format!("grid row has more than {GRID} values")));
            }
            grid.0[r][c] = parse_num(lines, tok)?;
            count += 1;
        }
        if count != GRID {
            return Err(lines.err(format!("grid row has {count} values, expected {GRID}")));
        }
    }
    Ok(grid)
}
