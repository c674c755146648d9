//! Split-decision logs: CSV lines `poc,x,y,w,h,mode` in frame coordinates.
//!
//! Records may appear in any order. Leaf (`NS`) records may be omitted;
//! children of a recorded split default to unsplit. A `#size,poc,width,height`
//! directive fixes a frame's dimensions, other `#` lines are comments.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::frame::{ctu_grid_dims, FramePartition};
use crate::map::tree_to_map;
use crate::partition::{apply_split, legal_splits, CuGeometry, PartitionRules, SplitMode, SplitTree, CTU_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitLogRecord {
    pub poc: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub mode: SplitMode,
}

/// Split trees of one frame, CTUs row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTrees {
    pub poc: u32,
    pub width: u32,
    pub height: u32,
    pub ctus: Vec<SplitTree>,
}

impl FrameTrees {
    pub fn cols(&self) -> usize {
        ctu_grid_dims(self.width, self.height).1
    }

    pub fn to_partition(&self) -> FramePartition {
        FramePartition {
            poc: self.poc,
            width: self.width,
            height: self.height,
            ctus: self.ctus.iter().map(tree_to_map).collect(),
        }
    }
}

#[derive(Default)]
struct FrameRecords {
    size: Option<(u32, u32, usize)>,
    nodes: HashMap<(u32, u32, u32, u32), (SplitMode, usize)>,
}

/// Parses a split log into per-frame trees, ordered by POC.
///
/// `default_size` applies to frames without a `#size` directive; otherwise
/// the frame extent is derived from the recorded CTU roots.
pub fn parse_split_log(
    text: &str,
    rules: &PartitionRules,
    default_size: Option<(u32, u32)>,
) -> Result<Vec<FrameTrees>> {
    rules.validate()?;
    let mut frames: BTreeMap<u32, FrameRecords> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#size,") {
            let f: Vec<&str> = rest.split(',').map(str::trim).collect();
            let nums: Vec<u32> = f
                .iter()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(format!("bad size directive `{line}`")))?;
            if nums.len() != 3 || nums[1] == 0 || nums[2] == 0 {
                return Err(err(format!("bad size directive `{line}`")));
            }
            let entry = frames.entry(nums[0]).or_default();
            if let Some((w, h, _)) = entry.size {
                if (w, h) != (nums[1], nums[2]) {
                    return Err(err(format!("conflicting size for frame {}", nums[0])));
                }
            }
            entry.size = Some((nums[1], nums[2], line_no));
            continue;
        }
        if line.starts_with('#') || (idx == 0 && line.starts_with("poc")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected `poc,x,y,w,h,mode`, got `{line}`")));
        }
        let mut nums = [0u32; 5];
        for (i, tok) in f[..5].iter().enumerate() {
            nums[i] = tok.parse().map_err(|_| err(format!("bad number `{tok}`")))?;
        }
        let mode: SplitMode = f[5].parse().map_err(|e: Error| err(e.to_string()))?;
        let [poc, x, y, w, h] = nums;
        let ctu = CTU_SIZE as u32;
        let fits_ctu = w >= 4
            && h >= 4
            && x % 4 == 0
            && y % 4 == 0
            && w % 4 == 0
            && h % 4 == 0
            && x % ctu + w <= ctu
            && y % ctu + h <= ctu;
        if !fits_ctu {
            return Err(err(format!("rectangle {x},{y} {w}x{h} is not produced by any split")));
        }
        let nodes = &mut frames.entry(poc).or_default().nodes;
        match nodes.get(&(x, y, w, h)) {
            Some(&(prev, prev_line)) if prev != mode => {
                return Err(err(format!("conflicting duplicate of line {prev_line}: {prev} vs {mode}")));
            }
            Some(_) => {}
            None => {
                nodes.insert((x, y, w, h), (mode, line_no));
            }
        }
    }

    frames.into_iter().map(|(poc, recs)| build_frame(poc, recs, rules, default_size)).collect()
}

fn build_frame(
    poc: u32,
    recs: FrameRecords,
    rules: &PartitionRules,
    default_size: Option<(u32, u32)>,
) -> Result<FrameTrees> {
    let ctu = CTU_SIZE as u32;
    let (width, height) = match (recs.size, default_size) {
        (Some((w, h, _)), _) => (w, h),
        (None, Some(size)) => size,
        (None, None) => {
            let w = recs.nodes.keys().map(|k| (k.0 / ctu + 1) * ctu).max().unwrap_or(ctu);
            let h = recs.nodes.keys().map(|k| (k.1 / ctu + 1) * ctu).max().unwrap_or(ctu);
            (w, h)
        }
    };
    let (rows, cols) = ctu_grid_dims(width, height);
    let mut visited: HashMap<(u32, u32, u32, u32), bool> = recs.nodes.keys().map(|k| (*k, false)).collect();

    let mut ctus = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let (ox, oy) = (col as u32 * ctu, row as u32 * ctu);
            let tree = if recs.nodes.contains_key(&(ox, oy, ctu, ctu)) {
                build_node(&recs, &mut visited, (ox, oy), CuGeometry::CTU, 0, 0, rules)?
            } else {
                SplitTree::root()
            };
            ctus.push(tree);
        }
    }

    let mut stray: Vec<usize> = visited.iter().filter(|(_, v)| !**v).map(|(k, _)| recs.nodes[k].1).collect();
    stray.sort_unstable();
    if let Some(&line) = stray.first() {
        return Err(Error::Parse {
            line,
            msg: format!("record of frame {poc} is not reachable from a CTU root inside the frame"),
        });
    }
    Ok(FrameTrees { poc, width, height, ctus })
}

fn build_node(
    recs: &FrameRecords,
    visited: &mut HashMap<(u32, u32, u32, u32), bool>,
    origin: (u32, u32),
    geom: CuGeometry,
    q: u8,
    s: u8,
    rules: &PartitionRules,
) -> Result<SplitTree> {
    let key = (origin.0 + geom.x as u32, origin.1 + geom.y as u32, geom.w as u32, geom.h as u32);
    let (mode, line) = match recs.nodes.get(&key) {
        Some(&(m, l)) => {
            visited.insert(key, true);
            (m, l)
        }
        None => return Ok(SplitTree::leaf(geom, q, s)),
    };
    if !legal_splits(geom, q, s, rules).contains(mode) {
        return Err(Error::Parse {
            line,
            msg: format!("{mode} is not legal for {}x{} at QT depth {q}, MTT stage {s}", geom.w, geom.h),
        });
    }
    if mode == SplitMode::NoSplit {
        return Ok(SplitTree::leaf(geom, q, s));
    }
    let (cq, cs) = SplitTree::child_depths(mode, q, s);
    let children = apply_split(geom, mode)?
        .into_iter()
        .map(|g| build_node(recs, visited, origin, g, cq, cs, rules))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitTree { geometry: geom, mode, children, qt_depth: q, mtt_stage: s })
}

/// Records of one CTU tree in preorder, in frame coordinates.
pub fn tree_records(poc: u32, origin: (u32, u32), tree: &SplitTree) -> Vec<SplitLogRecord> {
    let mut out = Vec::new();
    tree.walk(&mut |n| {
        out.push(SplitLogRecord {
            poc,
            x: origin.0 + n.geometry.x as u32,
            y: origin.1 + n.geometry.y as u32,
            w: n.geometry.w as u32,
            h: n.geometry.h as u32,
            mode: n.mode,
        })
    });
    out
}

pub fn format_record(r: &SplitLogRecord) -> String {
    format!("{},{},{},{},{},{}", r.poc, r.x, r.y, r.w, r.h, r.mode.token())
}

/// Normalized log: size directive, then every node of every CTU in preorder.
pub fn write_split_log(frames: &[FrameTrees]) -> String {
    let mut out = String::new();
    let ctu = CTU_SIZE as u32;
    for frame in frames {
        writeln!(out, "#size,{},{},{}", frame.poc, frame.width, frame.height).unwrap();
        let cols = frame.cols();
        for (i, tree) in frame.ctus.iter().enumerate() {
            let origin = ((i % cols) as u32 * ctu, (i / cols) as u32 * ctu);
            for rec in tree_records(frame.poc, origin, tree) {
                writeln!(out, "{}", format_record(&rec)).unwrap();
            }
        }
    }
    out
}
