//! CTU geometry, split modes and the VVC legality surface.
//!
//! All coordinates are CTU-local pixels. A CTU is 128×128 and the smallest
//! addressable unit is a 4×4 cell, so a CTU maps onto a 32×32 cell grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CTU_SIZE: u16 = 128;
pub const CELL: u16 = 4;
/// Cells per CTU side.
pub const GRID: usize = (CTU_SIZE / CELL) as usize;
/// Number of MTT layers carried by a partition map.
pub const MTT_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitMode {
    NoSplit,
    Quad,
    BinaryH,
    BinaryV,
    TernaryH,
    TernaryV,
}

impl SplitMode {
    pub const ALL: [SplitMode; 6] = [
        SplitMode::NoSplit,
        SplitMode::Quad,
        SplitMode::BinaryH,
        SplitMode::BinaryV,
        SplitMode::TernaryH,
        SplitMode::TernaryV,
    ];

    pub fn is_mtt(self) -> bool {
        matches!(self, SplitMode::BinaryH | SplitMode::BinaryV | SplitMode::TernaryH | SplitMode::TernaryV)
    }

    pub fn is_split(self) -> bool {
        self != SplitMode::NoSplit
    }

    /// Direction label stored in the MTT direction layers: +1 horizontal,
    /// -1 vertical, 0 otherwise.
    pub fn direction(self) -> i8 {
        match self {
            SplitMode::BinaryH | SplitMode::TernaryH => 1,
            SplitMode::BinaryV | SplitMode::TernaryV => -1,
            _ => 0,
        }
    }

    /// Depth increment written into the MTT depth layer for each child.
    pub fn child_increments(self) -> &'static [i8] {
        match self {
            SplitMode::NoSplit => &[],
            SplitMode::Quad => &[1, 1, 1, 1],
            SplitMode::BinaryH | SplitMode::BinaryV => &[1, 1],
            SplitMode::TernaryH | SplitMode::TernaryV => &[2, 1, 2],
        }
    }

    /// Token used by the split-log CSV format.
    pub fn token(self) -> &'static str {
        match self {
            SplitMode::NoSplit => "NS",
            SplitMode::Quad => "QT",
            SplitMode::BinaryH => "BTH",
            SplitMode::BinaryV => "BTV",
            SplitMode::TernaryH => "TTH",
            SplitMode::TernaryV => "TTV",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "").as_str() {
            "NS" => Ok(SplitMode::NoSplit),
            "QT" => Ok(SplitMode::Quad),
            "BTH" => Ok(SplitMode::BinaryH),
            "BTV" => Ok(SplitMode::BinaryV),
            "TTH" => Ok(SplitMode::TernaryH),
            "TTV" => Ok(SplitMode::TernaryV),
            other => Err(Error::InvalidInput(format!("unknown split mode `{other}`"))),
        }
    }
}

/// Small set of split modes, iterated in [`SplitMode`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ModeSet(u8);

impl ModeSet {
    pub const EMPTY: ModeSet = ModeSet(0);

    pub fn insert(&mut self, mode: SplitMode) {
        self.0 |= 1 << mode.index();
    }

    pub fn remove(&mut self, mode: SplitMode) {
        self.0 &= !(1 << mode.index());
    }

    pub fn contains(self, mode: SplitMode) -> bool {
        self.0 & (1 << mode.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = SplitMode> {
        SplitMode::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

impl FromIterator<SplitMode> for ModeSet {
    fn from_iter<I: IntoIterator<Item = SplitMode>>(iter: I) -> Self {
        let mut set = ModeSet::EMPTY;
        for m in iter {
            set.insert(m);
        }
        set
    }
}

/// Rectangle of a coding unit inside its CTU, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CuGeometry {
    pub x: u16,
    pub y: u16,
    pub w: u16,
    pub h: u16,
}

impl CuGeometry {
    pub const CTU: CuGeometry = CuGeometry { x: 0, y: 0, w: CTU_SIZE, h: CTU_SIZE };

    pub fn new(x: u16, y: u16, w: u16, h: u16) -> Result<Self> {
        let g = CuGeometry { x, y, w, h };
        if g.is_valid() {
            Ok(g)
        } else {
            Err(Error::InvalidInput(format!("invalid CU geometry {g}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        (CELL..=CTU_SIZE).contains(&self.w)
            && (CELL..=CTU_SIZE).contains(&self.h)
            && self.x.is_multiple_of(CELL)
            && self.y.is_multiple_of(CELL)
            && self.w.is_multiple_of(CELL)
            && self.h.is_multiple_of(CELL)
            && self.x + self.w <= CTU_SIZE
            && self.y + self.h <= CTU_SIZE
    }

    pub fn area(&self) -> u32 {
        self.w as u32 * self.h as u32
    }

    /// Cell-row range covered by this block.
    pub fn rows(&self) -> std::ops::Range<usize> {
        (self.y / CELL) as usize..((self.y + self.h) / CELL) as usize
    }

    /// Cell-column range covered by this block.
    pub fn cols(&self) -> std::ops::Range<usize> {
        (self.x / CELL) as usize..((self.x + self.w) / CELL) as usize
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> {
        let cols = self.cols();
        self.rows().flat_map(move |r| cols.clone().map(move |c| (r, c)))
    }

    pub fn cell_count(&self) -> usize {
        self.rows().len() * self.cols().len()
    }

    pub fn contains(&self, other: &CuGeometry) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }
}

impl fmt::Display for CuGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{} {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Configurable legality constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PartitionRules {
    pub min_cu_side: u16,
    pub max_qt_depth: u8,
    pub max_mtt_stage: u8,
    pub max_bt_side: u16,
    pub max_tt_side: u16,
    pub allow_qt_after_mtt: bool,
}

impl Default for PartitionRules {
    fn default() -> Self {
        PartitionRules {
            min_cu_side: 4,
            max_qt_depth: 4,
            max_mtt_stage: 3,
            max_bt_side: 64,
            max_tt_side: 64,
            allow_qt_after_mtt: false,
        }
    }
}

impl PartitionRules {
    /// Checks that the rules can be represented by a partition map.
    pub fn validate(&self) -> Result<()> {
        if self.min_cu_side < CELL || !self.min_cu_side.is_power_of_two() {
            return Err(Error::InvalidRules(format!(
                "min_cu_side must be a power of two >= {CELL}, got {}",
                self.min_cu_side
            )));
        }
        if self.max_mtt_stage as usize > MTT_LAYERS {
            return Err(Error::InvalidRules(format!(
                "max_mtt_stage must be <= {MTT_LAYERS}, got {}",
                self.max_mtt_stage
            )));
        }
        if self.max_qt_depth > 4 {
            return Err(Error::InvalidRules(format!("max_qt_depth must be <= 4, got {}", self.max_qt_depth)));
        }
        if self.allow_qt_after_mtt {
            return Err(Error::InvalidRules(
                "partition maps cannot represent a quadtree below a multi-type tree".into(),
            ));
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// keys not listed here are rejected.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut rules = PartitionRules::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (key, value) =
                line.split_once('=').ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            let num = |v: &str| -> Result<u16> { v.parse::<u16>().map_err(|_| parse_err(format!("bad number `{v}`"))) };
            match key.trim() {
                "min_cu_side" => rules.min_cu_side = num(value)?,
                "max_qt_depth" => rules.max_qt_depth = num(value)? as u8,
                "max_mtt_stage" => rules.max_mtt_stage = num(value)? as u8,
                "max_bt_side" => rules.max_bt_side = num(value)?,
                "max_tt_side" => rules.max_tt_side = num(value)?,
                "allow_qt_after_mtt" => {
                    rules.allow_qt_after_mtt = match value {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        v => return Err(parse_err(format!("bad flag `{v}`"))),
                    }
                }
                k => return Err(parse_err(format!("unknown rules key `{k}`"))),
            }
        }
        rules.validate()?;
        Ok(rules)
    }
}

/// Split modes permitted for a block at the given depths.
pub fn legal_splits(geom: CuGeometry, qt_depth: u8, mtt_stage: u8, rules: &PartitionRules) -> ModeSet {
    let mut set = ModeSet::EMPTY;
    set.insert(SplitMode::NoSplit);
    let (w, h) = (geom.w, geom.h);
    let min = rules.min_cu_side;

    if (mtt_stage == 0 || rules.allow_qt_after_mtt) && w == h && w / 2 >= min && qt_depth < rules.max_qt_depth {
        set.insert(SplitMode::Quad);
    }
    if mtt_stage < rules.max_mtt_stage && w.max(h) <= rules.max_bt_side {
        if h / 2 >= min {
            set.insert(SplitMode::BinaryH);
        }
        if w / 2 >= min {
            set.insert(SplitMode::BinaryV);
        }
    }
    if mtt_stage < rules.max_mtt_stage && w.max(h) <= rules.max_tt_side {
        if h / 4 >= min {
            set.insert(SplitMode::TernaryH);
        }
        if w / 4 >= min {
            set.insert(SplitMode::TernaryV);
        }
    }
    set
}

/// Child rectangles of `geom` under `mode`, top-to-bottom / left-to-right.
/// Only checks that the children land on the cell grid; use [`legal_splits`]
/// for the rule-based checks.
pub fn apply_split(geom: CuGeometry, mode: SplitMode) -> Result<Vec<CuGeometry>> {
    let CuGeometry { x, y, w, h } = geom;
    let kids = match mode {
        SplitMode::NoSplit => return Err(Error::IllegalSplit { geom, mode }),
        SplitMode::Quad => {
            if w != h {
                return Err(Error::IllegalSplit { geom, mode });
            }
            let (hw, hh) = (w / 2, h / 2);
            vec![
                CuGeometry { x, y, w: hw, h: hh },
                CuGeometry { x: x + hw, y, w: hw, h: hh },
                CuGeometry { x, y: y + hh, w: hw, h: hh },
                CuGeometry { x: x + hw, y: y + hh, w: hw, h: hh },
            ]
        }
        SplitMode::BinaryH => vec![CuGeometry { x, y, w, h: h / 2 }, CuGeometry { x, y: y + h / 2, w, h: h / 2 }],
        SplitMode::BinaryV => vec![CuGeometry { x, y, w: w / 2, h }, CuGeometry { x: x + w / 2, y, w: w / 2, h }],
        SplitMode::TernaryH => {
            let q = h / 4;
            vec![
                CuGeometry { x, y, w, h: q },
                CuGeometry { x, y: y + q, w, h: 2 * q },
                CuGeometry { x, y: y + 3 * q, w, h: q },
            ]
        }
        SplitMode::TernaryV => {
            let q = w / 4;
            vec![
                CuGeometry { x, y, w: q, h },
                CuGeometry { x: x + q, y, w: 2 * q, h },
                CuGeometry { x: x + 3 * q, y, w: q, h },
            ]
        }
    };
    if kids.iter().all(CuGeometry::is_valid) {
        Ok(kids)
    } else {
        Err(Error::IllegalSplit { geom, mode })
    }
}

/// Recursive split decisions of one CTU (or of a sub-block of one).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitTree {
    pub geometry: CuGeometry,
    pub mode: SplitMode,
    pub children: Vec<SplitTree>,
    pub qt_depth: u8,
    pub mtt_stage: u8,
}

impl SplitTree {
    pub fn leaf(geometry: CuGeometry, qt_depth: u8, mtt_stage: u8) -> Self {
        SplitTree { geometry, mode: SplitMode::NoSplit, children: Vec::new(), qt_depth, mtt_stage }
    }

    /// Unsplit CTU.
    pub fn root() -> Self {
        SplitTree::leaf(CuGeometry::CTU, 0, 0)
    }

    /// Child depth counters after applying `mode` at (`qt_depth`, `mtt_stage`).
    pub fn child_depths(mode: SplitMode, qt_depth: u8, mtt_stage: u8) -> (u8, u8) {
        if mode == SplitMode::Quad {
            (qt_depth + 1, mtt_stage)
        } else {
            (qt_depth, mtt_stage + 1)
        }
    }

    /// Splits this (leaf) node, giving it unsplit children.
    pub fn split(&mut self, mode: SplitMode, rules: &PartitionRules) -> Result<()> {
        if !self.children.is_empty() || self.mode != SplitMode::NoSplit {
            return Err(Error::MalformedTree { geom: self.geometry, reason: "node is already split".into() });
        }
        if !legal_splits(self.geometry, self.qt_depth, self.mtt_stage, rules).contains(mode) {
            return Err(Error::IllegalSplit { geom: self.geometry, mode });
        }
        if mode == SplitMode::NoSplit {
            return Ok(());
        }
        let (q, s) = SplitTree::child_depths(mode, self.qt_depth, self.mtt_stage);
        self.children = apply_split(self.geometry, mode)?.into_iter().map(|g| SplitTree::leaf(g, q, s)).collect();
        self.mode = mode;
        Ok(())
    }

    /// Builds a tree from its preorder mode sequence, checking legality.
    pub fn from_preorder<I>(
        geometry: CuGeometry,
        qt_depth: u8,
        mtt_stage: u8,
        modes: &mut I,
        rules: &PartitionRules,
    ) -> Result<Self>
    where
        I: Iterator<Item = SplitMode>,
    {
        let mode = modes
            .next()
            .ok_or_else(|| Error::MalformedTree { geom: geometry, reason: "mode sequence ended early".into() })?;
        let mut node = SplitTree::leaf(geometry, qt_depth, mtt_stage);
        node.split(mode, rules)?;
        for child in node.children.iter_mut() {
            *child = SplitTree::from_preorder(child.geometry, child.qt_depth, child.mtt_stage, modes, rules)?;
        }
        Ok(node)
    }

    pub fn preorder_modes(&self) -> Vec<SplitMode> {
        let mut out = Vec::new();
        self.walk(&mut |n| out.push(n.mode));
        out
    }

    /// Visits nodes in preorder.
    pub fn walk<'a, F: FnMut(&'a SplitTree)>(&'a self, f: &mut F) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn split_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |t| n += t.mode.is_split() as usize);
        n
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Number of split levels below this node.
    pub fn height(&self) -> usize {
        self.children.iter().map(|c| c.height() + 1).max().unwrap_or(0)
    }

    pub fn has_mtt(&self) -> bool {
        let mut found = false;
        self.walk(&mut |t| found |= t.mode.is_mtt());
        found
    }

    /// Leaves in preorder.
    pub fn leaves(&self) -> Vec<&SplitTree> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if t.children.is_empty() {
                out.push(t)
            }
        });
        out
    }

    /// Checks every structural invariant of the tree under `rules`.
    pub fn check(&self, rules: &PartitionRules) -> Result<()> {
        self.check_node(rules, false)
    }

    fn check_node(&self, rules: &PartitionRules, below_mtt: bool) -> Result<()> {
        let bad = |reason: &str| Error::MalformedTree { geom: self.geometry, reason: reason.into() };
        if !self.geometry.is_valid() {
            return Err(bad("invalid geometry"));
        }
        if self.mtt_stage as usize > MTT_LAYERS {
            return Err(bad("more than three MTT stages"));
        }
        if below_mtt && self.mode == SplitMode::Quad {
            return Err(bad("quadtree split below a multi-type split"));
        }
        if !legal_splits(self.geometry, self.qt_depth, self.mtt_stage, rules).contains(self.mode) {
            return Err(Error::IllegalSplit { geom: self.geometry, mode: self.mode });
        }
        if self.mode == SplitMode::NoSplit {
            return if self.children.is_empty() { Ok(()) } else { Err(bad("leaf with children")) };
        }
        let expected = apply_split(self.geometry, self.mode)?;
        if expected.len() != self.children.len() {
            return Err(bad("wrong number of children"));
        }
        let (q, s) = SplitTree::child_depths(self.mode, self.qt_depth, self.mtt_stage);
        for (child, geom) in self.children.iter().zip(expected) {
            if child.geometry != geom {
                return Err(bad("children do not tile the parent"));
            }
            if child.qt_depth != q || child.mtt_stage != s {
                return Err(bad("child depth counters are inconsistent"));
            }
            child.check_node(rules, below_mtt || self.mode.is_mtt())?;
        }
        Ok(())
    }

    /// Replaces every node at MTT stage `stage` (or deeper) with a leaf.
    pub fn truncate_mtt(&self, stage: u8) -> SplitTree {
        if self.mtt_stage >= stage && self.mode.is_mtt() {
            return SplitTree::leaf(self.geometry, self.qt_depth, self.mtt_stage);
        }
        SplitTree { children: self.children.iter().map(|c| c.truncate_mtt(stage)).collect(), ..self.clone() }
    }
}
