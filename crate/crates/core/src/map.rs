//! Partition-map representation of a CTU split tree.
//!
//! A map holds one QT depth layer, three cumulative MTT depth layers (whose
//! base is the QT depth), three MTT direction layers and the MTT mask flag,
//! each layer on the 32×32 cell grid of the CTU.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::partition::{apply_split, legal_splits, CuGeometry, PartitionRules, SplitMode, SplitTree, GRID, MTT_LAYERS};

/// 32×32 grid of small signed integers.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid(pub [[i8; GRID]; GRID]);

impl Grid {
    pub fn zeros() -> Self {
        Grid([[0; GRID]; GRID])
    }

    pub fn filled(v: i8) -> Self {
        Grid([[v; GRID]; GRID])
    }

    pub fn from_fn<F: FnMut(usize, usize) -> i8>(mut f: F) -> Self {
        let mut g = Grid::zeros();
        for r in 0..GRID {
            for c in 0..GRID {
                g.0[r][c] = f(r, c);
            }
        }
        g
    }

    pub fn fill_block(&mut self, geom: &CuGeometry, v: i8) {
        for r in geom.rows() {
            self.0[r][geom.cols()].fill(v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.0.iter().flat_map(|row| row.iter().copied())
    }

    pub fn block_values<'a>(&'a self, geom: &CuGeometry) -> impl Iterator<Item = i8> + 'a {
        geom.cells().map(move |(r, c)| self.0[r][c])
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::zeros()
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = i8;
    fn index(&self, (r, c): (usize, usize)) -> &i8 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut i8 {
        &mut self.0[r][c]
    }
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Grid [")?;
        for row in &self.0 {
            let line: Vec<String> = row.iter().map(|v| format!("{v:2}")).collect();
            writeln!(f, "  {}", line.join(" "))?;
        }
        write!(f, "]")
    }
}

/// Partition map of one CTU.
///
/// Predicted maps use the same type; nothing here forces the layers to be
/// mutually consistent. [`validate_map`] and [`map_to_tree_exact`] decide that.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PartitionMap {
    pub qd: Grid,
    pub md: [Grid; MTT_LAYERS],
    pub mdir: [Grid; MTT_LAYERS],
    pub mask: bool,
}

impl PartitionMap {
    pub fn zeros() -> Self {
        PartitionMap::default()
    }

    /// Layer `n` of the MTT depth maps, with layer `-1` being the QT depth.
    pub fn depth_layer(&self, n: isize) -> &Grid {
        if n < 0 {
            &self.qd
        } else {
            &self.md[n as usize]
        }
    }
}

/// Converts a split tree into its partition map.
pub fn tree_to_map(tree: &SplitTree) -> PartitionMap {
    let mut map = PartitionMap::zeros();
    let mut path = [(0i8, 0i8); MTT_LAYERS];
    write_node(tree, &mut map, &mut path);
    map.mask = derive_mtt_mask(&map.qd, &map.md[0]);
    map
}

fn write_node(node: &SplitTree, map: &mut PartitionMap, path: &mut [(i8, i8); MTT_LAYERS]) {
    if node.children.is_empty() {
        let geom = &node.geometry;
        let q = node.qt_depth as i8;
        let stages = node.mtt_stage as usize;
        map.qd.fill_block(geom, q);
        let mut depth = q;
        for n in 0..MTT_LAYERS {
            let (inc, dir) = if n < stages { path[n] } else { (0, 0) };
            depth += inc;
            map.md[n].fill_block(geom, depth);
            map.mdir[n].fill_block(geom, dir);
        }
        return;
    }
    let incs = node.mode.child_increments();
    for (child, &inc) in node.children.iter().zip(incs) {
        if node.mode.is_mtt() {
            path[node.mtt_stage as usize] = (inc, node.mode.direction());
        }
        write_node(child, map, path);
    }
}

/// MTT mask label: `false` (early-terminate MTT) iff the QT depth dominates
/// the first MTT depth layer on every cell.
pub fn derive_mtt_mask(qd_pred: &Grid, md0_label: &Grid) -> bool {
    qd_pred.iter().zip(md0_label.iter()).any(|(q, m)| q < m)
}

/// Decodes the MTT decision of `geom` at `stage` from one layer of the map.
///
/// Returns `None` when the increment/direction pattern over the block
/// matches no mode.
pub fn decode_mtt_mode(map: &PartitionMap, geom: &CuGeometry, stage: usize) -> Option<SplitMode> {
    if stage >= MTT_LAYERS {
        return Some(SplitMode::NoSplit);
    }
    let base = map.depth_layer(stage as isize - 1);
    let depth = &map.md[stage];
    let dir = &map.mdir[stage];
    let inc = |r: usize, c: usize| depth[(r, c)] as i16 - base[(r, c)] as i16;

    let (r0, c0) = (geom.rows().start, geom.cols().start);
    let first_dir = dir[(r0, c0)];
    if geom.cells().any(|(r, c)| dir[(r, c)] != first_dir) {
        return None;
    }
    if first_dir == 0 {
        return geom.cells().all(|(r, c)| inc(r, c) == 0).then_some(SplitMode::NoSplit);
    }
    let horizontal = first_dir == 1;
    if first_dir != 1 && first_dir != -1 {
        return None;
    }
    // Position of each cell along the split axis, in cells.
    let extent = if horizontal { geom.rows().len() } else { geom.cols().len() };
    let along = |r: usize, c: usize| if horizontal { r - r0 } else { c - c0 };

    if geom.cells().all(|(r, c)| inc(r, c) == 1) {
        if extent >= 2 {
            return Some(if horizontal { SplitMode::BinaryH } else { SplitMode::BinaryV });
        }
        return None;
    }
    if extent >= 4 && extent % 4 == 0 {
        let quarter = extent / 4;
        let tt = geom.cells().all(|(r, c)| {
            let p = along(r, c);
            let expect = if p < quarter || p >= 3 * quarter { 2 } else { 1 };
            inc(r, c) == expect
        });
        if tt {
            return Some(if horizontal { SplitMode::TernaryH } else { SplitMode::TernaryV });
        }
    }
    None
}

/// Decodes an exact partition map into the unique tree producing it.
pub fn map_to_tree_exact(map: &PartitionMap, rules: &PartitionRules) -> Result<SplitTree> {
    rules.validate()?;
    let tree = decode_node(map, CuGeometry::CTU, 0, 0, rules)?;
    let mask = derive_mtt_mask(&map.qd, &map.md[0]);
    if mask != map.mask {
        return Err(Error::InconsistentMap {
            geom: CuGeometry::CTU,
            reason: format!("MTT mask is {} but the layers imply {}", map.mask, mask),
        });
    }
    Ok(tree)
}

/// Decodes the sub-tree rooted at `geom` (at QT depth `qt_depth`, before any
/// MTT split). The mask flag is not examined.
pub fn map_to_subtree_exact(
    map: &PartitionMap,
    geom: CuGeometry,
    qt_depth: u8,
    rules: &PartitionRules,
) -> Result<SplitTree> {
    rules.validate()?;
    decode_node(map, geom, qt_depth, 0, rules)
}

fn decode_node(map: &PartitionMap, geom: CuGeometry, q: u8, s: u8, rules: &PartitionRules) -> Result<SplitTree> {
    let inconsistent = |reason: String| Error::InconsistentMap { geom, reason };
    let legal = legal_splits(geom, q, s, rules);

    let mode = if s == 0 && map.qd.block_values(&geom).any(|v| v != q as i8) {
        if map.qd.block_values(&geom).all(|v| v > q as i8) {
            SplitMode::Quad
        } else {
            return Err(inconsistent(format!("QT depth is not uniform at depth {q}")));
        }
    } else {
        decode_mtt_mode(map, &geom, s as usize)
            .ok_or_else(|| inconsistent(format!("MTT layer {} matches no split pattern", s + 1)))?
    };

    if !legal.contains(mode) {
        return Err(inconsistent(format!("decoded {mode} is not a legal split")));
    }
    if mode == SplitMode::NoSplit {
        for n in s as usize + 1..MTT_LAYERS {
            if decode_mtt_mode(map, &geom, n) != Some(SplitMode::NoSplit) {
                return Err(inconsistent(format!(
                    "leaf carries a nonzero increment or direction in MTT layer {}",
                    n + 1
                )));
            }
        }
        return Ok(SplitTree::leaf(geom, q, s));
    }
    let (cq, cs) = SplitTree::child_depths(mode, q, s);
    let children =
        apply_split(geom, mode)?.into_iter().map(|g| decode_node(map, g, cq, cs, rules)).collect::<Result<Vec<_>>>()?;
    Ok(SplitTree { geometry: geom, mode, children, qt_depth: q, mtt_stage: s })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub valid: bool,
    pub inconsistent_cells: usize,
    pub inconsistency_error: f64,
}

/// Majority-vote projection of a QT depth layer onto a legal quadtree.
///
/// A block at depth `d` becomes a leaf when at least half of its cells carry
/// `d` (or when it can no longer be split); otherwise it recurses into its
/// quadrants at `d + 1`.
pub fn project_qt_depth(qd: &Grid, rules: &PartitionRules) -> Grid {
    let mut out = Grid::zeros();
    project_block(qd, CuGeometry::CTU, 0, rules, &mut out);
    out
}

fn project_block(qd: &Grid, geom: CuGeometry, d: u8, rules: &PartitionRules, out: &mut Grid) {
    let total = geom.cell_count();
    let at_depth = qd.block_values(&geom).filter(|&v| v == d as i8).count();
    let can_split = legal_splits(geom, d, 0, rules).contains(SplitMode::Quad);
    if 2 * at_depth >= total || !can_split {
        out.fill_block(&geom, d as i8);
        return;
    }
    for child in apply_split(geom, SplitMode::Quad).expect("legal quad split") {
        project_block(qd, child, d + 1, rules, out);
    }
}

pub fn validate_map(map: &PartitionMap, rules: &PartitionRules) -> ValidityReport {
    let valid = map_to_tree_exact(map, rules).is_ok();
    let projected = project_qt_depth(&map.qd, rules);
    let inconsistent_cells = map.qd.iter().zip(projected.iter()).filter(|(a, b)| a != b).count();
    ValidityReport { valid, inconsistent_cells, inconsistency_error: inconsistent_cells as f64 / (GRID * GRID) as f64 }
}

/// Keeps the QT layer, the mask, and the first `level` MTT layers; deeper
/// layers are flattened onto the last kept one.
pub fn prune_map(map: &PartitionMap, level: usize) -> PartitionMap {
    let level = level.min(MTT_LAYERS);
    let mut out = map.clone();
    for n in level..MTT_LAYERS {
        out.md[n] = if level == 0 { map.qd.clone() } else { map.md[level - 1].clone() };
        out.mdir[n] = Grid::zeros();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use SplitMode::*;

    fn build(modes: &[SplitMode]) -> SplitTree {
        SplitTree::from_preorder(CuGeometry::CTU, 0, 0, &mut modes.iter().copied(), &PartitionRules::default()).unwrap()
    }

    #[test]
    fn unsplit_ctu_is_all_zero() {
        let map = tree_to_map(&SplitTree::root());
        assert_eq!(map, PartitionMap::zeros());
        assert!(!map.mask);
    }

    #[test]
    fn single_quad_level() {
        let map = tree_to_map(&build(&[Quad, NoSplit, NoSplit, NoSplit, NoSplit]));
        assert_eq!(map.qd, Grid::filled(1));
        for n in 0..3 {
            assert_eq!(map.md[n], Grid::filled(1));
            assert_eq!(map.mdir[n], Grid::zeros());
        }
        assert!(!map.mask);
    }

    #[test]
    fn ternary_vertical_increments() {
        let t = build(&[Quad, TernaryV, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit]);
        let map = tree_to_map(&t);
        // Top-left 64x64 block spans cells 0..16; quarters are 4 cells wide.
        for r in 0..16 {
            for c in 0..16 {
                let expect = if (4..12).contains(&c) { 2 } else { 3 };
                assert_eq!(map.md[0][(r, c)], expect, "cell {r},{c}");
                assert_eq!(map.mdir[0][(r, c)], -1);
                assert_eq!(map.qd[(r, c)], 1);
                // deeper layers inherit, direction 0
                assert_eq!(map.md[2][(r, c)], expect);
                assert_eq!(map.mdir[1][(r, c)], 0);
            }
        }
        assert_eq!(map.md[0][(0, 16)], 1);
        assert_eq!(map.mdir[0][(0, 16)], 0);
        assert!(map.mask);
        assert_eq!(map_to_tree_exact(&map, &PartitionRules::default()).unwrap(), t);
    }

    #[test]
    fn nested_mtt_layers() {
        // QT, then TL block BT_H, its top half BT_V, its left part TT_H
        let t = build(&[
            Quad, BinaryH, BinaryV, TernaryH, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit,
        ]);
        let map = tree_to_map(&t);
        assert_eq!(map.md[0][(0, 0)], 2);
        assert_eq!(map.md[1][(0, 0)], 3);
        assert_eq!(map.md[2][(0, 0)], 5);
        assert_eq!(map.mdir[0][(0, 0)], 1);
        assert_eq!(map.mdir[1][(0, 0)], -1);
        assert_eq!(map.mdir[2][(0, 0)], 1);
        // bottom half of the TL block: only stage 1
        assert_eq!(map.md[2][(10, 0)], 2);
        assert_eq!(map.mdir[1][(10, 0)], 0);
        assert_eq!(map_to_tree_exact(&map, &PartitionRules::default()).unwrap(), t);
    }

    #[test]
    fn missing_direction_is_inconsistent() {
        let mut map = PartitionMap::zeros();
        map.md[0][(0, 0)] = 1;
        map.md[1][(0, 0)] = 1;
        map.md[2][(0, 0)] = 1;
        map.mask = true;
        let err = map_to_tree_exact(&map, &PartitionRules::default()).unwrap_err();
        assert!(matches!(err, Error::InconsistentMap { geom, .. } if geom == CuGeometry::CTU));
    }

    #[test]
    fn wrong_mask_is_inconsistent() {
        let mut map = tree_to_map(&SplitTree::root());
        map.mask = true;
        assert!(map_to_tree_exact(&map, &PartitionRules::default()).is_err());
    }

    #[test]
    fn mask_rule() {
        let g = Grid::from_fn(|r, c| ((r + c) % 3) as i8);
        assert!(!derive_mtt_mask(&g, &g));
        let mut m = g.clone();
        m[(5, 7)] += 1;
        assert!(derive_mtt_mask(&g, &m));
    }

    #[test]
    fn validate_exact_and_zero_maps() {
        let rules = PartitionRules::default();
        let rep = validate_map(&PartitionMap::zeros(), &rules);
        assert!(rep.valid);
        assert_eq!(rep.inconsistent_cells, 0);
        let t = build(&[Quad, NoSplit, BinaryV, NoSplit, NoSplit, NoSplit, NoSplit]);
        let rep = validate_map(&tree_to_map(&t), &rules);
        assert!(rep.valid);
        assert_eq!(rep.inconsistency_error, 0.0);
    }

    #[test]
    fn single_raised_cell_in_leaf_block() {
        // 64x64 leaf blocks (16x16 cells) at depth 1; raise one cell.
        let rules = PartitionRules::default();
        let mut map = tree_to_map(&build(&[Quad, NoSplit, NoSplit, NoSplit, NoSplit]));
        map.qd[(3, 20)] = 2;
        let rep = validate_map(&map, &rules);
        assert!(!rep.valid);
        assert_eq!(rep.inconsistent_cells, 1);
        assert_eq!(rep.inconsistency_error, 1.0 / 1024.0);
    }

    #[test]
    fn projection_tie_resolves_to_leaf() {
        let rules = PartitionRules::default();
        // Exactly half the CTU at depth 0.
        let qd = Grid::from_fn(|r, _| if r < 16 { 0 } else { 1 });
        assert_eq!(project_qt_depth(&qd, &rules), Grid::zeros());
    }

    #[test]
    fn prune_levels() {
        let t = build(&[Quad, BinaryH, BinaryV, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit, NoSplit]);
        let map = tree_to_map(&t);
        assert_eq!(prune_map(&map, 3), map);
        let p0 = prune_map(&map, 0);
        for n in 0..3 {
            assert_eq!(p0.md[n], map.qd);
            assert_eq!(p0.mdir[n], Grid::zeros());
        }
        assert_eq!(p0.mask, map.mask);
        let p1 = prune_map(&map, 1);
        assert_eq!(p1, tree_to_map(&t.truncate_mtt(1)));
    }
}
