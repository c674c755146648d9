//! Map-tree post-processing.
//!
//! A predicted partition map is usually not decodable. The search below
//! expands a tree of candidate partial partitions ("map tree") depth-first:
//! every search node keeps the temporary map of its partial split tree and
//! the frontier of still-open CUs, and each child applies one candidate mode
//! to every frontier CU (the Cartesian product of the per-CU candidate sets).
//! Candidate sets are pruned against the prediction: QT by the number of
//! cells it would over-split, the other modes by their L1 error on the CU's
//! current MTT layer. Every search leaf is a complete, legal split tree; the
//! one with the smallest accumulated layer error is selected.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::FramePartition;
use crate::map::{tree_to_map, PartitionMap};
use crate::partition::{
    apply_split, legal_splits, CuGeometry, ModeSet, PartitionRules, SplitMode, SplitTree, MTT_LAYERS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostConfig {
    /// Maximum number of cells a QT split may push deeper than predicted.
    pub th_qt: usize,
    /// Maximum per-CU layer error for NS/BT/TT candidates.
    pub th_mtt: f64,
    pub max_tree_depth: usize,
    /// Optional cap on the total number of splits of a candidate tree.
    pub max_splits: Option<usize>,
    /// Maximum number of search nodes per CTU.
    pub node_budget: usize,
    pub rules: PartitionRules,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig {
            th_qt: 0,
            th_mtt: 0.0,
            max_tree_depth: 7,
            max_splits: None,
            node_budget: 1_000_000,
            rules: PartitionRules::default(),
        }
    }
}

impl PostConfig {
    /// No pruning at all: every legal tree within the caps is a candidate.
    pub fn exhaustive(rules: PartitionRules) -> Self {
        PostConfig { th_qt: usize::MAX, th_mtt: f64::INFINITY, rules, ..PostConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.th_mtt.is_nan() || self.th_mtt < 0.0 {
            return Err(Error::InvalidInput(format!("th_mtt must be >= 0, got {}", self.th_mtt)));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidInput("max_tree_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// An open CU on the search frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrontierCu {
    pub geom: CuGeometry,
    pub qt_depth: u8,
    pub mtt_stage: u8,
}

/// Node of the map tree.
#[derive(Debug, Clone)]
pub struct MapNode {
    /// Temporary partition map of the partial tree (open CUs unsplit).
    pub cur: PartitionMap,
    pub tree_depth: usize,
    pub cus: Vec<FrontierCu>,
    /// Modes applied to the parent's frontier to reach this node.
    pub applied: Vec<SplitMode>,
    pub splits: usize,
    pub children: Vec<MapNode>,
}

impl MapNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(MapNode::count_nodes).sum::<usize>()
    }

    pub fn count_leaves(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(MapNode::count_leaves).sum()
        }
    }
}

/// Map tree rooted at one block.
#[derive(Debug, Clone)]
pub struct MapTree {
    pub region: CuGeometry,
    pub root_qt_depth: u8,
    pub root: MapNode,
}

/// Selected candidate and its accumulated error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub tree: SplitTree,
    pub error: u64,
}

/// Accumulated error of a complete candidate: the L1 distance of its MTT
/// depth and direction layers to the prediction, summed over the three layers
/// and over the cells of `region`.
pub fn path_error(tree: &SplitTree, pred: &PartitionMap, region: &CuGeometry) -> u64 {
    map_error(&tree_to_map(tree), pred, region)
}

fn map_error(cur: &PartitionMap, pred: &PartitionMap, region: &CuGeometry) -> u64 {
    let mut err = 0u64;
    for n in 0..MTT_LAYERS {
        for (r, c) in region.cells() {
            err += (cur.md[n][(r, c)] as i32 - pred.md[n][(r, c)] as i32).unsigned_abs() as u64;
            err += (cur.mdir[n][(r, c)] as i32 - pred.mdir[n][(r, c)] as i32).unsigned_abs() as u64;
        }
    }
    err
}

/// Tie-break order between equal-error candidates: fewer splits first, then
/// the preorder mode sequence compared in mode order.
fn candidate_order(a: &(u64, SplitTree), b: &(u64, SplitTree)) -> Ordering {
    a.0.cmp(&b.0)
        .then_with(|| a.1.split_count().cmp(&b.1.split_count()))
        .then_with(|| a.1.preorder_modes().cmp(&b.1.preorder_modes()))
}

/// L1 error of `mode` on the CU's current MTT layer.
pub fn mode_layer_error(cu: &FrontierCu, mode: SplitMode, cur: &PartitionMap, pred: &PartitionMap) -> u64 {
    let s = cu.mtt_stage as usize;
    if s >= MTT_LAYERS || mode == SplitMode::Quad {
        return 0;
    }
    let base = cur.depth_layer(s as isize - 1);
    let layer_err = |geom: &CuGeometry, inc: i8, dir: i8| -> u64 {
        geom.cells()
            .map(|(r, c)| {
                let md = (base[(r, c)] + inc) as i32;
                ((md - pred.md[s][(r, c)] as i32).unsigned_abs()
                    + (dir as i32 - pred.mdir[s][(r, c)] as i32).unsigned_abs()) as u64
            })
            .sum()
    };
    if mode == SplitMode::NoSplit {
        return layer_err(&cu.geom, 0, 0);
    }
    match apply_split(cu.geom, mode) {
        Ok(kids) => kids.iter().zip(mode.child_increments()).map(|(g, &inc)| layer_err(g, inc, mode.direction())).sum(),
        Err(_) => u64::MAX,
    }
}

/// Number of cells of the CU that a QT split would push below the
/// predicted QT depth.
pub fn qt_overshoot(cu: &FrontierCu, pred: &PartitionMap) -> usize {
    let next = cu.qt_depth as i8 + 1;
    pred.qd.block_values(&cu.geom).filter(|&v| v < next).count()
}

/// Candidate modes of one frontier CU.
pub fn candidate_modes(cu: &FrontierCu, cur: &PartitionMap, pred: &PartitionMap, cfg: &PostConfig) -> ModeSet {
    let legal = legal_splits(cu.geom, cu.qt_depth, cu.mtt_stage, &cfg.rules);
    let mut set = ModeSet::EMPTY;
    let mut fallback: Option<(u64, SplitMode)> = None;
    for mode in legal.iter() {
        if mode == SplitMode::Quad {
            if qt_overshoot(cu, pred) <= cfg.th_qt {
                set.insert(mode);
            }
            continue;
        }
        let err = mode_layer_error(cu, mode, cur, pred);
        if err as f64 <= cfg.th_mtt {
            set.insert(mode);
        }
        if fallback.is_none_or(|(best, _)| err < best) {
            fallback = Some((err, mode));
        }
    }
    if set.is_empty() {
        // NS is always legal, so a fallback exists.
        set.insert(fallback.expect("NS is always legal").1);
    }
    set
}

/// Applies one mode per frontier CU to a parent state.
fn expand(cur: &PartitionMap, cus: &[FrontierCu], modes: &[SplitMode]) -> (PartitionMap, Vec<FrontierCu>) {
    let mut next = cur.clone();
    let mut frontier = Vec::new();
    for (cu, &mode) in cus.iter().zip(modes) {
        if mode == SplitMode::NoSplit {
            continue;
        }
        let kids = apply_split(cu.geom, mode).expect("candidate modes are legal");
        let (q, s) = SplitTree::child_depths(mode, cu.qt_depth, cu.mtt_stage);
        if mode == SplitMode::Quad {
            for g in &kids {
                next.qd.fill_block(g, q as i8);
                for n in 0..MTT_LAYERS {
                    next.md[n].fill_block(g, q as i8);
                }
            }
        } else {
            let stage = cu.mtt_stage as usize;
            for (g, &inc) in kids.iter().zip(mode.child_increments()) {
                for (r, c) in g.cells() {
                    let v = next.depth_layer(stage as isize - 1)[(r, c)] + inc;
                    for n in stage..MTT_LAYERS {
                        next.md[n][(r, c)] = v;
                    }
                }
                next.mdir[stage].fill_block(g, mode.direction());
            }
        }
        frontier.extend(kids.into_iter().map(|geom| FrontierCu { geom, qt_depth: q, mtt_stage: s }));
    }
    (next, frontier)
}

/// Mixed-radix walk over the Cartesian product of candidate sets (last CU
/// fastest), skipping every prefix that cannot stay within `budget` splits.
struct Product {
    sets: Vec<Vec<SplitMode>>,
    idx: Vec<usize>,
    /// Minimum number of splits forced by CUs `i..` (sets without NS).
    min_suffix: Vec<usize>,
    done: bool,
    budget: usize,
}

impl Product {
    fn new(sets: Vec<Vec<SplitMode>>, budget: usize) -> Self {
        let done = sets.iter().any(Vec::is_empty);
        let mut min_suffix = vec![0; sets.len() + 1];
        for i in (0..sets.len()).rev() {
            let forced = !sets[i].contains(&SplitMode::NoSplit) as usize;
            min_suffix[i] = min_suffix[i + 1] + forced;
        }
        let done = done || min_suffix[0] > budget;
        let idx = vec![0; sets.len()];
        Product { sets, idx, min_suffix, done, budget }
    }

    /// Increments digit `pos`, resetting the digits after it.
    fn advance(&mut self, mut pos: usize) {
        for d in self.idx[pos + 1..].iter_mut() {
            *d = 0;
        }
        loop {
            self.idx[pos] += 1;
            if self.idx[pos] < self.sets[pos].len() {
                return;
            }
            self.idx[pos] = 0;
            if pos == 0 {
                self.done = true;
                return;
            }
            pos -= 1;
        }
    }
}

impl Iterator for Product {
    type Item = (Vec<SplitMode>, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.sets.is_empty() {
            return None;
        }
        while !self.done {
            let mut used = 0;
            let mut overflow = None;
            for (p, (&i, set)) in self.idx.iter().zip(&self.sets).enumerate() {
                used += set[i].is_split() as usize;
                if used + self.min_suffix[p + 1] > self.budget {
                    overflow = Some(p);
                    break;
                }
            }
            match overflow {
                Some(p) => self.advance(p),
                None => {
                    let combo = self.idx.iter().zip(&self.sets).map(|(&i, s)| s[i]).collect();
                    let last = self.sets.len() - 1;
                    self.advance(last);
                    return Some((combo, used));
                }
            }
        }
        None
    }
}

struct Search<'a> {
    pred: &'a PartitionMap,
    cfg: &'a PostConfig,
    nodes: usize,
    context: String,
}

impl Search<'_> {
    fn count_node(&mut self) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.cfg.node_budget {
            return Err(Error::BudgetExceeded { budget: self.cfg.node_budget, context: self.context.clone() });
        }
        Ok(())
    }

    fn children(&self, cur: &PartitionMap, cus: &[FrontierCu], depth: usize, splits: usize) -> Option<Product> {
        if depth >= self.cfg.max_tree_depth || cus.is_empty() {
            return None;
        }
        let remaining = self.cfg.max_splits.map_or(usize::MAX, |m| m.saturating_sub(splits));
        let sets = cus.iter().map(|cu| candidate_modes(cu, cur, self.pred, self.cfg).iter().collect()).collect();
        Some(Product::new(sets, remaining))
    }

    fn build(&mut self, node: &mut MapNode) -> Result<()> {
        let Some(product) = self.children(&node.cur, &node.cus, node.tree_depth, node.splits) else {
            return Ok(());
        };
        for (modes, n) in product {
            self.count_node()?;
            let (cur, cus) = expand(&node.cur, &node.cus, &modes);
            let mut child = MapNode {
                cur,
                tree_depth: node.tree_depth + 1,
                cus,
                applied: modes,
                splits: node.splits + n,
                children: Vec::new(),
            };
            self.build(&mut child)?;
            node.children.push(child);
        }
        Ok(())
    }

    /// Streaming variant of `build` + selection: only the current path is
    /// kept in memory.
    fn stream(
        &mut self,
        cur: &PartitionMap,
        cus: &[FrontierCu],
        depth: usize,
        splits: usize,
        path: &mut Vec<(Vec<FrontierCu>, Vec<SplitMode>)>,
        best: &mut Option<(u64, SplitTree)>,
        tree: &MapTree,
    ) -> Result<()> {
        let product = self.children(cur, cus, depth, splits);
        let mut any_child = false;
        if let Some(product) = product {
            for (modes, n) in product {
                any_child = true;
                self.count_node()?;
                let (next, next_cus) = expand(cur, cus, &modes);
                path.push((cus.to_vec(), modes));
                self.stream(&next, &next_cus, depth + 1, splits + n, path, best, tree)?;
                path.pop();
            }
        }
        if !any_child {
            let err = map_error(cur, self.pred, &tree.region);
            if best.as_ref().is_none_or(|(e, _)| err <= *e) {
                let cand = (err, rebuild(tree, path.iter().map(|(c, m)| (c.as_slice(), m.as_slice()))));
                if best.as_ref().is_none_or(|b| candidate_order(&cand, b) == Ordering::Less) {
                    *best = Some(cand);
                }
            }
        }
        Ok(())
    }
}

/// Rebuilds the split tree of a search leaf from the decisions on its path.
fn rebuild<'a, I>(tree: &MapTree, path: I) -> SplitTree
where
    I: Iterator<Item = (&'a [FrontierCu], &'a [SplitMode])>,
{
    let mut decided: HashMap<CuGeometry, SplitMode> = HashMap::new();
    for (cus, modes) in path {
        for (cu, &m) in cus.iter().zip(modes) {
            decided.insert(cu.geom, m);
        }
    }
    fn grow(geom: CuGeometry, q: u8, s: u8, decided: &HashMap<CuGeometry, SplitMode>) -> SplitTree {
        let mode = decided.get(&geom).copied().unwrap_or(SplitMode::NoSplit);
        if mode == SplitMode::NoSplit {
            return SplitTree::leaf(geom, q, s);
        }
        let (cq, cs) = SplitTree::child_depths(mode, q, s);
        let children = apply_split(geom, mode)
            .expect("decided modes are legal")
            .into_iter()
            .map(|g| grow(g, cq, cs, decided))
            .collect();
        SplitTree { geometry: geom, mode, children, qt_depth: q, mtt_stage: s }
    }
    grow(tree.region, tree.root_qt_depth, 0, &decided)
}

fn root_node(region: CuGeometry, qt_depth: u8) -> MapNode {
    let mut cur = PartitionMap::zeros();
    cur.qd.fill_block(&region, qt_depth as i8);
    for n in 0..MTT_LAYERS {
        cur.md[n].fill_block(&region, qt_depth as i8);
    }
    MapNode {
        cur,
        tree_depth: 0,
        cus: vec![FrontierCu { geom: region, qt_depth, mtt_stage: 0 }],
        applied: Vec::new(),
        splits: 0,
        children: Vec::new(),
    }
}

/// Builds the explicit map tree of a whole CTU.
pub fn generate_map_tree(pred: &PartitionMap, cfg: &PostConfig) -> Result<MapTree> {
    generate_map_tree_region(pred, CuGeometry::CTU, 0, cfg)
}

/// Builds the explicit map tree below `region`, a block at QT depth
/// `qt_depth` with no MTT split above it.
pub fn generate_map_tree_region(
    pred: &PartitionMap,
    region: CuGeometry,
    qt_depth: u8,
    cfg: &PostConfig,
) -> Result<MapTree> {
    cfg.validate()?;
    let mut search = Search { pred, cfg, nodes: 1, context: format!("block {region}") };
    let mut root = root_node(region, qt_depth);
    search.build(&mut root)?;
    Ok(MapTree { region, root_qt_depth: qt_depth, root })
}

/// Picks the least-error leaf of a map tree.
pub fn select_best_path(tree: &MapTree, pred: &PartitionMap) -> Selection {
    fn visit<'a>(
        node: &'a MapNode,
        parent_cus: &'a [FrontierCu],
        tree: &MapTree,
        pred: &PartitionMap,
        path: &mut Vec<(&'a [FrontierCu], &'a [SplitMode])>,
        best: &mut Option<(u64, SplitTree)>,
    ) {
        if node.tree_depth > 0 {
            path.push((parent_cus, &node.applied));
        }
        if node.is_leaf() {
            let err = map_error(&node.cur, pred, &tree.region);
            let cand = (err, rebuild(tree, path.iter().copied()));
            if best.as_ref().is_none_or(|b| candidate_order(&cand, b) == Ordering::Less) {
                *best = Some(cand);
            }
        }
        for child in &node.children {
            visit(child, &node.cus, tree, pred, path, best);
        }
        if node.tree_depth > 0 {
            path.pop();
        }
    }
    let mut best = None;
    visit(&tree.root, &[], tree, pred, &mut Vec::new(), &mut best);
    let (error, tree) = best.expect("a map tree has at least one leaf");
    Selection { tree, error }
}

/// Reconstructs a standard-compliant split tree for a whole CTU.
pub fn reconstruct(pred: &PartitionMap, cfg: &PostConfig) -> Result<SplitTree> {
    Ok(reconstruct_region(pred, CuGeometry::CTU, 0, cfg)?.tree)
}

/// Search and selection below `region`. Equivalent to
/// [`generate_map_tree_region`] followed by [`select_best_path`], without
/// materializing the map tree.
pub fn reconstruct_region(
    pred: &PartitionMap,
    region: CuGeometry,
    qt_depth: u8,
    cfg: &PostConfig,
) -> Result<Selection> {
    cfg.validate()?;
    let shell = MapTree { region, root_qt_depth: qt_depth, root: root_node(region, qt_depth) };
    let mut search = Search { pred, cfg, nodes: 1, context: format!("block {region}") };
    let mut best = None;
    let root = &shell.root;
    search.stream(&root.cur, &root.cus, 0, 0, &mut Vec::new(), &mut best, &shell)?;
    let (error, tree) = best.expect("search always reaches a leaf");
    Ok(Selection { tree, error })
}

/// Reconstructs every CTU of a frame in parallel. Budget failures are
/// reported per CTU with its row/column.
pub fn reconstruct_frame(pred: &FramePartition, cfg: &PostConfig) -> Vec<Result<SplitTree>> {
    let cols = pred.cols();
    pred.ctus
        .par_iter()
        .enumerate()
        .map(|(i, map)| {
            reconstruct(map, cfg).map_err(|e| match e {
                Error::BudgetExceeded { budget, .. } => {
                    Error::BudgetExceeded { budget, context: format!("CTU row {} col {}", i / cols, i % cols) }
                }
                other => other,
            })
        })
        .collect()
}

/// Exhaustive reference: every legal tree below `region` with at most
/// `split_cap` splits, scored with [`path_error`].
pub fn brute_force_best_tree(
    pred: &PartitionMap,
    rules: &PartitionRules,
    region: CuGeometry,
    qt_depth: u8,
    split_cap: usize,
) -> Result<Selection> {
    const LIMIT: usize = 2_000_000;
    rules.validate()?;
    let trees = enumerate_trees(region, qt_depth, 0, split_cap, rules, LIMIT)?;
    let best = trees
        .into_iter()
        .map(|t| (path_error(&t, pred, &region), t))
        .min_by(candidate_order)
        .expect("the unsplit tree is always enumerated");
    Ok(Selection { error: best.0, tree: best.1 })
}

/// All legal trees below `geom` with at most `cap` splits.
pub fn enumerate_trees(
    geom: CuGeometry,
    q: u8,
    s: u8,
    cap: usize,
    rules: &PartitionRules,
    limit: usize,
) -> Result<Vec<SplitTree>> {
    let mut out = vec![SplitTree::leaf(geom, q, s)];
    if cap == 0 {
        return Ok(out);
    }
    for mode in legal_splits(geom, q, s, rules).iter().filter(|m| m.is_split()) {
        let (cq, cs) = SplitTree::child_depths(mode, q, s);
        let kids = apply_split(geom, mode)?;
        // partial child lists paired with the splits they use
        let mut partial: Vec<(Vec<SplitTree>, usize)> = vec![(Vec::new(), 1)];
        for g in kids {
            let options = enumerate_trees(g, cq, cs, cap - 1, rules, limit)?;
            let mut next = Vec::new();
            for (prefix, used) in &partial {
                for opt in &options {
                    let total = used + opt.split_count();
                    if total <= cap {
                        let mut v = prefix.clone();
                        v.push(opt.clone());
                        next.push((v, total));
                    }
                }
                if next.len() > limit {
                    return Err(Error::InvalidInput(format!("more than {limit} trees to enumerate")));
                }
            }
            partial = next;
        }
        for (children, _) in partial {
            out.push(SplitTree { geometry: geom, mode, children, qt_depth: q, mtt_stage: s });
        }
        if out.len() > limit {
            return Err(Error::InvalidInput(format!("more than {limit} trees to enumerate")));
        }
    }
    Ok(out)
}
