//! Random trees and maps for tests, fuzzing and the gating simulator.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::map::{Grid, PartitionMap};
use crate::partition::{legal_splits, CuGeometry, PartitionRules, SplitMode, SplitTree, MTT_LAYERS};

/// Random legal tree below `geom`. Each node splits with probability
/// `split_prob` (uniformly among its legal split modes), and the total number
/// of splits never exceeds `max_splits`.
pub fn random_subtree<R: Rng + ?Sized>(
    rng: &mut R,
    geom: CuGeometry,
    qt_depth: u8,
    mtt_stage: u8,
    rules: &PartitionRules,
    split_prob: f64,
    max_splits: Option<usize>,
) -> SplitTree {
    let mut budget = max_splits.unwrap_or(usize::MAX);
    grow(rng, SplitTree::leaf(geom, qt_depth, mtt_stage), rules, split_prob, &mut budget)
}

pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, rules: &PartitionRules, split_prob: f64) -> SplitTree {
    random_subtree(rng, CuGeometry::CTU, 0, 0, rules, split_prob, None)
}

fn grow<R: Rng + ?Sized>(
    rng: &mut R,
    mut node: SplitTree,
    rules: &PartitionRules,
    split_prob: f64,
    budget: &mut usize,
) -> SplitTree {
    let modes: Vec<SplitMode> =
        legal_splits(node.geometry, node.qt_depth, node.mtt_stage, rules).iter().filter(|m| m.is_split()).collect();
    if *budget == 0 || modes.is_empty() || !rng.gen_bool(split_prob) {
        return node;
    }
    *budget -= 1;
    let mode = *modes.choose(rng).expect("nonempty");
    node.split(mode, rules).expect("mode drawn from legal set");
    node.children =
        std::mem::take(&mut node.children).into_iter().map(|c| grow(rng, c, rules, split_prob, budget)).collect();
    node
}

/// Adds ±1 noise to each depth cell with probability `p` and re-draws each
/// direction cell with probability `p`. The mask is left untouched.
pub fn perturb_map<R: Rng + ?Sized>(rng: &mut R, map: &PartitionMap, p: f64) -> PartitionMap {
    let mut out = map.clone();
    let mut depth = |g: &mut Grid| {
        for v in g.0.iter_mut().flatten() {
            if rng.gen_bool(p) {
                *v = (*v + if rng.gen_bool(0.5) { 1 } else { -1 }).max(0);
            }
        }
    };
    depth(&mut out.qd);
    for n in 0..MTT_LAYERS {
        depth(&mut out.md[n]);
    }
    for n in 0..MTT_LAYERS {
        for v in out.mdir[n].0.iter_mut().flatten() {
            if rng.gen_bool(p) {
                *v = rng.gen_range(-1..=1);
            }
        }
    }
    out
}

/// Uniformly random layers: depths in `0..=max_depth`, directions in -1..=1.
pub fn garbage_map<R: Rng + ?Sized>(rng: &mut R, max_depth: i8) -> PartitionMap {
    let mut depth = || Grid::from_fn(|_, _| rng.gen_range(0..=max_depth));
    let qd = depth();
    let md = [depth(), depth(), depth()];
    let mdir = [(); MTT_LAYERS].map(|_| Grid::from_fn(|_, _| rng.gen_range(-1..=1)));
    PartitionMap { qd, md, mdir, mask: rng.gen_bool(0.5) }
}
