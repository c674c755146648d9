//! Dual-threshold gating and a split-search simulator.
//!
//! The simulator uses the number of split-mode evaluations as a proxy for
//! encoder effort: an ungated search evaluates every legal mode of every
//! node it reaches, recursively. Under gating, decisions taken from the
//! prediction (forced QT, skipped MTT, followed network modes) cost a single
//! evaluation each, and full RDO nodes evaluate all legal non-QT modes.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::FramePartition;
use crate::map::{decode_mtt_mode, map_to_tree_exact, prune_map, PartitionMap};
use crate::partition::{
    apply_split, legal_splits, CuGeometry, ModeSet, PartitionRules, SplitMode, SplitTree, MTT_LAYERS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingConfig {
    /// Number of predicted MTT layers trusted by `FOLLOW_NN`.
    pub level: usize,
    pub th1: f64,
    pub th2: f64,
    pub d_max: usize,
    pub rules: PartitionRules,
}

impl Default for GatingConfig {
    fn default() -> Self {
        GatingConfig { level: MTT_LAYERS, th1: 0.2, th2: 0.9, d_max: 7, rules: PartitionRules::default() }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.level > MTT_LAYERS {
            return Err(Error::InvalidInput(format!("level must be in 0..={MTT_LAYERS}, got {}", self.level)));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.th1) || !unit(self.th2) || self.th1 > self.th2 {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy 0 <= th1 <= th2 <= 1, got th1={} th2={}",
                self.th1, self.th2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CtuClass {
    MttEt,
    MttRdo,
    MttNn,
}

impl CtuClass {
    pub const ALL: [CtuClass; 3] = [CtuClass::MttEt, CtuClass::MttRdo, CtuClass::MttNn];

    pub fn name(self) -> &'static str {
        match self {
            CtuClass::MttEt => "MTT_ET",
            CtuClass::MttRdo => "MTT_RDO",
            CtuClass::MttNn => "MTT_NN",
        }
    }
}

impl fmt::Display for CtuClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `th2 == 1` disables the network-following class entirely.
pub fn classify_ctu(p_mask: f64, cfg: &GatingConfig) -> CtuClass {
    if p_mask < cfg.th1 {
        CtuClass::MttEt
    } else if p_mask >= cfg.th2 && cfg.th2 < 1.0 {
        CtuClass::MttNn
    } else {
        CtuClass::MttRdo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateAction {
    ForceQt,
    SkipMtt,
    FollowNn,
    FullRdo,
    Stop,
}

pub fn gate_node(depth: usize, qc: u8, qp_pred: u8, class: CtuClass, cfg: &GatingConfig) -> GateAction {
    if depth > cfg.d_max {
        return GateAction::Stop;
    }
    if qc < qp_pred {
        return GateAction::ForceQt;
    }
    match class {
        CtuClass::MttEt => GateAction::SkipMtt,
        CtuClass::MttNn => GateAction::FollowNn,
        CtuClass::MttRdo => GateAction::FullRdo,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtuPrediction {
    /// Post-processed predicted map.
    pub map: PartitionMap,
    pub p_mask: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatingReport {
    pub ctus: usize,
    pub mtt_et: usize,
    pub mtt_rdo: usize,
    pub mtt_nn: usize,
    pub nodes_full: u64,
    /// `rdo_evaluations + forced_decisions`.
    pub nodes_gated: u64,
    pub rdo_evaluations: u64,
    pub forced_decisions: u64,
    /// CTUs whose label tree lies inside the gated search space.
    pub label_reachable: usize,
    pub skip_ratio: f64,
}

impl GatingReport {
    pub fn class_count(&self, class: CtuClass) -> usize {
        match class {
            CtuClass::MttEt => self.mtt_et,
            CtuClass::MttRdo => self.mtt_rdo,
            CtuClass::MttNn => self.mtt_nn,
        }
    }

    pub fn et_ratio(&self) -> f64 {
        if self.ctus == 0 {
            0.0
        } else {
            self.mtt_et as f64 / self.ctus as f64
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "ctus={}", self.ctus).unwrap();
        for class in CtuClass::ALL {
            writeln!(s, "{}={}", class.name().to_lowercase(), self.class_count(class)).unwrap();
        }
        writeln!(s, "et_ratio={:.4}", self.et_ratio()).unwrap();
        writeln!(s, "nodes_full={}", self.nodes_full).unwrap();
        writeln!(s, "nodes_gated={}", self.nodes_gated).unwrap();
        writeln!(s, "rdo_evaluations={}", self.rdo_evaluations).unwrap();
        writeln!(s, "forced_decisions={}", self.forced_decisions).unwrap();
        writeln!(s, "label_reachable={}", self.label_reachable).unwrap();
        writeln!(s, "skip_ratio={:.4}", self.skip_ratio).unwrap();
        s
    }

    /// One `statistic,value` row per class and counter.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value\n");
        for line in self.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("key=value");
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }
}

pub fn et_ratio(preds: &[CtuPrediction], cfg: &GatingConfig) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no CTU predictions".into()));
    }
    let et = preds.iter().filter(|p| classify_ctu(p.p_mask, cfg) == CtuClass::MttEt).count();
    Ok(et as f64 / preds.len() as f64)
}

type NodeKey = (CuGeometry, u8, u8, usize);

/// Evaluations of the ungated exhaustive search below a node.
pub fn full_search_count(geom: CuGeometry, cfg: &GatingConfig) -> u64 {
    let mut memo = HashMap::new();
    full_count(geom, 0, 0, 0, cfg, &mut memo)
}

fn full_count(
    geom: CuGeometry,
    q: u8,
    s: u8,
    depth: usize,
    cfg: &GatingConfig,
    memo: &mut HashMap<(u16, u16, u8, u8, usize), u64>,
) -> u64 {
    if depth > cfg.d_max {
        return 1;
    }
    let key = (geom.w, geom.h, q, s, depth);
    if let Some(&n) = memo.get(&key) {
        return n;
    }
    let modes = legal_splits(geom, q, s, &cfg.rules);
    let mut n = modes.len() as u64;
    for mode in modes.iter().filter(|m| m.is_split()) {
        let (cq, cs) = SplitTree::child_depths(mode, q, s);
        for child in apply_split(geom, mode).expect("legal split") {
            n += full_count(child, cq, cs, depth + 1, cfg, memo);
        }
    }
    memo.insert(key, n);
    n
}

/// Gated search over one CTU.
struct Gate<'a> {
    pred: PartitionMap,
    class: CtuClass,
    cfg: &'a GatingConfig,
    memo: HashMap<NodeKey, (u64, u64)>,
}

impl<'a> Gate<'a> {
    fn new(pred: &PartitionMap, class: CtuClass, cfg: &'a GatingConfig) -> Self {
        Gate { pred: prune_map(pred, cfg.level), class, cfg, memo: HashMap::new() }
    }

    fn qp_pred(&self, geom: &CuGeometry) -> u8 {
        self.pred.qd.block_values(geom).max().unwrap_or(0).max(0) as u8
    }

    /// Action at a node together with the modes it explores and whether
    /// the decision is forced (one evaluation) or full RDO.
    fn decide(&self, geom: CuGeometry, q: u8, s: u8, depth: usize) -> (ModeSet, bool) {
        let legal = legal_splits(geom, q, s, &self.cfg.rules);
        let single = |m: SplitMode| ModeSet::from_iter([m]);
        let mut qp = self.qp_pred(&geom);
        if q < qp && !legal.contains(SplitMode::Quad) {
            qp = q;
        }
        let mut rdo = legal;
        rdo.remove(SplitMode::Quad);
        match gate_node(depth, q, qp, self.class, self.cfg) {
            GateAction::Stop | GateAction::SkipMtt => (single(SplitMode::NoSplit), true),
            GateAction::ForceQt => (single(SplitMode::Quad), true),
            GateAction::FullRdo => (rdo, false),
            GateAction::FollowNn => {
                if (s as usize) >= self.cfg.level {
                    return (rdo, false);
                }
                match decode_mtt_mode(&self.pred, &geom, s as usize) {
                    Some(m) if rdo.contains(m) => (single(m), true),
                    _ => (rdo, false),
                }
            }
        }
    }

    /// (rdo evaluations, forced decisions) below a node.
    fn count(&mut self, geom: CuGeometry, q: u8, s: u8, depth: usize) -> (u64, u64) {
        let key = (geom, q, s, depth);
        if let Some(&n) = self.memo.get(&key) {
            return n;
        }
        let (modes, forced) = self.decide(geom, q, s, depth);
        let (mut rdo, mut fixed) = if forced { (0, 1) } else { (modes.len() as u64, 0) };
        for mode in modes.iter().filter(|m| m.is_split()) {
            let (cq, cs) = SplitTree::child_depths(mode, q, s);
            for child in apply_split(geom, mode).expect("legal split") {
                let (r, f) = self.count(child, cq, cs, depth + 1);
                rdo += r;
                fixed += f;
            }
        }
        self.memo.insert(key, (rdo, fixed));
        (rdo, fixed)
    }

    fn reachable(&self, label: &SplitTree, depth: usize) -> bool {
        let (modes, _) = self.decide(label.geometry, label.qt_depth, label.mtt_stage, depth);
        modes.contains(label.mode) && label.children.iter().all(|c| self.reachable(c, depth + 1))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct CtuOutcome {
    class_idx: usize,
    rdo: u64,
    forced: u64,
    reachable: bool,
}

fn simulate_ctu(label: &PartitionMap, pred: &CtuPrediction, cfg: &GatingConfig) -> CtuOutcome {
    let class = classify_ctu(pred.p_mask, cfg);
    let mut gate = Gate::new(&pred.map, class, cfg);
    let (rdo, forced) = gate.count(CuGeometry::CTU, 0, 0, 0);
    let reachable = map_to_tree_exact(label, &cfg.rules).is_ok_and(|t| gate.reachable(&t, 0));
    let class_idx = CtuClass::ALL.iter().position(|&c| c == class).expect("known class");
    CtuOutcome { class_idx, rdo, forced, reachable }
}

pub fn simulate_frame(labels: &FramePartition, preds: &[CtuPrediction], cfg: &GatingConfig) -> Result<GatingReport> {
    cfg.validate()?;
    let (rows, cols) = (labels.rows(), labels.cols());
    if preds.len() != rows * cols {
        return Err(Error::GeometryMismatch(format!("{} predictions for a {rows}x{cols} CTU grid", preds.len())));
    }
    let mut seen = vec![false; rows * cols];
    for p in preds {
        if p.row >= rows || p.col >= cols {
            return Err(Error::GeometryMismatch(format!("prediction for CTU ({},{}) outside the grid", p.row, p.col)));
        }
        if !(0.0..=1.0).contains(&p.p_mask) {
            return Err(Error::InvalidInput(format!("p_mask {} of CTU ({},{}) outside [0,1]", p.p_mask, p.row, p.col)));
        }
        if std::mem::replace(&mut seen[p.row * cols + p.col], true) {
            return Err(Error::GeometryMismatch(format!("duplicate prediction for CTU ({},{})", p.row, p.col)));
        }
    }

    let per_ctu_full = full_search_count(CuGeometry::CTU, cfg);
    let outcomes: Vec<CtuOutcome> = preds.par_iter().map(|p| simulate_ctu(labels.ctu(p.row, p.col), p, cfg)).collect();

    let mut report = GatingReport { ctus: preds.len(), ..GatingReport::default() };
    let mut classes = [0usize; 3];
    for o in &outcomes {
        classes[o.class_idx] += 1;
        report.rdo_evaluations += o.rdo;
        report.forced_decisions += o.forced;
        report.label_reachable += o.reachable as usize;
    }
    [report.mtt_et, report.mtt_rdo, report.mtt_nn] = classes;
    report.nodes_full = per_ctu_full * preds.len() as u64;
    report.nodes_gated = report.rdo_evaluations + report.forced_decisions;
    report.skip_ratio = if report.nodes_full == 0 {
        0.0
    } else {
        (1.0 - report.nodes_gated as f64 / report.nodes_full as f64).clamp(0.0, 1.0)
    };
    Ok(report)
}

/// Parses a `row,col,p_mask` sidecar. Blank lines and `#` comments are skipped.
pub fn parse_pmask_sidecar(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(err(format!("expected `row,col,p_mask`, got `{line}`")));
        }
        let row = f[0].parse().map_err(|_| err(format!("bad row `{}`", f[0])))?;
        let col = f[1].parse().map_err(|_| err(format!("bad col `{}`", f[1])))?;
        let p: f64 = f[2].parse().map_err(|_| err(format!("bad probability `{}`", f[2])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(err(format!("probability {p} outside [0,1]")));
        }
        out.push((row, col, p));
    }
    Ok(out)
}
