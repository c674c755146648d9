//! Python bindings: `import pmap`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pmap_core::gating::{classify_ctu, simulate_frame, CtuPrediction, GatingConfig};
use pmap_core::map::{self, Grid};
use pmap_core::metrics::{self, RdPoint, TimeBreakdown, TimingConfig};
use pmap_core::partition::{GRID, MTT_LAYERS};
use pmap_core::post::{self, PostConfig};
use pmap_core::pwarp::{self, DepthField, FlowField, LumaRaster};
use pmap_core::{pmap_io, splitlog, FramePartition, PartitionRules, SplitMode};

fn err(e: pmap_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Rules", from_py_object)]
#[derive(Clone)]
struct PyRules(PartitionRules);

#[pymethods]
impl PyRules {
    #[new]
    #[pyo3(signature = (min_cu_side=4, max_qt_depth=4, max_mtt_stage=3, max_bt_side=64, max_tt_side=64))]
    fn new(
        min_cu_side: u16,
        max_qt_depth: u8,
        max_mtt_stage: u8,
        max_bt_side: u16,
        max_tt_side: u16,
    ) -> PyResult<Self> {
        let r = PartitionRules {
            min_cu_side,
            max_qt_depth,
            max_mtt_stage,
            max_bt_side,
            max_tt_side,
            allow_qt_after_mtt: false,
        };
        r.validate().map_err(err)?;
        Ok(PyRules(r))
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        PartitionRules::parse_config(text).map(PyRules).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

fn rules_or_default(r: Option<PyRules>) -> PartitionRules {
    r.map(|r| r.0).unwrap_or_default()
}

#[pyclass(name = "SplitTree", from_py_object)]
#[derive(Clone)]
struct PySplitTree(pmap_core::SplitTree);

#[pymethods]
impl PySplitTree {
    /// Builds a CTU tree from its preorder mode tokens (`NS`, `QT`, `BTH`, ...).
    #[staticmethod]
    #[pyo3(signature = (modes, rules=None))]
    fn from_preorder(modes: Vec<String>, rules: Option<PyRules>) -> PyResult<Self> {
        let modes = modes.iter().map(|m| m.parse::<SplitMode>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let mut it = modes.into_iter();
        let t =
            pmap_core::SplitTree::from_preorder(pmap_core::CuGeometry::CTU, 0, 0, &mut it, &rules_or_default(rules))
                .map_err(err)?;
        if it.next().is_some() {
            return Err(PyValueError::new_err("trailing modes after a complete tree"));
        }
        Ok(PySplitTree(t))
    }

    fn preorder(&self) -> Vec<String> {
        self.0.preorder_modes().iter().map(|m| m.token().to_string()).collect()
    }

    fn split_count(&self) -> usize {
        self.0.split_count()
    }

    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    /// Leaf rectangles as `(x, y, w, h)` within the CTU.
    fn leaves(&self) -> Vec<(u16, u16, u16, u16)> {
        self.0.leaves().iter().map(|l| (l.geometry.x, l.geometry.y, l.geometry.w, l.geometry.h)).collect()
    }

    #[pyo3(signature = (rules=None))]
    fn check(&self, rules: Option<PyRules>) -> PyResult<()> {
        self.0.check(&rules_or_default(rules)).map_err(err)
    }

    fn to_map(&self) -> PyPartitionMap {
        PyPartitionMap(map::tree_to_map(&self.0))
    }

    fn __eq__(&self, other: &PySplitTree) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("SplitTree({})", self.preorder().join(" "))
    }
}

type Rows = Vec<Vec<i8>>;

fn grid_rows(g: &Grid) -> Rows {
    g.0.iter().map(|r| r.to_vec()).collect()
}

fn rows_grid(rows: &Rows) -> PyResult<Grid> {
    if rows.len() != GRID || rows.iter().any(|r| r.len() != GRID) {
        return Err(PyValueError::new_err(format!("layers must be {GRID}x{GRID}")));
    }
    Ok(Grid::from_fn(|r, c| rows[r][c]))
}

#[pyclass(name = "PartitionMap", from_py_object)]
#[derive(Clone)]
struct PyPartitionMap(map::PartitionMap);

#[pymethods]
impl PyPartitionMap {
    #[new]
    #[pyo3(signature = (qd, md, mdir, mask=true))]
    fn new(qd: Rows, md: Vec<Rows>, mdir: Vec<Rows>, mask: bool) -> PyResult<Self> {
        if md.len() != MTT_LAYERS || mdir.len() != MTT_LAYERS {
            return Err(PyValueError::new_err(format!("md and mdir need {MTT_LAYERS} layers")));
        }
        let layers = |v: &Vec<Rows>| -> PyResult<[Grid; MTT_LAYERS]> {
            Ok([rows_grid(&v[0])?, rows_grid(&v[1])?, rows_grid(&v[2])?])
        };
        Ok(PyPartitionMap(map::PartitionMap { qd: rows_grid(&qd)?, md: layers(&md)?, mdir: layers(&mdir)?, mask }))
    }

    #[staticmethod]
    fn zeros() -> Self {
        PyPartitionMap(map::PartitionMap::zeros())
    }

    #[getter]
    fn qd(&self) -> Rows {
        grid_rows(&self.0.qd)
    }

    #[getter]
    fn md(&self) -> Vec<Rows> {
        self.0.md.iter().map(grid_rows).collect()
    }

    #[getter]
    fn mdir(&self) -> Vec<Rows> {
        self.0.mdir.iter().map(grid_rows).collect()
    }

    #[getter]
    fn mask(&self) -> bool {
        self.0.mask
    }

    /// Exact decoding; raises for maps that no legal tree produces.
    #[pyo3(signature = (rules=None))]
    fn to_tree(&self, rules: Option<PyRules>) -> PyResult<PySplitTree> {
        map::map_to_tree_exact(&self.0, &rules_or_default(rules)).map(PySplitTree).map_err(err)
    }

    /// `(valid, inconsistent_cells, inconsistency_error)`.
    #[pyo3(signature = (rules=None))]
    fn validate(&self, rules: Option<PyRules>) -> (bool, usize, f64) {
        let r = map::validate_map(&self.0, &rules_or_default(rules));
        (r.valid, r.inconsistent_cells, r.inconsistency_error)
    }

    fn prune(&self, level: usize) -> Self {
        PyPartitionMap(map::prune_map(&self.0, level))
    }

    fn __eq__(&self, other: &PyPartitionMap) -> bool {
        self.0 == other.0
    }
}

/// Post-processes a predicted map into a compliant tree.
#[pyfunction]
#[pyo3(signature = (pred, th_qt=0, th_mtt=0.0, rules=None, max_splits=None, node_budget=1_000_000))]
fn reconstruct(
    pred: &PyPartitionMap,
    th_qt: usize,
    th_mtt: f64,
    rules: Option<PyRules>,
    max_splits: Option<usize>,
    node_budget: usize,
) -> PyResult<PySplitTree> {
    let cfg =
        PostConfig { th_qt, th_mtt, max_splits, node_budget, rules: rules_or_default(rules), ..PostConfig::default() };
    post::reconstruct(&pred.0, &cfg).map(PySplitTree).map_err(err)
}

#[pyfunction]
fn derive_mtt_mask(qd_pred: Rows, md0_label: Rows) -> PyResult<bool> {
    Ok(map::derive_mtt_mask(&rows_grid(&qd_pred)?, &rows_grid(&md0_label)?))
}

/// Frames of a split log as `(poc, width, height, [SplitTree])`.
#[pyfunction]
#[pyo3(signature = (text, rules=None))]
fn parse_split_log(text: &str, rules: Option<PyRules>) -> PyResult<Vec<(u32, u32, u32, Vec<PySplitTree>)>> {
    let frames = splitlog::parse_split_log(text, &rules_or_default(rules), None).map_err(err)?;
    Ok(frames.into_iter().map(|f| (f.poc, f.width, f.height, f.ctus.into_iter().map(PySplitTree).collect())).collect())
}

#[pyfunction]
fn write_split_log(poc: u32, width: u32, height: u32, ctus: Vec<PySplitTree>) -> String {
    let frame = splitlog::FrameTrees { poc, width, height, ctus: ctus.into_iter().map(|t| t.0).collect() };
    splitlog::write_split_log(&[frame])
}

/// `(poc, width, height, [PartitionMap])` from PMAP1 text.
#[pyfunction]
fn read_pmap(text: &str) -> PyResult<(u32, u32, u32, Vec<PyPartitionMap>)> {
    let f = pmap_io::read_pmap(text).map_err(err)?;
    Ok((f.poc, f.width, f.height, f.ctus.into_iter().map(PyPartitionMap).collect()))
}

#[pyfunction]
fn write_pmap(poc: u32, width: u32, height: u32, ctus: Vec<PyPartitionMap>) -> PyResult<String> {
    let mut f = FramePartition::new(poc, width, height).map_err(err)?;
    if ctus.len() != f.ctus.len() {
        return Err(PyValueError::new_err(format!("{width}x{height} needs {} CTUs, got {}", f.ctus.len(), ctus.len())));
    }
    f.ctus = ctus.into_iter().map(|m| m.0).collect();
    Ok(pmap_io::write_pmap(&f))
}

/// `MTT_ET`, `MTT_RDO` or `MTT_NN`.
#[pyfunction]
#[pyo3(signature = (p_mask, th1=0.2, th2=0.9))]
fn classify(p_mask: f64, th1: f64, th2: f64) -> PyResult<&'static str> {
    let cfg = GatingConfig { th1, th2, ..GatingConfig::default() };
    cfg.validate().map_err(err)?;
    Ok(classify_ctu(p_mask, &cfg).name())
}

/// Gating simulation over a frame; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (width, height, labels, preds, p_mask, level=3, th1=0.2, th2=0.9, d_max=7, rules=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    width: u32,
    height: u32,
    labels: Vec<PyPartitionMap>,
    preds: Vec<PyPartitionMap>,
    p_mask: Vec<f64>,
    level: usize,
    th1: f64,
    th2: f64,
    d_max: usize,
    rules: Option<PyRules>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let mut frame = FramePartition::new(0, width, height).map_err(err)?;
    if labels.len() != frame.ctus.len() || preds.len() != labels.len() || p_mask.len() != labels.len() {
        return Err(PyValueError::new_err("labels, preds and p_mask must have one entry per CTU"));
    }
    frame.ctus = labels.into_iter().map(|m| m.0).collect();
    let cols = frame.cols();
    let preds: Vec<_> = preds
        .into_iter()
        .zip(p_mask)
        .enumerate()
        .map(|(i, (m, p))| CtuPrediction { map: m.0, p_mask: p, row: i / cols, col: i % cols })
        .collect();
    let cfg = GatingConfig { level, th1, th2, d_max, rules: rules_or_default(rules) };
    let r = simulate_frame(&frame, &preds, &cfg).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    for line in r.to_kv().lines() {
        let (k, _) = line.split_once('=').expect("key=value");
        match k {
            "et_ratio" => d.set_item(k, r.et_ratio())?,
            "skip_ratio" => d.set_item(k, r.skip_ratio)?,
            _ => d.set_item(k, line[k.len() + 1..].parse::<u64>().expect("integer counter"))?,
        }
    }
    Ok(d.unbind())
}

#[pyfunction]
fn ets(t_anchor: f64, t_test: f64) -> PyResult<f64> {
    metrics::ets(t_anchor, t_test).map_err(err)
}

#[pyfunction]
fn eta(ets_value: f64) -> PyResult<f64> {
    metrics::eta(ets_value).map_err(err)
}

#[pyfunction]
fn overhead_rho(t_enc: f64, t_net: f64, t_post: f64) -> PyResult<f64> {
    metrics::overhead_rho(&TimeBreakdown { t_enc, t_net, t_post }).map_err(err)
}

/// BD-rate in percent between `(bitrate, psnr)` curves.
#[pyfunction]
fn bd_rate(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<f64> {
    let pts = |v: Vec<(f64, f64)>| v.into_iter().map(|(bitrate, psnr)| RdPoint { bitrate, psnr }).collect::<Vec<_>>();
    metrics::bd_rate(&pts(anchor), &pts(test)).map_err(err)
}

#[pyfunction]
fn t_quantile(p: f64, dof: f64) -> PyResult<f64> {
    metrics::t_quantile(p, dof).map_err(err)
}

#[pyfunction]
fn tukey_filter(values: Vec<f64>) -> Vec<f64> {
    metrics::tukey_filter(&values)
}

/// `(mean, m, retained, converged)` over a recorded series.
#[pyfunction]
#[pyo3(signature = (series, alpha=0.99, beta=0.01, min_m=4, max_m=64))]
fn robust_mean_time(
    series: Vec<f64>,
    alpha: f64,
    beta: f64,
    min_m: usize,
    max_m: usize,
) -> PyResult<(f64, usize, usize, bool)> {
    let cfg = TimingConfig { alpha, beta, min_m, max_m, ..TimingConfig::default() };
    let mut it = series.into_iter();
    let r = metrics::robust_mean_time(&cfg, || it.next()).map_err(err)?;
    Ok((r.mean, r.m, r.retained, r.converged))
}

/// Residual (row-major ints) and adapted flow `(u, v)` for 8-bit luma planes
/// given as row-major lists; `depth` holds one value per 4x4 cell of the
/// 128-padded frame.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn pwarp_residual(
    width: usize,
    height: usize,
    cur: Vec<u8>,
    reference: Vec<u8>,
    u: Vec<f64>,
    v: Vec<f64>,
    depth: Vec<f64>,
) -> PyResult<(Vec<i16>, Vec<f64>, Vec<f64>)> {
    let cur = LumaRaster::new(width, height, cur).map_err(err)?;
    let reference = LumaRaster::new(width, height, reference).map_err(err)?;
    let flow = FlowField::new(width, height, u, v).map_err(err)?;
    let (cols, rows) = (width.div_ceil(128) * 32, height.div_ceil(128) * 32);
    let depth = DepthField::new(cols, rows, depth).map_err(err)?;
    let (res, vp) = pwarp::pwarp_residual(&cur, &reference, &flow, &depth).map_err(err)?;
    Ok((res.data, vp.u, vp.v))
}

#[pymodule]
fn pmap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRules>()?;
    m.add_class::<PySplitTree>()?;
    m.add_class::<PyPartitionMap>()?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(derive_mtt_mask, m)?)?;
    m.add_function(wrap_pyfunction!(parse_split_log, m)?)?;
    m.add_function(wrap_pyfunction!(write_split_log, m)?)?;
    m.add_function(wrap_pyfunction!(read_pmap, m)?)?;
    m.add_function(wrap_pyfunction!(write_pmap, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ets, m)?)?;
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(overhead_rho, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(t_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(tukey_filter, m)?)?;
    m.add_function(wrap_pyfunction!(robust_mean_time, m)?)?;
    m.add_function(wrap_pyfunction!(pwarp_residual, m)?)?;
    Ok(())
}
