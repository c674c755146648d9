use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tempfile::NamedTempFile;

use pmap_core::gating::{parse_pmask_sidecar, simulate_frame, CtuPrediction, GatingConfig};
use pmap_core::metrics::{self, Interpolation, RdPoint, TimeBreakdown, TimingConfig};
use pmap_core::pmap_io::{read_pmap, write_pmap};
use pmap_core::post::{reconstruct_frame, PostConfig};
use pmap_core::pwarp::{pwarp_residual, DepthField};
use pmap_core::raster_io::{read_depth_grid, read_flo, read_pgm, write_flo, write_residual};
use pmap_core::splitlog::{parse_split_log, write_split_log, FrameTrees};
use pmap_core::{FramePartition, PartitionRules, SplitTree};

use crate::{Command, Interp, MetricsCommand, ReportFormat, RulesArg};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert { log, out, size, rules } => convert(&log, &out, size.as_deref(), &rules),
        Command::Reconstruct { pmap, config, thqt, thmtt, out, rules } => {
            let mut cfg = PostConfig { rules: load_rules(&rules)?, ..PostConfig::default() };
            if let Some(path) = &config {
                cfg = cfg.apply_config(&read_text(path)?).with_context(|| path.display().to_string())?;
            }
            if let Some(t) = thqt {
                cfg.th_qt = if t == "inf" { usize::MAX } else { t.parse().context("--thqt")? };
            }
            if let Some(t) = thmtt {
                cfg.th_mtt = t;
            }
            cfg.validate()?;
            let text = reconstruct(&pmap, &cfg)?;
            emit(out.as_deref(), text.as_bytes())
        }
        Command::Gate { label, pred, pmask, config, level, th1, th2, dmax, format, out, rules } => {
            let mut cfg = GatingConfig { rules: load_rules(&rules)?, ..GatingConfig::default() };
            if let Some(path) = &config {
                cfg = cfg.apply_config(&read_text(path)?).with_context(|| path.display().to_string())?;
            }
            cfg.level = level.unwrap_or(cfg.level);
            cfg.th1 = th1.unwrap_or(cfg.th1);
            cfg.th2 = th2.unwrap_or(cfg.th2);
            cfg.d_max = dmax.unwrap_or(cfg.d_max);
            cfg.validate()?;
            let report = gate(&label, &pred, &pmask, &cfg)?;
            let text = match format {
                ReportFormat::Kv => report.to_kv(),
                ReportFormat::Csv => report.to_csv(),
            };
            emit(out.as_deref(), text.as_bytes())
        }
        Command::Pwarp { cur, reference, flow, depth_pmap, depth_grid, out, flow_out } => {
            let load_pgm = |p: &Path| read_pgm(&read_bytes(p)?).with_context(|| p.display().to_string());
            let cur = load_pgm(&cur)?;
            let reference = load_pgm(&reference)?;
            let flow = read_flo(&read_bytes(&flow)?).with_context(|| flow.display().to_string())?;
            let depth = match (depth_pmap, depth_grid) {
                (Some(p), _) => {
                    DepthField::from_frame(&read_pmap(&read_text(&p)?).with_context(|| p.display().to_string())?)
                }
                (None, Some(p)) => read_depth_grid(&read_bytes(&p)?).with_context(|| p.display().to_string())?,
                (None, None) => bail!("one of --depth-pmap or --depth-grid is required"),
            };
            let (residual, vp) = pwarp_residual(&cur, &reference, &flow, &depth)?;
            let mut files = vec![(out, write_residual(&residual))];
            if let Some(p) = flow_out {
                files.push((p, write_flo(&vp)));
            }
            write_all_atomic(&files)
        }
        Command::Metrics(m) => {
            let text = run_metrics(m)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_rules(arg: &RulesArg) -> Result<PartitionRules> {
    match &arg.rules {
        Some(p) => PartitionRules::parse_config(&read_text(p)?).with_context(|| p.display().to_string()),
        None => Ok(PartitionRules::default()),
    }
}

/// Writes every file through a temporary in its target directory; nothing
/// is renamed into place unless all contents were written.
fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::new();
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp =
            NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_all_atomic(&[(p.to_path_buf(), bytes.to_vec())]),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn parse_size(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| anyhow!("size must be WxH, got `{s}`"))?;
    Ok((w.trim().parse().context("frame width")?, h.trim().parse().context("frame height")?))
}

pub fn convert(log: &Path, out: &Path, size: Option<&str>, rules: &RulesArg) -> Result<()> {
    let rules = load_rules(rules)?;
    let size = size.map(parse_size).transpose()?;
    let frames = parse_split_log(&read_text(log)?, &rules, size).with_context(|| log.display().to_string())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files: Vec<_> = frames
        .iter()
        .map(|f| (out.join(format!("frame_{:04}.pmap", f.poc)), write_pmap(&f.to_partition()).into_bytes()))
        .collect();
    write_all_atomic(&files)
}

fn reconstruct(pmap: &Path, cfg: &PostConfig) -> Result<String> {
    let frame = read_pmap(&read_text(pmap)?).with_context(|| pmap.display().to_string())?;
    let results = reconstruct_frame(&frame, cfg);
    let mut ctus = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => ctus.push(t),
            Err(e) => {
                // the CTU falls back to an unsplit root; the others are kept
                eprintln!("warning: CTU {i}: {e}");
                ctus.push(SplitTree::root());
            }
        }
    }
    let trees = FrameTrees { poc: frame.poc, width: frame.width, height: frame.height, ctus };
    Ok(write_split_log(&[trees]))
}

fn gate(label: &Path, pred: &Path, pmask: &Path, cfg: &GatingConfig) -> Result<pmap_core::GatingReport> {
    let labels: FramePartition = read_pmap(&read_text(label)?).with_context(|| label.display().to_string())?;
    let preds_map = read_pmap(&read_text(pred)?).with_context(|| pred.display().to_string())?;
    labels.same_geometry(&preds_map)?;
    let side = parse_pmask_sidecar(&read_text(pmask)?).with_context(|| pmask.display().to_string())?;
    let cols = labels.cols();
    let mut p = vec![None; labels.ctus.len()];
    for (row, col, prob) in side {
        if row >= labels.rows() || col >= cols {
            bail!("{}: CTU ({row},{col}) outside the {}x{cols} grid", pmask.display(), labels.rows());
        }
        p[row * cols + col] = Some(prob);
    }
    let mut preds = Vec::with_capacity(p.len());
    for (i, prob) in p.into_iter().enumerate() {
        let (row, col) = (i / cols, i % cols);
        let p_mask = prob.ok_or_else(|| anyhow!("{}: no p_mask for CTU ({row},{col})", pmask.display()))?;
        preds.push(CtuPrediction { map: preds_map.ctus[i].clone(), p_mask, row, col });
    }
    Ok(simulate_frame(&labels, &preds, cfg)?)
}

fn rd_curve(path: &Path) -> Result<Vec<RdPoint>> {
    let rows = metrics::parse_rd_csv(&read_text(path)?).with_context(|| path.display().to_string())?;
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

fn ets_table(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let mut out = BTreeMap::new();
    for (i, raw) in read_text(path)?.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (qp, v) = line.split_once(',').ok_or_else(|| anyhow!("{}:{}: expected `qp,ets`", path.display(), i + 1))?;
        let Ok(qp) = qp.trim().parse::<i32>() else {
            if out.is_empty() {
                continue; // header
            }
            bail!("{}:{}: bad qp `{qp}`", path.display(), i + 1);
        };
        let v: f64 = v.trim().parse().with_context(|| format!("{}:{}: bad ets `{v}`", path.display(), i + 1))?;
        if out.insert(qp, v).is_some() {
            bail!("{}:{}: duplicate qp {qp}", path.display(), i + 1);
        }
    }
    Ok(out)
}

pub fn run_metrics(cmd: MetricsCommand) -> Result<String> {
    Ok(match cmd {
        MetricsCommand::Ets { anchor, test } => format!("ets={:.4}\n", metrics::ets(anchor, test)?),
        MetricsCommand::Eta { ets } => format!("eta={:.4}\n", metrics::eta(ets)?),
        MetricsCommand::Rho { enc, net, post } => {
            let rho = metrics::overhead_rho(&TimeBreakdown { t_enc: enc, t_net: net, t_post: post })?;
            format!("rho={:.4}\nrho_percent={:.4}\n", rho, rho * 100.0)
        }
        MetricsCommand::Bdrate { anchor, test, interp } => {
            let (a, t) = (rd_curve(&anchor)?, rd_curve(&test)?);
            let pick = |n: usize| match interp {
                Interp::Auto => metrics::default_interpolation(n),
                Interp::Spline => Interpolation::NaturalSpline,
                Interp::Pchip => Interpolation::Pchip,
            };
            format!("bdrate={:.4}\n", metrics::bd_rate_with(&a, &t, pick(a.len()), pick(t.len()))?)
        }
        MetricsCommand::Delta { total, basic, bdbr_total, bdbr_basic } => {
            let (de, db) = metrics::delta_metrics(&ets_table(&total)?, &ets_table(&basic)?, bdbr_total, bdbr_basic)?;
            format!("delta_ets={de:.4}\ndelta_bdbr={db:.4}\n")
        }
        MetricsCommand::Timestats { file, alpha, beta, min_m, max_m, no_outliers } => {
            let series = metrics::parse_timing(&read_text(&file)?).with_context(|| file.display().to_string())?;
            let cfg = TimingConfig { alpha, beta, min_m, max_m, outlier_after: (!no_outliers).then_some(8) };
            let mut it = series.into_iter();
            let r = metrics::robust_mean_time(&cfg, || it.next())?;
            format!("mean={:.4}\nm={}\nretained={}\nconverged={}\n", r.mean, r.m, r.retained, r.converged)
        }
    })
}
