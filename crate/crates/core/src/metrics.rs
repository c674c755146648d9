//! Evaluation arithmetic: time savings, overhead, BD-rate, robustness deltas
//! and the repeated-measurement timing protocol.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Encoding time saving `(anchor - test) / anchor`; negative for slowdowns.
pub fn ets(t_anchor: f64, t_test: f64) -> Result<f64> {
    if !(t_anchor > 0.0) || !t_test.is_finite() {
        return Err(invalid(format!("anchor time must be positive, got {t_anchor}")));
    }
    Ok((t_anchor - t_test) / t_anchor)
}

/// Speed-up factor `1 / (1 - ets)`.
pub fn eta(ets_value: f64) -> Result<f64> {
    if !(ets_value < 1.0) {
        return Err(invalid(format!("time saving must be < 1, got {ets_value}")));
    }
    Ok(1.0 / (1.0 - ets_value))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBreakdown {
    pub t_enc: f64,
    pub t_net: f64,
    pub t_post: f64,
}

impl TimeBreakdown {
    pub fn total(&self) -> f64 {
        self.t_enc + self.t_net + self.t_post
    }
}

/// Share of the pipeline spent outside the encoder.
pub fn overhead_rho(b: &TimeBreakdown) -> Result<f64> {
    if [b.t_enc, b.t_net, b.t_post].iter().any(|t| !(*t >= 0.0)) {
        return Err(invalid("times must be nonnegative"));
    }
    if b.total() <= 0.0 {
        return Err(invalid("total time must be positive"));
    }
    Ok((b.t_net + b.t_post) / b.total())
}

/// Average of the per-item overheads.
pub fn mean_of_rho(items: &[TimeBreakdown]) -> Result<f64> {
    if items.is_empty() {
        return Err(invalid("no time breakdowns"));
    }
    let sum = items.iter().map(overhead_rho).sum::<Result<f64>>()?;
    Ok(sum / items.len() as f64)
}

/// Overhead of the averaged times.
pub fn rho_of_means(items: &[TimeBreakdown]) -> Result<f64> {
    if items.is_empty() {
        return Err(invalid("no time breakdowns"));
    }
    let n = items.len() as f64;
    let mean = |f: fn(&TimeBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    overhead_rho(&TimeBreakdown { t_enc: mean(|b| b.t_enc), t_net: mean(|b| b.t_net), t_post: mean(|b| b.t_post) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bitrate: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// C2 spline with zero second derivative at both ends.
    NaturalSpline,
    /// Monotone (Fritsch–Carlson) piecewise cubic.
    Pchip,
}

/// Piecewise cubic in Hermite form: knot values and slopes.
#[derive(Debug, Clone)]
pub struct CubicCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl CubicCurve {
    pub fn fit(xs: &[f64], ys: &[f64], kind: Interpolation) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(invalid("need at least two knots"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("knots must be strictly increasing"));
        }
        let ds = match kind {
            Interpolation::NaturalSpline => natural_slopes(xs, ys),
            Interpolation::Pchip => pchip_slopes(xs, ys),
        };
        Ok(CubicCurve { xs: xs.to_vec(), ys: ys.to_vec(), ds })
    }

    /// Power-form coefficients of segment `i` in `t = x - x_i`.
    fn coeffs(&self, i: usize) -> [f64; 4] {
        let h = self.xs[i + 1] - self.xs[i];
        let s = (self.ys[i + 1] - self.ys[i]) / h;
        let (d0, d1) = (self.ds[i], self.ds[i + 1]);
        [self.ys[i], d0, (3.0 * s - 2.0 * d0 - d1) / h, (d0 + d1 - 2.0 * s) / (h * h)]
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        self.xs[1..n - 1].partition_point(|&k| k <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let t = x - self.xs[i];
        let [a, b, c, d] = self.coeffs(i);
        a + t * (b + t * (c + t * d))
    }

    /// Exact integral over `[lo, hi]` (within the knot range).
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let prim = |i: usize, t: f64| {
            let [a, b, c, d] = self.coeffs(i);
            t * (a + t * (b / 2.0 + t * (c / 3.0 + t * d / 4.0)))
        };
        let mut total = 0.0;
        for i in 0..self.xs.len() - 1 {
            let (x0, x1) = (self.xs[i].max(lo), self.xs[i + 1].min(hi));
            if x1 > x0 {
                total += prim(i, x1 - self.xs[i]) - prim(i, x0 - self.xs[i]);
            }
        }
        total
    }
}

fn natural_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let s: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    // second derivatives m with m[0] = m[n-1] = 0 (Thomas algorithm)
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag: Vec<f64> = (1..n - 1).map(|i| 2.0 * (h[i - 1] + h[i])).collect();
        let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (s[i] - s[i - 1])).collect();
        for j in 1..k {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * h[j];
            rhs[j] -= w * rhs[j - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for j in (0..k - 1).rev() {
            m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
        }
    }
    let mut d: Vec<f64> = (0..n - 1).map(|i| s[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0).collect();
    d.push(s[n - 2] + h[n - 2] * (m[n - 2] + 2.0 * m[n - 1]) / 6.0);
    d
}

fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let s: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    if n == 2 {
        return vec![s[0], s[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if s[k - 1] * s[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
        }
    }
    let edge = |h0: f64, h1: f64, s0: f64, s1: f64| {
        let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
        if d.signum() != s0.signum() {
            0.0
        } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
            3.0 * s0
        } else {
            d
        }
    };
    d[0] = edge(h[0], h[1], s[0], s[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
    d
}

/// Default interpolation for a curve with `n` points.
pub fn default_interpolation(n: usize) -> Interpolation {
    if n > 4 {
        Interpolation::Pchip
    } else {
        Interpolation::NaturalSpline
    }
}

fn log_rate_curve(points: &[RdPoint], kind: Interpolation) -> Result<CubicCurve> {
    if points.len() < 4 {
        return Err(invalid(format!("need at least 4 RD points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.bitrate > 0.0) || !p.psnr.is_finite()) {
        return Err(invalid("bitrates must be positive and PSNRs finite"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    let xs: Vec<f64> = pts.iter().map(|p| p.psnr).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.bitrate.log10()).collect();
    CubicCurve::fit(&xs, &ys, kind)
}

/// Bjøntegaard delta rate in percent, with the interpolation picked by the
/// number of points of each curve.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    bd_rate_with(anchor, test, default_interpolation(anchor.len()), default_interpolation(test.len()))
}

pub fn bd_rate_with(anchor: &[RdPoint], test: &[RdPoint], ka: Interpolation, kt: Interpolation) -> Result<f64> {
    let a = log_rate_curve(anchor, ka)?;
    let t = log_rate_curve(test, kt)?;
    let lo = a.xs[0].max(t.xs[0]);
    let hi = a.xs[a.xs.len() - 1].min(t.xs[t.xs.len() - 1]);
    if !(hi > lo) {
        return Err(invalid("RD curves have no overlapping PSNR range"));
    }
    let diff = (t.integrate(lo, hi) - a.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(diff) - 1.0) * 100.0)
}

/// `(ΔETS, ΔBDBR)` in percent: robustness of a method over an extended QP
/// set relative to the basic QPs.
pub fn delta_metrics(
    ets_total: &BTreeMap<i32, f64>,
    ets_basic: &BTreeMap<i32, f64>,
    bdbr_total: f64,
    bdbr_basic: f64,
) -> Result<(f64, f64)> {
    if ets_basic.is_empty() {
        return Err(invalid("basic QP set is empty"));
    }
    if let Some(qp) = ets_basic.keys().find(|qp| !ets_total.contains_key(qp)) {
        return Err(invalid(format!("basic QP {qp} missing from the total set")));
    }
    let ratio = ets_total.len() as f64 / ets_basic.len() as f64;
    let sum_total: f64 = ets_total.values().sum();
    let sum_basic: f64 = ets_basic.values().sum();
    if sum_basic == 0.0 {
        return Err(invalid("basic time savings sum to zero"));
    }
    if bdbr_basic == 0.0 {
        return Err(invalid("basic BD-rate is zero"));
    }
    let delta_ets = (sum_total / (ratio * sum_basic) - 1.0) * 100.0;
    let delta_bdbr = (bdbr_total / bdbr_basic - 1.0) * 100.0;
    Ok((delta_ets, delta_bdbr))
}

/// One-sided Student t quantile: `P(T <= t) = p` with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability must be in (0,1), got {p}")));
    }
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| invalid(format!("degrees of freedom {dof}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Quartiles by linear interpolation at rank `p·(n+1)` (exclusive method),
/// clamped to the sample range.
pub fn quartiles(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let at = |p: f64| {
        let pos = (p * (n + 1) as f64).clamp(1.0, n as f64) - 1.0;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < n {
            sorted[i] + f * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    (at(0.25), at(0.75))
}

/// Drops values outside the 1.5·IQR Tukey fences; order is preserved.
pub fn tukey_filter(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = quartiles(&sorted);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    values.iter().copied().filter(|v| (lo..=hi).contains(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    /// Probability that the relative deviation bound holds.
    pub alpha: f64,
    /// Allowed relative deviation of the mean.
    pub beta: f64,
    pub min_m: usize,
    pub max_m: usize,
    /// Apply Tukey fences once more than this many measurements exist.
    pub outlier_after: Option<usize>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { alpha: 0.99, beta: 0.01, min_m: 4, max_m: 64, outlier_after: Some(8) }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("alpha and beta must lie in (0,1)"));
        }
        if self.min_m < 2 || self.max_m < self.min_m {
            return Err(invalid(format!("need 2 <= min_m <= max_m, got {} and {}", self.min_m, self.max_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingResult {
    pub mean: f64,
    /// Measurements taken.
    pub m: usize,
    /// Measurements kept after outlier removal.
    pub retained: usize,
    pub converged: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Whether `2·(σ/√m)·t_α(m−1) < β·mean` holds for the sample.
pub fn precision_reached(xs: &[f64], alpha: f64, beta: f64) -> Result<bool> {
    if xs.len() < 2 {
        return Ok(false);
    }
    let (mean, sd) = mean_std(xs);
    let m = xs.len() as f64;
    let t = t_quantile(alpha, m - 1.0)?;
    Ok(2.0 * sd / m.sqrt() * t < beta * mean)
}

/// Measures until the mean is precise enough or `max_m` measurements were
/// taken. `next` yields one measurement per call; `None` ends the series
/// early. The result is flagged as unconverged in both stop cases.
pub fn robust_mean_time<F: FnMut() -> Option<f64>>(cfg: &TimingConfig, mut next: F) -> Result<TimingResult> {
    cfg.validate()?;
    let mut all: Vec<f64> = Vec::new();
    let mut kept: Vec<f64> = Vec::new();
    while all.len() < cfg.max_m {
        let Some(x) = next() else { break };
        if !(x > 0.0) || !x.is_finite() {
            return Err(invalid(format!("measurement {} is not a positive time: {x}", all.len() + 1)));
        }
        all.push(x);
        if all.len() < cfg.min_m {
            continue;
        }
        kept = match cfg.outlier_after {
            Some(after) if all.len() > after => tukey_filter(&all),
            _ => all.clone(),
        };
        if precision_reached(&kept, cfg.alpha, cfg.beta)? {
            let mean = kept.iter().sum::<f64>() / kept.len() as f64;
            return Ok(TimingResult { mean, m: all.len(), retained: kept.len(), converged: true });
        }
    }
    if all.is_empty() {
        return Err(invalid("no measurements"));
    }
    if kept.is_empty() {
        kept = all.clone();
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(TimingResult { mean, m: all.len(), retained: kept.len(), converged: false })
}

fn is_skippable(line: &str) -> bool {
    line.is_empty() || line.starts_with('#')
}

/// `qp,bitrate_kbps,psnr_db` lines; a non-numeric first line is a header.
pub fn parse_rd_csv(text: &str) -> Result<Vec<(i32, RdPoint)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if is_skippable(line) {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(err(format!("expected `qp,bitrate_kbps,psnr_db`, got `{line}`")));
        }
        if out.is_empty() && f[0].parse::<f64>().is_err() {
            continue;
        }
        let qp = f[0].parse().map_err(|_| err(format!("bad qp `{}`", f[0])))?;
        let bitrate = f[1].parse().map_err(|_| err(format!("bad bitrate `{}`", f[1])))?;
        let psnr = f[2].parse().map_err(|_| err(format!("bad psnr `{}`", f[2])))?;
        out.push((qp, RdPoint { bitrate, psnr }));
    }
    Ok(out)
}

/// Whitespace-separated seconds.
pub fn parse_timing(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if is_skippable(line) {
            continue;
        }
        for tok in line.split_whitespace() {
            let v = tok.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad time `{tok}`") })?;
            out.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(rates: &[f64], psnrs: &[f64]) -> Vec<RdPoint> {
        rates.iter().zip(psnrs).map(|(&bitrate, &psnr)| RdPoint { bitrate, psnr }).collect()
    }

    #[test]
    fn time_savings() {
        assert!((ets(100.0, 48.70).unwrap() - 0.5130).abs() < 1e-12);
        assert_eq!(ets(7.0, 7.0).unwrap(), 0.0);
        assert!((ets(100.0, 120.0).unwrap() + 0.2).abs() < 1e-12);
        assert!(ets(0.0, 1.0).is_err());
        assert_eq!(eta(0.5).unwrap(), 2.0);
        assert!(eta(1.0).is_err());
    }

    #[test]
    fn overhead() {
        let e = TimeBreakdown { t_enc: 48.87, t_net: 0.44, t_post: 0.03 };
        assert!((overhead_rho(&e).unwrap() - 0.0095).abs() < 2e-4);
        assert!(overhead_rho(&TimeBreakdown { t_enc: 0.0, t_net: 0.0, t_post: 0.0 }).is_err());
        let a = TimeBreakdown { t_enc: 1.0, t_net: 1.0, t_post: 0.0 };
        let b = TimeBreakdown { t_enc: 3.0, t_net: 0.0, t_post: 0.0 };
        assert_eq!(mean_of_rho(&[a, b]).unwrap(), 0.25);
        assert_eq!(rho_of_means(&[a, b]).unwrap(), 0.2);
    }

    #[test]
    fn spline_reproduces_cubic_pieces_and_lines() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        for kind in [Interpolation::NaturalSpline, Interpolation::Pchip] {
            let c = CubicCurve::fit(&xs, &ys, kind).unwrap();
            assert!((c.eval(1.7) - 2.4).abs() < 1e-12);
            assert!((c.integrate(0.5, 3.0) - (9.0 - 3.0 - 0.25 + 0.5)).abs() < 1e-12);
            for (x, y) in xs.iter().zip(&ys) {
                assert!((c.eval(*x) - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn natural_spline_has_zero_end_curvature() {
        let xs = [30.0, 33.0, 36.5, 40.0, 42.0];
        let ys = [2.0, 2.4, 2.9, 3.6, 3.9];
        let c = CubicCurve::fit(&xs, &ys, Interpolation::NaturalSpline).unwrap();
        for i in [0, 3] {
            let [_, _, c2, c3] = c.coeffs(i);
            let t = if i == 0 { 0.0 } else { xs[4] - xs[3] };
            assert!((2.0 * c2 + 6.0 * c3 * t).abs() < 1e-9);
        }
        // C2 at interior knots
        for i in 1..4 {
            let h = xs[i] - xs[i - 1];
            let [_, _, l2, l3] = c.coeffs(i - 1);
            let [_, _, r2, _] = c.coeffs(i);
            assert!((2.0 * l2 + 6.0 * l3 * h - 2.0 * r2).abs() < 1e-9);
        }
    }

    #[test]
    fn bd_rate_basics() {
        let a = curve(&[1000.0, 1800.0, 3300.0, 6000.0], &[32.0, 34.5, 37.0, 39.2]);
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
        let t: Vec<_> = a.iter().map(|p| RdPoint { bitrate: p.bitrate * 1.1, ..*p }).collect();
        assert!((bd_rate(&a, &t).unwrap() - 10.0).abs() < 1e-6);
        assert!(bd_rate(&a[..3], &a[..3]).is_err());
        let far: Vec<_> = a.iter().map(|p| RdPoint { psnr: p.psnr + 20.0, ..*p }).collect();
        assert!(bd_rate(&a, &far).is_err());
    }

    #[test]
    fn delta_examples() {
        let basic: BTreeMap<i32, f64> = [22, 27, 32, 37].into_iter().map(|q| (q, 0.5)).collect();
        let total: BTreeMap<i32, f64> = (20..40).map(|q| (q, 0.5)).collect();
        let (de, db) = delta_metrics(&total, &basic, 2.0, 2.0).unwrap();
        assert!(de.abs() < 1e-12 && db == 0.0);
        let partial: BTreeMap<i32, f64> = (30..40).map(|q| (q, 0.5)).collect();
        assert!(delta_metrics(&partial, &basic, 1.0, 1.0).is_err());
    }

    #[test]
    fn quantiles() {
        assert!((t_quantile(0.99, 3.0).unwrap() - 4.5407).abs() < 1e-3);
        assert!((t_quantile(0.99, 9.0).unwrap() - 2.8214).abs() < 1e-3);
    }

    #[test]
    fn timing_examples() {
        let cfg = TimingConfig::default();
        let mut it = std::iter::repeat(10.0);
        let r = robust_mean_time(&cfg, || it.next()).unwrap();
        assert_eq!(r, TimingResult { mean: 10.0, m: 4, retained: 4, converged: true });

        assert_eq!(tukey_filter(&[10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 100.0]), vec![10.0; 8]);

        // alternating series that never meets the bound stops at max_m
        let mut k = 0;
        let noisy = TimingConfig { max_m: 10, outlier_after: None, ..cfg };
        let r = robust_mean_time(&noisy, || {
            k += 1;
            Some(if k % 2 == 0 { 1.0 } else { 3.0 })
        })
        .unwrap();
        assert!(!r.converged && r.m == 10 && r.mean == 2.0);
    }

    #[test]
    fn csv_parsing() {
        let pts = parse_rd_csv("qp,kbps,psnr\n22, 5000,40.1\n# skip\n27,2500,38.0\n").unwrap();
        assert_eq!(
            pts,
            vec![(22, RdPoint { bitrate: 5000.0, psnr: 40.1 }), (27, RdPoint { bitrate: 2500.0, psnr: 38.0 })]
        );
        assert!(matches!(parse_rd_csv("22,1\n"), Err(Error::Parse { line: 1, .. })));
        assert_eq!(parse_timing("1.5 2\n\n3\n").unwrap(), vec![1.5, 2.0, 3.0]);
    }
}
