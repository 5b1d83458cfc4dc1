//! Accuracy metrics, level-set grids and trace-binned error analysis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::belief::{PursuerBelief, RngStream};
use crate::cspez::{linear_cspez, mc_cspez, quadratic_cspez, Method};
use crate::error::{Error, Result};
use crate::geom::{ez_value, idx, turn_center, EvaderState, PursuerParams, Side, Vec2};
use crate::surrogate::{Configuration, FeatureVector, MlpModel};

/// Error of one estimator against the Monte Carlo baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    pub aae: f64,
    pub max_ae: f64,
}

pub fn error_metrics(estimate: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::InvalidArgument("need equal, nonempty estimate and truth vectors".into()));
    }
    let n = estimate.len();
    let (mut se, mut ae, mut mx) = (0.0, 0.0, 0.0f64);
    for (e, t) in estimate.iter().zip(truth) {
        let d = (e - t).abs();
        se += d * d;
        ae += d;
        mx = mx.max(d);
    }
    let mse = se / n as f64;
    Ok(ErrorMetrics {
        n,
        mse,
        rmse: mse.sqrt(),
        aae: ae / n as f64,
        max_ae: mx,
    })
}

/// Fraction of absolute errors strictly below `threshold`.
pub fn fraction_below(estimate: &[f64], truth: &[f64], threshold: f64) -> f64 {
    let hits = estimate
        .iter()
        .zip(truth)
        .filter(|(e, t)| (*e - *t).abs() < threshold)
        .count();
    hits as f64 / estimate.len().max(1) as f64
}

/// Per-configuration record: covariance trace, baseline and estimates in
/// the order of [`ErrorReport::methods`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub trace: f64,
    pub truth: f64,
    pub estimates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub methods: Vec<Method>,
    pub metrics: Vec<ErrorMetrics>,
    pub records: Vec<ErrorRecord>,
}

impl ErrorReport {
    pub fn metric(&self, m: Method) -> Option<&ErrorMetrics> {
        self.methods.iter().position(|x| *x == m).map(|i| &self.metrics[i])
    }

    pub fn column(&self, m: Method) -> Option<Vec<f64>> {
        let i = self.methods.iter().position(|x| *x == m)?;
        Some(self.records.iter().map(|r| r.estimates[i]).collect())
    }

    pub fn truth(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.truth).collect()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.trace).collect()
    }

    /// `method,n,mse,rmse,aae,max_ae` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,n,mse,rmse,aae,max_ae\n");
        for (m, e) in self.methods.iter().zip(&self.metrics) {
            let _ = writeln!(s, "{},{},{},{},{},{}", m, e.n, e.mse, e.rmse, e.aae, e.max_ae);
        }
        s
    }
}

/// Runs `f(i)` for `i in 0..n` on up to `workers` threads, returning results
/// in index order.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for part in parts.iter_mut() {
        for (i, v) in part.drain(..) {
            out[i] = Some(v);
        }
    }
    out.into_iter().map(|v| v.expect("every index produced")).collect()
}

/// Estimates from one non-Monte-Carlo method.
fn estimate_one(method: Method, c: &Configuration, model: Option<&MlpModel>) -> Result<f64> {
    Ok(match method {
        Method::Linear => linear_cspez(&c.belief, &c.evader)?.probability,
        Method::Quadratic => quadratic_cspez(&c.belief, &c.evader)?.probability,
        Method::Nn => {
            let m = model.ok_or_else(|| Error::Model("the nn method needs a trained model".into()))?;
            m.predict(&FeatureVector::build(&c.belief, &c.evader, m.frame()))?
        }
        Method::Mc => return Err(Error::InvalidArgument("Monte Carlo is the baseline".into())),
    })
}

/// Compares methods against given baseline probabilities.
pub fn compare_on_labels(
    configs: &[Configuration],
    truth: &[f64],
    methods: &[Method],
    model: Option<&MlpModel>,
    workers: usize,
) -> Result<ErrorReport> {
    if configs.is_empty() || configs.len() != truth.len() {
        return Err(Error::InvalidArgument("need nonempty configurations with one label each".into()));
    }
    let nn_batch = if methods.contains(&Method::Nn) {
        let m = model.ok_or_else(|| Error::Model("the nn method needs a trained model".into()))?;
        let rows: Vec<_> = configs
            .iter()
            .map(|c| FeatureVector::build(&c.belief, &c.evader, m.frame()).0)
            .collect();
        Some(m.predict_batch(&rows)?)
    } else {
        None
    };
    let rows = par_map(configs.len(), workers, |i| -> Result<ErrorRecord> {
        let c = &configs[i];
        let estimates = methods
            .iter()
            .map(|&m| match (m, &nn_batch) {
                (Method::Nn, Some(b)) => Ok(b[i]),
                _ => estimate_one(m, c, model),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ErrorRecord {
            trace: c.belief.trace(),
            truth: truth[i],
            estimates,
        })
    });
    let records = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let t: Vec<f64> = records.iter().map(|r| r.truth).collect();
    let metrics = (0..methods.len())
        .map(|k| error_metrics(&records.iter().map(|r| r.estimates[k]).collect::<Vec<_>>(), &t))
        .collect::<Result<_>>()?;
    Ok(ErrorReport {
        methods: methods.to_vec(),
        metrics,
        records,
    })
}

/// Monte Carlo baseline per configuration (substream `i` of `rng`) and
/// comparison of the other methods against it.
pub fn compare_methods(
    configs: &[Configuration],
    mc_n: usize,
    methods: &[Method],
    model: Option<&MlpModel>,
    rng: &RngStream,
    workers: usize,
) -> Result<ErrorReport> {
    let truth = par_map(configs.len(), workers, |i| {
        mc_cspez(&configs[i].belief, &configs[i].evader, mc_n, &mut rng.substream(i as u64)).map(|e| e.probability)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    compare_on_labels(configs, &truth, methods, model, workers)
}

/// Uniform grid over an axis-aligned window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x: [-4.0, 4.0],
            y: [-4.0, 4.0],
            nx: 101,
            ny: 101,
        }
    }
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x[0], self.x[1], self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y[0], self.y[1], self.ny)
    }

    /// Cell centres in row-major order (`y` outer, `x` inner).
    pub fn points(&self) -> Vec<[f64; 2]> {
        let xs = self.xs();
        self.ys()
            .into_iter()
            .flat_map(|y| xs.iter().map(move |&x| [x, y]))
            .collect()
    }
}

/// Probability fields over a grid of evader positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub methods: Vec<Method>,
    /// Per method, row-major `ny × nx`.
    pub fields: Vec<Vec<f64>>,
    /// Monte Carlo baseline, row-major.
    pub mc: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl LevelSetGrid {
    pub fn field(&self, m: Method) -> Option<&[f64]> {
        if m == Method::Mc {
            return Some(&self.mc);
        }
        let i = self.methods.iter().position(|x| *x == m)?;
        Some(&self.fields[i])
    }

    pub fn abs_error(&self, m: Method) -> Option<Vec<f64>> {
        Some(self.field(m)?.iter().zip(&self.mc).map(|(p, q)| (p - q).abs()).collect())
    }

    /// Long format `x,y,method,p,abs_err`, Monte Carlo rows included.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,method,p,abs_err\n");
        let nx = self.xs.len();
        for (m, f) in std::iter::once((Method::Mc, &self.mc)).chain(self.methods.iter().copied().zip(&self.fields)) {
            for (k, p) in f.iter().enumerate() {
                let (x, y) = (self.xs[k % nx], self.ys[k / nx]);
                let _ = writeln!(s, "{},{},{},{},{}", x, y, m, p, (p - self.mc[k]).abs());
            }
        }
        s
    }
}

/// Evaluates the methods over a grid of evader positions with fixed heading
/// and speed. The Monte Carlo baseline at cell `k` draws from substream `k`.
#[allow(clippy::too_many_arguments)]
pub fn level_set_grid(
    belief: &PursuerBelief,
    heading: f64,
    speed: f64,
    grid: &GridSpec,
    methods: &[Method],
    mc_n: usize,
    model: Option<&MlpModel>,
    rng: &RngStream,
    thresholds: &[f64],
    workers: usize,
) -> Result<LevelSetGrid> {
    if grid.nx < 2 || grid.ny < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2 × 2".into()));
    }
    let pts = grid.points();
    let configs: Vec<Configuration> = pts
        .iter()
        .map(|p| {
            Ok(Configuration {
                belief: *belief,
                evader: EvaderState::new(Vec2::new(p[0], p[1]), heading, speed)?,
            })
        })
        .collect::<Result<_>>()?;
    let others: Vec<Method> = methods.iter().copied().filter(|m| *m != Method::Mc).collect();
    let report = compare_methods(&configs, mc_n, &others, model, rng, workers)?;
    Ok(LevelSetGrid {
        xs: grid.xs(),
        ys: grid.ys(),
        fields: others.iter().map(|&m| report.column(m).unwrap()).collect(),
        methods: others,
        mc: report.truth(),
        thresholds: thresholds.to_vec(),
    })
}

/// Fraction of the top-decile error cells lying within `radius` of either
/// mean turn centre.
pub fn top_decile_near_turn_centers(grid: &LevelSetGrid, method: Method, belief: &PursuerBelief, radius: f64) -> Option<f64> {
    let err = grid.abs_error(method)?;
    let mut sorted = err.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cut = sorted[(sorted.len() * 9) / 10];
    let m = belief.mean;
    let p = PursuerParams {
        position: Vec2::new(m[idx::X], m[idx::Y]),
        heading: m[idx::HEADING],
        turn_radius: m[idx::TURN_RADIUS],
        range: m[idx::RANGE].max(f64::MIN_POSITIVE),
        speed: m[idx::SPEED].max(f64::MIN_POSITIVE),
    };
    let centers = [turn_center(&p, Side::Left), turn_center(&p, Side::Right)];
    let nx = grid.xs.len();
    let (mut top, mut near) = (0usize, 0usize);
    for (k, e) in err.iter().enumerate() {
        if *e >= cut && *e > 0.0 {
            top += 1;
            let q = Vec2::new(grid.xs[k % nx], grid.ys[k / nx]);
            if centers.iter().any(|c| (q - *c).norm() <= radius) {
                near += 1;
            }
        }
    }
    Some(if top == 0 { 1.0 } else { near as f64 / top as f64 })
}

/// `z` at the mean pursuer over a grid: `(x, y, z)` rows.
pub fn csbez_grid(pursuer: &PursuerParams, heading: f64, speed: f64, grid: &GridSpec) -> Result<Vec<[f64; 3]>> {
    let xs = grid.xs();
    let ys = grid.ys();
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let e = EvaderState::new(Vec2::new(x, y), heading, speed)?;
            out.push([x, y, ez_value(&e, pursuer)?]);
        }
    }
    Ok(out)
}

/// Median absolute error per uniform trace bin for each method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBins {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub methods: Vec<Method>,
    /// Per method, per bin; `None` for empty bins.
    pub medians: Vec<Vec<Option<f64>>>,
    /// Per method: Spearman correlation between bin centre and median error
    /// over nonempty bins.
    pub spearman_binned: Vec<f64>,
    /// Per method: Spearman correlation between trace and absolute error
    /// over all samples.
    pub spearman_raw: Vec<f64>,
    pub empty_bins: Vec<usize>,
}

impl TraceBins {
    pub fn spearman(&self, m: Method) -> Option<f64> {
        self.methods.iter().position(|x| *x == m).map(|i| self.spearman_binned[i])
    }

    /// `bin_lo,bin_hi,method,median_err,count` rows; empty bins omitted.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,method,median_err,count\n");
        for (mi, m) in self.methods.iter().enumerate() {
            for b in 0..self.counts.len() {
                if let Some(med) = self.medians[mi][b] {
                    let _ = writeln!(s, "{},{},{},{},{}", self.edges[b], self.edges[b + 1], m, med, self.counts[b]);
                }
            }
        }
        s
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Ranks starting at 1 with ties given their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `0` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Groups absolute errors by covariance trace into `bins` uniform bins
/// spanning the observed traces.
pub fn trace_binned_errors(report: &ErrorReport, bins: usize) -> Result<TraceBins> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    if report.records.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let traces = report.traces();
    let (lo, hi) = traces
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let bin_of = |t: f64| (((t - lo) / width) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for &t in &traces {
        counts[bin_of(t)] += 1;
    }
    let centers: Vec<f64> = (0..bins).map(|b| 0.5 * (edges[b] + edges[b + 1])).collect();
    let truth = report.truth();
    let mut medians = Vec::new();
    let mut sb = Vec::new();
    let mut sr = Vec::new();
    for (mi, _) in report.methods.iter().enumerate() {
        let errs: Vec<f64> = report
            .records
            .iter()
            .zip(&truth)
            .map(|(r, t)| (r.estimates[mi] - t).abs())
            .collect();
        let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
        for (t, e) in traces.iter().zip(&errs) {
            per_bin[bin_of(*t)].push(*e);
        }
        let med: Vec<Option<f64>> = per_bin.iter_mut().map(|v| median(v)).collect();
        let (cx, my): (Vec<f64>, Vec<f64>) = centers
            .iter()
            .zip(&med)
            .filter_map(|(c, m)| m.map(|m| (*c, m)))
            .unzip();
        sb.push(spearman(&cx, &my));
        sr.push(spearman(&traces, &errs));
        medians.push(med);
    }
    Ok(TraceBins {
        edges,
        empty_bins: (0..bins).filter(|&b| counts[b] == 0).collect(),
        counts,
        methods: report.methods.clone(),
        medians,
        spearman_binned: sb,
        spearman_raw: sr,
    })
}
