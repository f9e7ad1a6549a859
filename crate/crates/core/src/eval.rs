//! Downstream evaluation of region embeddings: Lasso regression scored by
//! MAE/RMSE/R² under K-fold cross validation, and k-means clustering scored
//! by NMI/ARI.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LASSO_TOL: f64 = 1e-6;
const LASSO_MAX_SWEEPS: usize = 10_000;

/// Lasso model fitted on standardised features.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    /// Per-column means and standard deviations used for standardisation
    /// (a zero scale marks a constant column, whose weight stays 0).
    pub means: Array1<f64>,
    pub scales: Array1<f64>,
    /// Weights on the standardised columns.
    pub weights: Array1<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    /// Objective after each coordinate sweep.
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    /// Weights and intercept in the original feature scale.
    pub fn coefficients(&self) -> (Array1<f64>, f64) {
        let w = Array1::from_iter(
            self.weights
                .iter()
                .zip(&self.scales)
                .map(|(w, s)| if *s > 0.0 { w / s } else { 0.0 }),
        );
        let b = self.intercept - w.dot(&self.means);
        (w, b)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let (w, b) = self.coefficients();
        x.dot(&w) + b
    }
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{what} contains non-finite values")));
    }
    Ok(())
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Coordinate descent for `(1/2n)‖y − Xw − b‖² + α‖w‖₁` on column-standardised
/// `X`. Stops when the largest coordinate change in a sweep drops below 1e-6,
/// or after 10⁴ sweeps.
pub fn lasso_fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, alpha: f64) -> Result<LassoFit> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::validation("lasso needs at least 2 samples"));
    }
    if y.len() != n {
        return Err(Error::shape(format!("{} targets for {n} samples", y.len())));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config("lasso alpha must be positive"));
    }
    check_finite(x.iter().copied(), "feature matrix")?;
    check_finite(y.iter().copied(), "targets")?;

    let means = x.mean_axis(Axis(0)).expect("n >= 2");
    let scales = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 0.0 });
    let mut z = &x - &means;
    for (mut col, s) in z.axis_iter_mut(Axis(1)).zip(&scales) {
        if *s > 0.0 {
            col /= *s;
        } else {
            col.fill(0.0);
        }
    }
    let intercept = y.mean().expect("n >= 2");
    let mut residual = &y - intercept;
    let nf = n as f64;
    // column squared norms / n: 1 for standardised columns, 0 for constant ones
    let col_norm: Vec<f64> = z.axis_iter(Axis(1)).map(|c| c.dot(&c) / nf).collect();

    let objective = |r: &Array1<f64>, w: &Array1<f64>| {
        r.dot(r) / (2.0 * nf) + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
    };

    let mut weights = Array1::<f64>::zeros(d);
    let mut trace = Vec::new();
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..d {
            if col_norm[j] == 0.0 {
                continue;
            }
            let col = z.column(j);
            let old = weights[j];
            let rho = col.dot(&residual) / nf + col_norm[j] * old;
            let new = soft_threshold(rho, alpha) / col_norm[j];
            if new != old {
                residual.scaled_add(old - new, &col);
                weights[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        trace.push(objective(&residual, &weights));
        if max_delta < LASSO_TOL {
            break;
        }
    }
    Ok(LassoFit { means, scales, weights, intercept, sweeps, objective_trace: trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub fold_count: usize,
}

/// MAE, RMSE and `R² = 1 − SSE/SST` of predictions against truth.
/// `fold_count` is reported as 1.
pub fn regression_metrics(predicted: &[f64], truth: &[f64]) -> Result<RegressionReport> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape("predictions and targets must be non-empty and equal length"));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let (mut abs, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (p, t) in predicted.iter().zip(truth) {
        let e = t - p;
        abs += e.abs();
        sse += e * e;
        sst += (t - mean) * (t - mean);
    }
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(RegressionReport { mae: abs / n, rmse: (sse / n).sqrt(), r2, fold_count: 1 })
}

/// K-fold cross-validated Lasso. Region `i` is held out in fold `i mod K`;
/// metrics are computed on the pooled out-of-fold predictions.
pub fn regression_eval(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    alpha: f64,
    folds: usize,
) -> Result<RegressionReport> {
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::shape(format!("{} targets for {n} regions", targets.len())));
    }
    if folds < 2 || folds > n {
        return Err(Error::validation(format!("cannot run {folds}-fold CV on {n} regions")));
    }
    let mut predicted = vec![0.0; n];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
        let x_train = features.select(Axis(0), &train);
        let y_train = Array1::from_iter(train.iter().map(|&i| targets[i]));
        let fit = lasso_fit(x_train.view(), y_train.view(), alpha)?;
        let preds = fit.predict(features.select(Axis(0), &test).view());
        for (&i, p) in test.iter().zip(preds) {
            predicted[i] = p;
        }
    }
    let mut report = regression_metrics(&predicted, targets)?;
    report.fold_count = folds;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(data: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in best.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centre; take an unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select(Axis(0), &chosen)
}

fn assign(data: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = data
        .rows()
        .into_iter()
        .map(|row| {
            let (best, d) = centroids
                .rows()
                .into_iter()
                .enumerate()
                .map(|(c, centre)| (c, sq_dist(row, centre)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

fn lloyd(data: ArrayView2<'_, f64>, mut centroids: Array2<f64>) -> KMeansResult {
    let k = centroids.nrows();
    let (mut labels, mut inertia) = assign(data, &centroids);
    let mut trace = vec![inertia];
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &l) in data.rows().into_iter().zip(&labels) {
            let mut s = sums.row_mut(l);
            s += &row;
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / count as f64));
            }
            // an empty cluster keeps its previous centre
        }
        let (next, next_inertia) = assign(data, &centroids);
        trace.push(next_inertia);
        let changed = next != labels;
        labels = next;
        inertia = next_inertia;
        if !changed {
            break;
        }
    }
    KMeansResult { labels, centroids, inertia, inertia_trace: trace }
}

/// Lloyd's algorithm with k-means++ seeding, best of 10 restarts by inertia.
/// Restart `r` draws from a generator seeded with `seed + r`.
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.nrows();
    if k < 1 {
        return Err(Error::validation("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::validation(format!("k = {k} exceeds {n} points")));
    }
    check_finite(data.iter().copied(), "k-means input")?;
    let mut best: Option<KMeansResult> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
        let result = lloyd(data, plus_plus_seeds(data, k, &mut rng));
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

struct Contingency {
    n: f64,
    joint: HashMap<(usize, usize), f64>,
    a: HashMap<usize, f64>,
    b: HashMap<usize, f64>,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("label vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::validation("label vectors are empty"));
    }
    let mut c = Contingency { n: a.len() as f64, joint: HashMap::new(), a: HashMap::new(), b: HashMap::new() };
    for (&x, &y) in a.iter().zip(b) {
        *c.joint.entry((x, y)).or_default() += 1.0;
        *c.a.entry(x).or_default() += 1.0;
        *c.b.entry(y).or_default() += 1.0;
    }
    Ok(c)
}

fn entropy(counts: &HashMap<usize, f64>, n: f64) -> f64 {
    counts.values().map(|c| c / n).map(|p| -p * p.ln()).sum()
}

/// `I(a;b) / √(H(a)H(b))` in nats. Two single-cluster labelings score 1; a
/// single-cluster labeling against a split one scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let (ha, hb) = (entropy(&c.a, c.n), entropy(&c.b, c.n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = c
        .joint
        .iter()
        .map(|(&(x, y), &nxy)| {
            let pxy = nxy / c.n;
            pxy * (pxy * c.n * c.n / (c.a[&x] * c.b[&y])).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the pair-counting contingency formula.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let index: f64 = c.joint.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = c.a.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = c.b.values().map(|&v| pairs(v)).sum();
    let total = pairs(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both labelings trivial (all-in-one or all-singletons)
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub nmi: f64,
    pub ari: f64,
    pub k: usize,
}

/// k-means on the embedding rows, scored against reference labels.
pub fn clustering_eval(features: ArrayView2<'_, f64>, truth: &[usize], k: usize, seed: u64) -> Result<ClusteringReport> {
    let result = kmeans(features, k, seed)?;
    Ok(ClusteringReport { nmi: nmi(&result.labels, truth)?, ari: ari(&result.labels, truth)?, k })
}

/// Combined metric row for one embedding.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub regression: Option<RegressionReport>,
    pub clustering: Option<ClusteringReport>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "name,mae,rmse,r2,folds,nmi,ari,k";

    /// One flat CSV row matching [`Self::CSV_HEADER`]; absent metrics are empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let r = self.regression;
        let c = self.clustering;
        [
            self.name.clone(),
            opt(r.map(|r| r.mae.to_string())),
            opt(r.map(|r| r.rmse.to_string())),
            opt(r.map(|r| r.r2.to_string())),
            opt(r.map(|r| r.fold_count.to_string())),
            opt(c.map(|c| c.nmi.to_string())),
            opt(c.map(|c| c.ari.to_string())),
            opt(c.map(|c| c.k.to_string())),
        ]
        .join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(out, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Reads `region_id,value` targets, returned in region order.
pub fn read_value_targets<R: Read>(reader: R) -> Result<Vec<f64>> {
    read_targets(reader, "value", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
}

/// Reads `region_id,label` targets, returned in region order.
pub fn read_label_targets<R: Read>(reader: R) -> Result<Vec<usize>> {
    read_targets(reader, "label", |s| s.parse::<usize>().ok())
}

fn read_targets<R: Read, T>(reader: R, column: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["region_id", column] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `region_id,{column}`, found `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record[0].parse::<usize>().ok();
        let value = parse(&record[1]);
        match (id, value) {
            (Some(id), Some(v)) => rows.push((id, v)),
            _ => return Err(Error::Parse { line, message: format!("malformed target row `{}`", record.iter().collect::<Vec<_>>().join(",")) }),
        }
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
        return Err(Error::validation("target region ids must be dense 0..n"));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}
