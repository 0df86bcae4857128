//! Benchmark method: sliding-window ridge VAR coefficients clustered by
//! K-medians under the L1 distance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{lagged_design, regression_rows, select, unstack_lags};
use crate::tsdata::Dataset;

/// Coefficients of every window position.
#[derive(Debug, Clone)]
pub struct TvVarResult {
    pub window: usize,
    pub shift: usize,
    pub lambda: f64,
    pub order: usize,
    /// Window centers, `start + window / 2`.
    pub centers: Vec<usize>,
    /// Lag matrices `Phi(1..P)` concatenated column-major, length `N^2 P`.
    pub coeffs: Vec<DVector<f64>>,
}

/// Ridge solution `(X'X + lambda I)^-1 X'Y` returned as lag matrices.
pub fn ridge_var(
    series: &DMatrix<f64>,
    rows: &[usize],
    p: usize,
    lambda: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = series.ncols();
    let x = lagged_design(series, rows, p);
    let y = select(series, rows);
    let mut gram = x.transpose() * &x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("ridge system is singular; increase lambda".into()))?;
    let b = chol.solve(&(x.transpose() * y));
    if !crate::linalg::all_finite(&b) {
        return Err(Error::NonFinite("ridge coefficients".into()));
    }
    Ok(unstack_lags(&b, n, p))
}

pub fn vectorize(phi: &[DMatrix<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        phi.iter().map(|m| m.len()).sum(),
        phi.iter().flat_map(|m| m.iter().copied()),
    )
}

pub fn unvectorize(v: &DVector<f64>, n: usize, p: usize) -> Vec<DMatrix<f64>> {
    (0..p)
        .map(|l| DMatrix::from_column_slice(n, n, &v.as_slice()[l * n * n..(l + 1) * n * n]))
        .collect()
}

/// Ridge VAR(P) on every window `[s, s + window)`, `s = 0, shift, ...`.
/// Each window is centered before fitting. Windows that contain a segment
/// boundary only use regression rows whose lags stay inside one segment.
pub fn sliding_ridge_tvvar(
    d: &Dataset,
    window: usize,
    shift: usize,
    lambda: f64,
    p: usize,
) -> Result<TvVarResult> {
    let t = d.n_times();
    if p == 0 || window <= p {
        return Err(Error::InvalidArgument(format!(
            "window {window} must exceed the VAR order {p} (>= 1)"
        )));
    }
    if window > t {
        return Err(Error::InvalidArgument(format!(
            "window {window} is longer than the series ({t})"
        )));
    }
    if shift == 0 {
        return Err(Error::InvalidArgument("window shift must be >= 1".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda={lambda} must be >= 0"
        )));
    }
    let starts: Vec<usize> = (0..=t - window).step_by(shift).collect();
    let coeffs = starts
        .par_iter()
        .map(|&s| {
            let mut block = d.values().rows(s, window).into_owned();
            let mean = block.row_mean();
            for mut row in block.row_iter_mut() {
                row -= &mean;
            }
            let local: Vec<usize> = d
                .segment_boundaries()
                .iter()
                .filter(|&&b| b > s && b < s + window)
                .map(|&b| b - s)
                .collect();
            let rows = regression_rows(window, &local, p);
            if rows.is_empty() {
                return Err(Error::RankDeficient(format!(
                    "window starting at {s} has no usable regression rows"
                )));
            }
            Ok(vectorize(&ridge_var(&block, &rows, p, lambda)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TvVarResult {
        window,
        shift,
        lambda,
        order: p,
        centers: starts.iter().map(|s| s + window / 2).collect(),
        coeffs,
    })
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub k: usize,
    /// 0-based cluster per feature vector.
    pub labels: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    /// Total L1 distance of points to their centroids.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning start.
    pub inertia_trace: Vec<f64>,
}

fn l1(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn nearest(x: &DVector<f64>, centroids: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let dist = l1(x, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Coordinatewise median, the L1-optimal center.
pub fn coordinate_median(points: &[&DVector<f64>]) -> DVector<f64> {
    let dim = points[0].len();
    let mut buf = vec![0.0; points.len()];
    DVector::from_fn(dim, |i, _| {
        for (b, p) in buf.iter_mut().zip(points) {
            *b = p[i];
        }
        median(&mut buf)
    })
}

/// Seeding with probability proportional to the L1 distance to the
/// closest chosen center.
fn seed_centroids(x: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    let mut dist: Vec<f64> = x.iter().map(|p| l1(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = x.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..x.len())
        };
        let c = x[pick].clone();
        for (d, p) in dist.iter_mut().zip(x) {
            *d = d.min(l1(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(x: &[DVector<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let mut centroids = seed_centroids(x, k, rng);
    let mut labels = vec![usize::MAX; x.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dist = vec![0.0; x.len()];
        for (i, p) in x.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            changed |= labels[i] != j;
            labels[i] = j;
            dist[i] = d;
        }
        // Empty clusters take the point farthest from its centroid.
        for j in 0..k {
            if labels.contains(&j) {
                continue;
            }
            let mut far = None;
            for i in 0..x.len() {
                let own = labels[i];
                if labels.iter().filter(|&&l| l == own).count() < 2 {
                    continue;
                }
                if far.is_none_or(|f: usize| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                labels[i] = j;
                dist[i] = 0.0;
                changed = true;
            }
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = x
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *c = coordinate_median(&members);
            }
        }
        let inertia: f64 = x
            .iter()
            .zip(&labels)
            .map(|(p, &l)| l1(p, &centroids[l]))
            .sum();
        trace.push(inertia);
        if !changed {
            break;
        }
    }
    KMeansResult {
        k,
        labels,
        inertia: *trace.last().expect("at least one iteration"),
        centroids,
        inertia_trace: trace,
    }
}

/// K-medians under L1 with `n_init` seeded starts; the start with the
/// smallest inertia wins (earliest on ties).
pub fn kmeans_l1(
    features: &[DVector<f64>],
    k: usize,
    n_init: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansResult> {
    if k == 0 || k > features.len() {
        return Err(Error::InvalidArgument(format!(
            "K={k} must be in 1..={}",
            features.len()
        )));
    }
    if n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be >= 1".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Dimension("feature vectors differ in length".into()));
    }
    if features.iter().any(|f| !f.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("K-means features".into()));
    }
    let runs: Vec<KMeansResult> = (0..n_init)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            lloyd(features, k, max_iter, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("n_init >= 1"))
}

/// Per-time-point labels: each time point takes the label of the window
/// whose center is nearest (earlier window on ties).
pub fn expand_labels(centers: &[usize], labels: &[usize], t: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(t);
    let mut w = 0;
    for time in 0..t {
        while w + 1 < centers.len() && centers[w + 1].abs_diff(time) < centers[w].abs_diff(time) {
            w += 1;
        }
        out.push(labels[w]);
    }
    out
}

/// Ridge VAR per regime on the regression rows labelled with that regime.
/// Rows whose lags cross a segment boundary are skipped; a regime with no
/// usable rows gets zero coefficients.
pub fn regime_ridge_estimates(
    d: &Dataset,
    labels: &[usize],
    k: usize,
    p: usize,
    lambda: f64,
) -> Result<Vec<Vec<DMatrix<f64>>>> {
    if labels.len() != d.n_times() {
        return Err(Error::Dimension(format!(
            "{} labels for {} time points",
            labels.len(),
            d.n_times()
        )));
    }
    let rows = regression_rows(d.n_times(), d.segment_boundaries(), p);
    let n = d.n_channels();
    (0..k)
        .map(|j| {
            let mine: Vec<usize> = rows.iter().copied().filter(|&t| labels[t] == j).collect();
            if mine.is_empty() {
                return Ok(vec![DMatrix::zeros(n, n); p]);
            }
            ridge_var(d.values(), &mine, p, lambda)
        })
        .collect()
}
