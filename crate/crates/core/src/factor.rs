//! Principal-component estimation of the common factor model, BIC selection
//! of the number of factors, and least-squares VAR fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{clip_psd, companion, fix_sign, sorted_symmetric_eigen, symmetrize};
use crate::tsdata::{segments_of, Dataset};

/// Residual variance below this fraction of the total is treated as exact
/// zero when evaluating BIC.
const RESIDUAL_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FactorModelFit {
    /// `N x r` orthonormal loadings.
    pub loadings: DMatrix<f64>,
    /// `T x r` factor series, row `t` is `loadings' y_t`.
    pub factors: DMatrix<f64>,
    /// All `N` eigenvalues of `(1/T) sum_t y_t y_t'`, non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Diagonal of the residual covariance.
    pub noise_cov_diag: DVector<f64>,
    pub r: usize,
}

impl FactorModelFit {
    pub fn n_channels(&self) -> usize {
        self.loadings.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarCoeffs {
    pub order: usize,
    /// Lag matrices `Phi(1..P)`.
    pub matrices: Vec<DMatrix<f64>>,
    pub innovation_cov: DMatrix<f64>,
    /// Number of regression rows used.
    pub n_obs: usize,
}

impl VarCoeffs {
    pub fn companion(&self) -> DMatrix<f64> {
        companion(&self.matrices)
    }
}

/// Which covariance the eigenvectors are extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaRoute {
    /// `N x N` when `N <= T`, otherwise the `T x T` Gram matrix.
    Auto,
    Covariance,
    Gram,
}

struct EigenStructure {
    values: DVector<f64>,
    /// `N x m` leading eigenvectors, `m = min(N, T)` (or fewer).
    vectors: DMatrix<f64>,
}

fn eigen_structure(y: &DMatrix<f64>, route: PcaRoute, want: usize) -> EigenStructure {
    let (t, n) = y.shape();
    let tf = t as f64;
    let gram = match route {
        PcaRoute::Auto => n > t,
        PcaRoute::Covariance => false,
        PcaRoute::Gram => true,
    };
    if !gram {
        let cov = symmetrize(&(y.transpose() * y / tf));
        let (values, vectors) = sorted_symmetric_eigen(cov);
        let values = values.map(|v| v.max(0.0));
        return EigenStructure {
            values,
            vectors: vectors.columns(0, want).into_owned(),
        };
    }
    let g = symmetrize(&(y * y.transpose() / tf));
    let (mu, v) = sorted_symmetric_eigen(g);
    let mut values = DVector::zeros(n);
    for k in 0..n.min(t) {
        values[k] = mu[k].max(0.0);
    }
    let mut vectors = DMatrix::zeros(n, want);
    let top = mu[0].max(0.0);
    for k in 0..want {
        let mut q = if k < t && mu[k] > top * 1e-13 && mu[k] > 0.0 {
            y.transpose() * v.column(k) / (tf * mu[k]).sqrt()
        } else {
            DVector::zeros(n)
        };
        // Re-orthogonalize against earlier columns; fills directions the
        // Gram matrix cannot see (rank-deficient data) with a completion.
        orthonormalize_against(&mut q, &vectors, k);
        fix_sign(&mut q);
        vectors.set_column(k, &q);
    }
    EigenStructure { values, vectors }
}

fn orthonormalize_against(q: &mut DVector<f64>, basis: &DMatrix<f64>, k: usize) {
    let project_out = |v: &mut DVector<f64>| {
        for _ in 0..2 {
            for j in 0..k {
                let c = basis.column(j).dot(v);
                v.axpy(-c, &basis.column(j), 1.0);
            }
        }
    };
    project_out(q);
    if q.norm() > 1e-8 {
        q.normalize_mut();
        return;
    }
    for axis in 0..q.len() {
        let mut e = DVector::zeros(q.len());
        e[axis] = 1.0;
        project_out(&mut e);
        if e.norm() > 0.5 {
            *q = e.normalize();
            return;
        }
    }
}

/// PCA estimate of an `r`-factor model; picks the cheaper covariance route.
pub fn estimate_pca(d: &Dataset, r: usize) -> Result<FactorModelFit> {
    estimate_pca_via(d, r, PcaRoute::Auto)
}

pub fn estimate_pca_via(d: &Dataset, r: usize, route: PcaRoute) -> Result<FactorModelFit> {
    let y = d.values();
    let (t, n) = y.shape();
    if r == 0 || r > n.min(t) {
        return Err(Error::InvalidArgument(format!(
            "factor count r={r} must be in 1..={}",
            n.min(t)
        )));
    }
    if !crate::linalg::all_finite(y) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let es = eigen_structure(y, route, r);
    let loadings = es.vectors;
    let factors = y * &loadings;
    let resid = y - &factors * loadings.transpose();
    let noise_cov_diag =
        DVector::from_iterator(n, resid.column_iter().map(|c| c.norm_squared() / t as f64));
    Ok(FactorModelFit {
        loadings,
        factors,
        eigenvalues: es.values,
        noise_cov_diag,
        r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicSelection {
    pub r: usize,
    /// `bic_values[i]` is the criterion at `r = i + 1`.
    pub bic_values: Vec<f64>,
}

/// Chooses the number of factors minimizing
/// `ln(RSS(r) / NT) + r (N+T)/(NT) ln(NT/(N+T))`; ties go to the smaller `r`.
pub fn select_num_factors(d: &Dataset, max_r: usize) -> Result<BicSelection> {
    let y = d.values();
    let (t, n) = y.shape();
    if max_r == 0 || max_r > n.min(t) {
        return Err(Error::InvalidArgument(format!(
            "max factor count {max_r} must be in 1..={}",
            n.min(t)
        )));
    }
    let es = eigen_structure(y, PcaRoute::Auto, 1);
    bic_from_eigenvalues(es.values.as_slice(), n, t, max_r)
}

pub(crate) fn bic_from_eigenvalues(
    eigenvalues: &[f64],
    n: usize,
    t: usize,
    max_r: usize,
) -> Result<BicSelection> {
    let (nf, tf) = (n as f64, t as f64);
    let total: f64 = eigenvalues.iter().sum();
    let floor = (total / nf * RESIDUAL_FLOOR_REL).max(1e-300);
    let penalty = (nf + tf) / (nf * tf) * (nf * tf / (nf + tf)).ln();
    let mut bic_values = Vec::with_capacity(max_r);
    for r in 1..=max_r {
        // (1/NT) sum_t |e_t(r)|^2 equals the tail eigenvalue sum over N.
        let tail: f64 = eigenvalues[r.min(eigenvalues.len())..].iter().sum::<f64>() / nf;
        bic_values.push(tail.max(floor).ln() + r as f64 * penalty);
    }
    let mut best = 0;
    for (i, v) in bic_values.iter().enumerate() {
        if *v < bic_values[best] {
            best = i;
        }
    }
    Ok(BicSelection {
        r: best + 1,
        bic_values,
    })
}

/// Indices `t` usable as VAR(P) regression rows: `t - P .. t` all lie in the
/// same segment.
pub(crate) fn regression_rows(t: usize, boundaries: &[usize], p: usize) -> Vec<usize> {
    segments_of(t, boundaries)
        .into_iter()
        .flat_map(|seg| (seg.start + p)..seg.end.max(seg.start + p))
        .collect()
}

/// Stacks `[x_{t-1}', ..., x_{t-P}']` for each regression row.
pub(crate) fn lagged_design(series: &DMatrix<f64>, rows: &[usize], p: usize) -> DMatrix<f64> {
    let k = series.ncols();
    let mut x = DMatrix::zeros(rows.len(), k * p);
    for (i, &t) in rows.iter().enumerate() {
        for l in 0..p {
            x.view_mut((i, l * k), (1, k))
                .copy_from(&series.row(t - l - 1));
        }
    }
    x
}

pub(crate) fn select(series: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    series.select_rows(rows)
}

/// Splits a stacked `kP x k` coefficient block into lag matrices.
pub(crate) fn unstack_lags(b: &DMatrix<f64>, k: usize, p: usize) -> Vec<DMatrix<f64>> {
    (0..p)
        .map(|l| b.view((l * k, 0), (k, k)).transpose())
        .collect()
}

/// Least-squares VAR(P) without intercept. Rows whose lags straddle a
/// boundary are skipped; the residual covariance uses divisor `T_used - kP`.
pub fn fit_var_ls(series: &DMatrix<f64>, p: usize, boundaries: &[usize]) -> Result<VarCoeffs> {
    let (t, k) = series.shape();
    if p == 0 {
        return Err(Error::InvalidArgument("VAR order must be >= 1".into()));
    }
    let rows = regression_rows(t, boundaries, p);
    let used = rows.len();
    if used <= k * p + 1 {
        return Err(Error::RankDeficient(format!(
            "{used} usable rows for {} regressors",
            k * p
        )));
    }
    let x = lagged_design(series, &rows, p);
    let yt = select(series, &rows);
    let gram = x.transpose() * &x;
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::RankDeficient("regressor Gram matrix is not positive definite".into())
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(Error::RankDeficient(
            "regressor Gram matrix is ill-conditioned".into(),
        ));
    }
    let b = chol.solve(&(x.transpose() * &yt));
    let resid = &yt - &x * &b;
    let dof = (used - k * p) as f64;
    let innovation_cov = clip_psd(&(resid.transpose() * &resid / dof), 0.0);
    Ok(VarCoeffs {
        order: p,
        matrices: unstack_lags(&b, k, p),
        innovation_cov,
        n_obs: used,
    })
}
