//! Per-regime `N x N` directed connectivity reconstructed from the factor
//! subspace, coefficient-wise significance tests and graph thresholding.
//!
//! Entry `[i, j]` of a lag matrix is the influence of channel `j` at time
//! `t - l` on channel `i` at time `t`, read as an edge `j -> i`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::factor::{estimate_pca, fit_var_ls, FactorModelFit};
use crate::linalg::symmetrize;
use crate::sskf::{InferenceResult, SwitchingSsm};
use crate::tsdata::{format_sig15, write_matrix_rows, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One loading matrix shared by all regimes.
    Coupled,
    /// Loadings refit on each regime's own time points.
    Decoupled,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Coupled => "coupled",
            Variant::Decoupled => "decoupled",
        })
    }
}

/// Estimates for one regime.
#[derive(Debug, Clone)]
pub struct RegimeEstimate {
    /// `P` matrices `N x N`.
    pub phi_y: Vec<DMatrix<f64>>,
    pub loadings_used: DMatrix<f64>,
    /// `P` matrices `r x r`.
    pub phi_f: Vec<DMatrix<f64>>,
    /// `Cov(f_t)` within the regime.
    pub factor_cov: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    /// Time points attributed to the regime.
    pub n_obs: usize,
    /// Per lag, same layout as `phi_y`. Empty until [`coeff_significance`].
    pub t_stats: Vec<DMatrix<f64>>,
    pub p_values: Vec<DMatrix<f64>>,
    pub significant: Vec<DMatrix<bool>>,
}

impl RegimeEstimate {
    fn new(
        loadings: DMatrix<f64>,
        phi_f: Vec<DMatrix<f64>>,
        factor_cov: DMatrix<f64>,
        innovation_cov: DMatrix<f64>,
        n_obs: usize,
    ) -> Self {
        let phi_y = phi_f
            .iter()
            .map(|f| &loadings * f * loadings.transpose())
            .collect();
        RegimeEstimate {
            phi_y,
            loadings_used: loadings,
            phi_f,
            factor_cov,
            innovation_cov,
            n_obs,
            t_stats: Vec::new(),
            p_values: Vec::new(),
            significant: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.loadings_used.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct RegimeConnectivity {
    pub per_regime: Vec<RegimeEstimate>,
    pub variant: Variant,
    /// Family-wise level; `None` until significance has been computed.
    pub alpha: Option<f64>,
    /// Tests per regime, `N^2 P`.
    pub n_tests: usize,
}

impl RegimeConnectivity {
    fn new(per_regime: Vec<RegimeEstimate>, variant: Variant) -> Self {
        let n_tests = per_regime
            .first()
            .map_or(0, |r| r.n_channels().pow(2) * r.phi_y.len());
        RegimeConnectivity {
            per_regime,
            variant,
            alpha: None,
            n_tests,
        }
    }

    pub fn k(&self) -> usize {
        self.per_regime.len()
    }

    pub fn order(&self) -> usize {
        self.per_regime.first().map_or(0, |r| r.phi_y.len())
    }

    /// Occupancy counts used by the tests.
    pub fn n_obs(&self) -> Vec<usize> {
        self.per_regime.iter().map(|r| r.n_obs).collect()
    }
}

/// `Q Phi_f^[j] Q'` with the Step-1 loadings and the EM coefficients.
/// Factor and innovation covariances come from the smoothed moments and the
/// EM estimate; `n_obs` is the smoothed hard-assignment count.
pub fn coupled_estimator(
    fm: &FactorModelFit,
    model: &SwitchingSsm,
    inference: &InferenceResult,
) -> Result<RegimeConnectivity> {
    if fm.r != model.r() || fm.loadings.shape() != model.loadings.shape() {
        return Err(Error::Dimension(format!(
            "factor model has r={} over {} channels, switching model has r={} over {}",
            fm.r,
            fm.n_channels(),
            model.r(),
            model.n_channels()
        )));
    }
    let k = model.k();
    if inference.smoothed_probs.ncols() != k {
        return Err(Error::Dimension(format!(
            "inference has {} regimes, model has {k}",
            inference.smoothed_probs.ncols()
        )));
    }
    let r = fm.r;
    let occupancy = inference.occupancy();
    let per_regime = (0..k)
        .map(|j| {
            let mut second = DMatrix::zeros(r, r);
            let mut weight = 0.0;
            for t in 0..inference.n_times() {
                let w = inference.smoothed_probs[(t, j)];
                let m = inference.smoothed_means[t].rows(0, r);
                second += (inference.smoothed_covs[t].view((0, 0), (r, r)) + m * m.transpose()) * w;
                weight += w;
            }
            let factor_cov = if weight > 0.0 {
                symmetrize(&(second / weight))
            } else {
                DMatrix::zeros(r, r)
            };
            RegimeEstimate::new(
                fm.loadings.clone(),
                model.regimes[j].phi.clone(),
                factor_cov,
                model.regimes[j].state_noise_cov.clone(),
                occupancy[j],
            )
        })
        .collect();
    Ok(RegimeConnectivity::new(per_regime, Variant::Coupled))
}

/// Refits the factor model and the factor VAR separately on each regime's
/// time points. `states` holds 0-based labels below `k`.
pub fn decoupled_estimator(
    d: &Dataset,
    states: &[usize],
    k: usize,
    r: usize,
    p: usize,
) -> Result<RegimeConnectivity> {
    if states.len() != d.n_times() {
        return Err(Error::Dimension(format!(
            "{} states for {} time points",
            states.len(),
            d.n_times()
        )));
    }
    if let Some(&s) = states.iter().find(|&&s| s >= k) {
        return Err(Error::InvalidArgument(format!("state {s} outside 0..{k}")));
    }
    let needed = r * p + 10;
    let mut per_regime = Vec::with_capacity(k);
    for j in 0..k {
        let rows: Vec<usize> = (0..states.len()).filter(|&t| states[t] == j).collect();
        if rows.len() < needed {
            return Err(Error::StarvedRegime {
                regime: j,
                count: rows.len(),
                needed,
            });
        }
        let sub = d.select_rows(&rows)?;
        let fm = estimate_pca(&sub, r)?;
        let var = fit_var_ls(&fm.factors, p, sub.segment_boundaries())?;
        let factor_cov = symmetrize(&(fm.factors.transpose() * &fm.factors / rows.len() as f64));
        per_regime.push(RegimeEstimate::new(
            fm.loadings,
            var.matrices,
            factor_cov,
            var.innovation_cov,
            rows.len(),
        ));
    }
    Ok(RegimeConnectivity::new(per_regime, Variant::Decoupled))
}

/// Which Kronecker covariance the coefficient variances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    /// `Var(Phi_y[i, c]) = (Q S Q')_ii (Q G^-1 Q')_cc / T_j`, the least-squares
    /// VAR asymptotic covariance `G^-1 (x) S` mapped through the loadings.
    #[default]
    Asymptotic,
    /// `(Q S Q')_cc (Q G Q')_ii / T_j`, the Kronecker product with the
    /// factor covariance itself. Not invariant to rescaling the data.
    Direct,
}

/// Two-sided normal test of every coefficient with Bonferroni correction
/// over the `N^2 P` coefficients of each regime. `S` is the innovation
/// covariance and `G` the factor covariance of the regime; for `P > 1` the
/// factor covariance enters only through its lag-0 block. Entries with
/// non-positive variance get `t = 0`, `p = 1`.
pub fn coeff_significance(
    rc: &mut RegimeConnectivity,
    t_regime: &[usize],
    alpha: f64,
) -> Result<()> {
    coeff_significance_with(rc, t_regime, alpha, CovarianceForm::Asymptotic)
}

pub fn coeff_significance_with(
    rc: &mut RegimeConnectivity,
    t_regime: &[usize],
    alpha: f64,
    form: CovarianceForm,
) -> Result<()> {
    if t_regime.len() != rc.k() {
        return Err(Error::Dimension(format!(
            "{} sample counts for {} regimes",
            t_regime.len(),
            rc.k()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha={alpha} must lie in (0, 1)"
        )));
    }
    let n_tests = rc.n_tests.max(1);
    let cutoff = alpha / n_tests as f64;
    for (reg, &tj) in rc.per_regime.iter_mut().zip(t_regime) {
        if tj == 0 {
            return Err(Error::InvalidArgument(
                "regime sample count must be >= 1".into(),
            ));
        }
        let q = &reg.loadings_used;
        let innov = projected_diag(q, &reg.innovation_cov);
        let (row_var, col_var) = match form {
            CovarianceForm::Asymptotic => {
                let g_inv = pseudo_inverse(&reg.factor_cov);
                (innov, projected_diag(q, &g_inv))
            }
            CovarianceForm::Direct => (projected_diag(q, &reg.factor_cov), innov),
        };
        let n = q.nrows();
        reg.t_stats.clear();
        reg.p_values.clear();
        reg.significant.clear();
        for phi in &reg.phi_y {
            let mut ts = DMatrix::zeros(n, n);
            let mut ps = DMatrix::from_element(n, n, 1.0);
            for c in 0..n {
                for i in 0..n {
                    let g = col_var[c] * row_var[i];
                    let b = phi[(i, c)];
                    if g > 0.0 && b != 0.0 {
                        let t = b / (g / tj as f64).sqrt();
                        ts[(i, c)] = t;
                        ps[(i, c)] = erfc(t.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
                    }
                }
            }
            reg.significant.push(ps.map(|v| v < cutoff));
            reg.t_stats.push(ts);
            reg.p_values.push(ps);
        }
    }
    rc.alpha = Some(alpha);
    Ok(())
}

/// Inverse on the range of a symmetric PSD matrix; directions with
/// eigenvalue below `1e-12` of the largest are dropped.
fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > top * 1e-12 && lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / lam;
        }
    }
    out
}

/// Diagonal of `Q M Q'` without forming the `N x N` product.
fn projected_diag(q: &DMatrix<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let qm = q * m;
    DVector::from_fn(q.nrows(), |i, _| qm.row(i).dot(&q.row(i)))
}

/// A directed edge `from -> to` (0-based channels, 1-based lag).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub regime: usize,
    pub from: usize,
    pub to: usize,
    pub lag: usize,
    pub weight: f64,
    pub t: f64,
    pub p: f64,
}

/// Significant coefficients with `|phi| > tau`, one list per regime.
pub fn threshold_graph(
    rc: &RegimeConnectivity,
    tau: f64,
    include_self_loops: bool,
) -> Result<Vec<Vec<Edge>>> {
    if rc.alpha.is_none() {
        return Err(Error::InvalidArgument(
            "significance must be computed before thresholding".into(),
        ));
    }
    Ok(rc
        .per_regime
        .iter()
        .enumerate()
        .map(|(j, reg)| {
            let mut edges = Vec::new();
            for (l, phi) in reg.phi_y.iter().enumerate() {
                let n = phi.nrows();
                for from in 0..n {
                    for to in 0..n {
                        if from == to && !include_self_loops {
                            continue;
                        }
                        let w = phi[(to, from)];
                        if reg.significant[l][(to, from)] && w.abs() > tau {
                            edges.push(Edge {
                                regime: j,
                                from,
                                to,
                                lag: l + 1,
                                weight: w,
                                t: reg.t_stats[l][(to, from)],
                                p: reg.p_values[l][(to, from)],
                            });
                        }
                    }
                }
            }
            edges
        })
        .collect())
}

/// Edge list CSV with 1-based regimes and channel names.
pub fn write_edges_csv<W: Write>(
    w: &mut W,
    edges: &[Vec<Edge>],
    names: &[String],
) -> std::io::Result<()> {
    writeln!(w, "regime,from,to,lag,weight,t,p,significant")?;
    for e in edges.iter().flatten() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},true",
            e.regime + 1,
            names[e.from],
            names[e.to],
            e.lag,
            format_sig15(e.weight),
            format_sig15(e.t),
            format_sig15(e.p)
        )?;
    }
    Ok(())
}

/// One lag matrix as headerless CSV, rows = target, columns = source.
pub fn write_matrix_csv<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    write_matrix_rows(w, m)
}

/// Sidecar describing the matrix exports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub direction: String,
    pub variant: Variant,
    pub n_regimes: usize,
    pub order: usize,
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    pub alpha: Option<f64>,
    pub n_tests: usize,
    pub covariance_form: CovarianceForm,
    pub tau: f64,
    pub include_self_loops: bool,
    pub regime_sample_counts: Vec<usize>,
    pub files: Vec<String>,
}

/// Adjacency summary: per regime, edge counts and the edges themselves.
#[derive(Debug, Clone, Serialize)]
pub struct AdjacencySummary {
    pub direction: String,
    pub tau: f64,
    pub alpha: Option<f64>,
    pub regimes: Vec<RegimeAdjacency>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeAdjacency {
    pub regime: usize,
    pub n_edges: usize,
    pub edges: Vec<Edge>,
}

impl AdjacencySummary {
    pub fn new(edges: &[Vec<Edge>], tau: f64, alpha: Option<f64>) -> Self {
        AdjacencySummary {
            direction: DIRECTION.into(),
            tau,
            alpha,
            regimes: edges
                .iter()
                .enumerate()
                .map(|(j, e)| RegimeAdjacency {
                    regime: j + 1,
                    n_edges: e.len(),
                    edges: e.clone(),
                })
                .collect(),
        }
    }
}

/// Direction convention recorded in every export.
pub const DIRECTION: &str =
    "column -> row: entry [i, j] is the effect of channel j at t-lag on channel i at t";

#[cfg(test)]
mod tests {
    use super::*;

    fn single(q: DMatrix<f64>, phi: DMatrix<f64>) -> RegimeConnectivity {
        let r = q.ncols();
        RegimeConnectivity::new(
            vec![RegimeEstimate::new(
                q,
                vec![phi],
                DMatrix::identity(r, r),
                DMatrix::identity(r, r),
                100,
            )],
            Variant::Coupled,
        )
    }

    fn orthonormal(n: usize, r: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, r, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64
        });
        g.qr().q().columns(0, r).into_owned()
    }

    #[test]
    fn identity_factor_dynamics_give_projector() {
        let q = orthonormal(6, 2);
        let rc = single(q.clone(), DMatrix::identity(2, 2));
        let proj = &q * q.transpose();
        assert!((&rc.per_regime[0].phi_y[0] - proj).amax() < 1e-12);
    }

    #[test]
    fn full_rank_identity_loadings_reproduce_phi_f() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.5]);
        let rc = single(DMatrix::identity(2, 2), phi.clone());
        assert_eq!(rc.per_regime[0].phi_y[0], phi);
    }

    #[test]
    fn zero_coefficients_are_not_significant() {
        let mut rc = single(orthonormal(5, 2), DMatrix::zeros(2, 2));
        coeff_significance(&mut rc, &[100], 0.05).unwrap();
        let reg = &rc.per_regime[0];
        assert!(reg.t_stats[0].iter().all(|&t| t == 0.0));
        assert!(reg.p_values[0].iter().all(|&p| p == 1.0));
        assert!(reg.significant[0].iter().all(|&s| !s));
    }

    #[test]
    fn bonferroni_cutoff_for_ninety_channels() {
        let q = orthonormal(90, 3);
        let mut rc = single(q, DMatrix::identity(3, 3) * 0.5);
        assert_eq!(rc.n_tests, 8100);
        coeff_significance(&mut rc, &[1970], 0.05).unwrap();
        let cutoff: f64 = 0.05 / 8100.0;
        assert!((cutoff - 6.17e-6).abs() < 1e-8);
        let reg = &rc.per_regime[0];
        for (p, s) in reg.p_values[0].iter().zip(reg.significant[0].iter()) {
            assert_eq!(*s, *p < cutoff);
        }
    }

    #[test]
    fn p_value_matches_normal_tail() {
        // t = 1.959964 has two-sided p = 0.05.
        let q = DMatrix::identity(1, 1);
        let b = 1.959963984540054 / 10.0;
        let mut rc = single(q, DMatrix::from_element(1, 1, b));
        coeff_significance(&mut rc, &[100], 0.5).unwrap();
        assert!((rc.per_regime[0].t_stats[0][(0, 0)] - 1.959963984540054).abs() < 1e-12);
        assert!((rc.per_regime[0].p_values[0][(0, 0)] - 0.05).abs() < 1e-9);
    }

    #[test]
    fn asymptotic_variance_uses_inverse_factor_covariance() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let mut rc = single(DMatrix::identity(2, 2), phi.clone());
        rc.per_regime[0].innovation_cov =
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        rc.per_regime[0].factor_cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25]));
        let mut direct = rc.clone();
        coeff_significance(&mut rc, &[100], 0.05).unwrap();
        coeff_significance_with(&mut direct, &[100], 0.05, CovarianceForm::Direct).unwrap();
        let sigma = [0.5, 2.0];
        let gamma = [4.0, 0.25];
        for i in 0..2 {
            for c in 0..2 {
                let asym = phi[(i, c)] / (sigma[i] / gamma[c] / 100.0f64).sqrt();
                let lit = phi[(i, c)] / (sigma[c] * gamma[i] / 100.0f64).sqrt();
                assert!((rc.per_regime[0].t_stats[0][(i, c)] - asym).abs() < 1e-10);
                assert!((direct.per_regime[0].t_stats[0][(i, c)] - lit).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn asymptotic_statistics_ignore_data_scale() {
        let q = orthonormal(6, 2);
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let mut base = single(q, phi);
        base.per_regime[0].factor_cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        base.per_regime[0].innovation_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]);
        let mut scaled = base.clone();
        scaled.per_regime[0].factor_cov *= 9.0;
        scaled.per_regime[0].innovation_cov *= 9.0;
        coeff_significance(&mut base, &[200], 0.05).unwrap();
        coeff_significance(&mut scaled, &[200], 0.05).unwrap();
        assert!((&base.per_regime[0].t_stats[0] - &scaled.per_regime[0].t_stats[0]).amax() < 1e-9);
    }

    #[test]
    fn thresholds_are_monotone() {
        let q = orthonormal(8, 3);
        let phi = DMatrix::from_row_slice(3, 3, &[0.6, 0.2, 0.0, -0.3, 0.4, 0.1, 0.05, 0.0, 0.5]);
        let mut rc = single(q, phi);
        coeff_significance(&mut rc, &[5000], 0.05).unwrap();
        let all = threshold_graph(&rc, 0.0, false).unwrap()[0].len();
        let some = threshold_graph(&rc, 0.05, false).unwrap()[0].len();
        let none = threshold_graph(&rc, f64::INFINITY, false).unwrap()[0].len();
        assert!(all >= some && none == 0);
        let sig_off = rc.per_regime[0].significant[0]
            .iter()
            .enumerate()
            .filter(|(k, &s)| s && k % 8 != k / 8)
            .count();
        assert_eq!(all, sig_off);
        let with_loops = threshold_graph(&rc, 0.0, true).unwrap()[0].len();
        assert!(with_loops >= all);

        let mut strict = rc.clone();
        coeff_significance(&mut strict, &[5000], 0.001).unwrap();
        assert!(threshold_graph(&strict, 0.0, false).unwrap()[0].len() <= all);
    }

    #[test]
    fn edges_run_column_to_row() {
        let mut phi = DMatrix::zeros(3, 3);
        phi[(2, 0)] = 0.8;
        let mut rc = single(DMatrix::identity(3, 3), phi);
        rc.per_regime[0].factor_cov = DMatrix::identity(3, 3);
        coeff_significance(&mut rc, &[1000], 0.05).unwrap();
        let edges = threshold_graph(&rc, 0.0, false).unwrap();
        assert_eq!(edges[0].len(), 1);
        assert_eq!(
            (edges[0][0].from, edges[0][0].to, edges[0][0].lag),
            (0, 2, 1)
        );
    }

    #[test]
    fn thresholding_requires_significance() {
        let rc = single(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        assert!(threshold_graph(&rc, 0.0, false).is_err());
    }

    #[test]
    fn starved_regime_is_reported() {
        let y = DMatrix::from_fn(40, 3, |i, j| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        let d = Dataset::from_values(y).unwrap();
        let mut states = vec![0; 40];
        states[10..13].fill(1);
        match decoupled_estimator(&d, &states, 2, 2, 1) {
            Err(Error::StarvedRegime {
                regime: 1,
                count: 3,
                needed: 12,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
