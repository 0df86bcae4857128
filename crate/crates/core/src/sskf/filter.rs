//! Switching Kalman filter.
//!
//! Second-order generalized pseudo-Bayesian recursion: at every step each
//! (previous regime `i`, current regime `j`) pair gets its own Kalman update,
//! and the `K^2` Gaussians are collapsed back to one per current regime by
//! moment matching.

use nalgebra::{DMatrix, DVector};

use super::model::{ObsPrecomp, SwitchingSsm};
use super::PROB_FLOOR;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::tsdata::Dataset;

/// Forward-pass output, consumed by [`super::sks_smooth`].
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `T x K`, row `t` is `P(S_t = j | y_1..t)`.
    pub filtered_probs: DMatrix<f64>,
    /// `means[t][j] = E[F_t | y_1..t, S_t = j]`.
    pub means: Vec<Vec<DVector<f64>>>,
    pub covs: Vec<Vec<DMatrix<f64>>>,
    /// `sum_t ln p(y_t | y_1..t-1)` under the collapsed predictive mixture.
    pub loglik: f64,
}

impl FilterOutput {
    pub fn n_times(&self) -> usize {
        self.filtered_probs.nrows()
    }

    /// Regime-marginal filtered mean at `t`.
    pub fn mean(&self, t: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.means[t][0].len());
        for (j, m) in self.means[t].iter().enumerate() {
            out.axpy(self.filtered_probs[(t, j)], m, 1.0);
        }
        out
    }
}

pub(crate) struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Conditions a predicted state on `y_t` and returns the posterior together
/// with `ln p(y_t | prediction)`.
pub(crate) fn kalman_update(
    pred_mean: &DVector<f64>,
    pred_cov: &DMatrix<f64>,
    obs: &ObsPrecomp,
    t: usize,
) -> Result<(Gaussian, f64)> {
    let r = obs.c.nrows();
    let vff = pred_cov.view((0, 0), (r, r));
    let f = pred_mean.rows(0, r);
    let m = DMatrix::identity(r, r) + &obs.c * vff;
    let lu = m.lu();
    let det = lu.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::SingularInnovation(t));
    }
    let cf = &obs.c * f;
    let g = &obs.u[t] - &cf;
    let v_top = pred_cov.rows(0, r); // r x d
    let mut rhs = DMatrix::zeros(r, 1 + pred_cov.ncols());
    rhs.set_column(0, &g);
    rhs.view_mut((0, 1), (r, pred_cov.ncols()))
        .copy_from(&(&obs.c * v_top));
    let sol = lu.solve(&rhs).ok_or(Error::SingularInnovation(t))?;
    let mg = sol.column(0);
    let v_col = pred_cov.columns(0, r); // d x r

    let mean = pred_mean + v_col * mg;
    let cov = symmetrize(&(pred_cov - v_col * sol.columns(1, pred_cov.ncols())));

    let ere = obs.yry[t] - 2.0 * f.dot(&obs.u[t]) + f.dot(&cf);
    let quad = ere - (vff * mg).dot(&g);
    let loglik = -0.5 * (obs.const_term + det.ln() + quad);
    if !loglik.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(t));
    }
    Ok((Gaussian { mean, cov }, loglik))
}

/// Moment-matches a weighted Gaussian mixture (weights must sum to one).
pub(crate) fn collapse<'a>(
    parts: impl Iterator<Item = (f64, &'a DVector<f64>, &'a DMatrix<f64>)> + Clone,
) -> Gaussian {
    let mut mean: Option<DVector<f64>> = None;
    for (w, m, _) in parts.clone() {
        match mean.as_mut() {
            Some(acc) => acc.axpy(w, m, 1.0),
            None => mean = Some(m * w),
        }
    }
    let mean = mean.expect("collapse of an empty mixture");
    let mut cov = DMatrix::zeros(mean.len(), mean.len());
    for (w, m, v) in parts {
        let dev = m - &mean;
        cov += v * w;
        cov.ger(w, &dev, &dev, 1.0);
    }
    Gaussian {
        mean,
        cov: symmetrize(&cov),
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Runs the forward switching Kalman filter over `d`.
pub fn skf_filter(m: &SwitchingSsm, d: &Dataset) -> Result<FilterOutput> {
    m.validate()?;
    let obs = ObsPrecomp::new(m, d)?;
    skf_filter_pre(m, &obs)
}

pub(crate) fn skf_filter_pre(m: &SwitchingSsm, obs: &ObsPrecomp) -> Result<FilterOutput> {
    let t_len = obs.u.len();
    let k = m.k();
    let a: Vec<DMatrix<f64>> = (0..k).map(|j| m.companion(j)).collect();
    let q: Vec<DMatrix<f64>> = (0..k).map(|j| m.state_noise_full(j)).collect();
    let log_z = m.trans.map(|z| z.max(PROB_FLOOR).ln());

    let mut filtered_probs = DMatrix::zeros(t_len, k);
    let mut means: Vec<Vec<DVector<f64>>> = Vec::with_capacity(t_len);
    let mut covs: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(t_len);
    let mut loglik = 0.0;

    // t = 0: every regime starts from the same prior.
    {
        let (post, ll) = kalman_update(&m.init_mean, &m.init_cov, obs, 0)?;
        let logw: Vec<f64> = (0..k)
            .map(|j| m.init_state_probs[j].max(PROB_FLOOR).ln() + ll)
            .collect();
        let total = log_sum_exp(&logw);
        loglik += total;
        for j in 0..k {
            filtered_probs[(0, j)] = (logw[j] - total).exp();
        }
        means.push(vec![post.mean.clone(); k]);
        covs.push(vec![post.cov.clone(); k]);
    }

    let mut logw = vec![0.0; k * k];
    let mut branch: Vec<Gaussian> = Vec::with_capacity(k * k);
    for t in 1..t_len {
        branch.clear();
        for i in 0..k {
            let log_prev = filtered_probs[(t - 1, i)].max(PROB_FLOOR).ln();
            for j in 0..k {
                let pred_mean = &a[j] * &means[t - 1][i];
                let pred_cov = symmetrize(&(&a[j] * &covs[t - 1][i] * a[j].transpose() + &q[j]));
                let (post, ll) = kalman_update(&pred_mean, &pred_cov, obs, t)?;
                logw[i * k + j] = log_prev + log_z[(i, j)] + ll;
                branch.push(post);
            }
        }
        let total = log_sum_exp(&logw);
        if !total.is_finite() {
            return Err(Error::Diverged(t));
        }
        loglik += total;
        let joint: Vec<f64> = logw.iter().map(|w| (w - total).exp()).collect();
        let mut step_means = Vec::with_capacity(k);
        let mut step_covs = Vec::with_capacity(k);
        for j in 0..k {
            let mj: f64 = (0..k).map(|i| joint[i * k + j]).sum();
            filtered_probs[(t, j)] = mj;
            let denom = mj.max(PROB_FLOOR);
            let g = if mj > PROB_FLOOR {
                collapse((0..k).map(|i| {
                    let b = &branch[i * k + j];
                    (joint[i * k + j] / denom, &b.mean, &b.cov)
                }))
            } else {
                // Negligible regime: keep the prediction from the most
                // likely previous regime so later steps stay well defined.
                let i = argmax_row(&filtered_probs, t - 1);
                let b = &branch[i * k + j];
                Gaussian {
                    mean: b.mean.clone(),
                    cov: b.cov.clone(),
                }
            };
            step_means.push(g.mean);
            step_covs.push(g.cov);
        }
        let row_sum: f64 = filtered_probs.row(t).sum();
        filtered_probs.row_mut(t).unscale_mut(row_sum);
        means.push(step_means);
        covs.push(step_covs);
    }

    Ok(FilterOutput {
        filtered_probs,
        means,
        covs,
        loglik,
    })
}

fn argmax_row(m: &DMatrix<f64>, t: usize) -> usize {
    let row = m.row(t);
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}
