//! Switching Kalman smoother.
//!
//! Backward pass pairing regime `j` at `t` with regime `k` at `t+1`: each
//! pair gets an RTS step and the pairwise Gaussians are collapsed by moment
//! matching. The pairwise regime posterior uses the expectation-correction
//! approximation: `P(S_t=j | S_t+1=k, Y)` is proportional to
//! `M_t|t^j z_jk N(E[F_t+1 | S_t+1=k, Y]; A_k m_t^j, A_k V_t^j A_k' + Q_k)`.

use nalgebra::{DMatrix, DVector};

use super::filter::{collapse, FilterOutput};
use super::model::SwitchingSsm;
use super::{decode_states, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, symmetrize};

/// Filtered and smoothed quantities for one dataset.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// `T x K` filtered regime probabilities.
    pub filtered_probs: DMatrix<f64>,
    /// `T x K` smoothed regime probabilities.
    pub smoothed_probs: DMatrix<f64>,
    /// Entry `s` is the `K x K` matrix `P(S_s = i, S_s+1 = j | Y)`.
    pub smoothed_joint: Vec<DMatrix<f64>>,
    /// Regime-marginal `E[F_t | Y]`.
    pub smoothed_means: Vec<DVector<f64>>,
    /// Regime-marginal `Cov(F_t | Y)`.
    pub smoothed_covs: Vec<DMatrix<f64>>,
    /// Entry `s` is `Cov(F_s+1, F_s | Y)`.
    pub smoothed_crosscovs: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub decoded_skf: Vec<usize>,
    pub decoded_sks: Vec<usize>,
}

impl InferenceResult {
    pub fn n_times(&self) -> usize {
        self.smoothed_probs.nrows()
    }

    /// Hard-assignment count of time points per regime (smoothed argmax).
    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.smoothed_probs.ncols()];
        for &s in &self.decoded_sks {
            counts[s] += 1;
        }
        counts
    }
}

/// Runs the backward pass on the output of [`super::skf_filter`] for the
/// same model.
pub fn sks_smooth(m: &SwitchingSsm, filt: &FilterOutput) -> Result<InferenceResult> {
    let t_len = filt.n_times();
    let k = m.k();
    if filt.filtered_probs.ncols() != k {
        return Err(Error::Dimension(format!(
            "filter output has {} regimes, model has {k}",
            filt.filtered_probs.ncols()
        )));
    }
    let a: Vec<DMatrix<f64>> = (0..k).map(|j| m.companion(j)).collect();
    let q: Vec<DMatrix<f64>> = (0..k).map(|j| m.state_noise_full(j)).collect();
    let z = &m.trans;

    let mut smoothed_probs = DMatrix::zeros(t_len, k);
    smoothed_probs
        .row_mut(t_len - 1)
        .copy_from(&filt.filtered_probs.row(t_len - 1));
    let mut reg_means: Vec<DVector<f64>> = filt.means[t_len - 1].clone();
    let mut reg_covs: Vec<DMatrix<f64>> = filt.covs[t_len - 1].clone();

    let mut smoothed_means = vec![DVector::zeros(0); t_len];
    let mut smoothed_covs = vec![DMatrix::zeros(0, 0); t_len];
    let mut smoothed_joint = vec![DMatrix::zeros(k, k); t_len.saturating_sub(1)];
    let mut smoothed_crosscovs = vec![DMatrix::zeros(0, 0); t_len.saturating_sub(1)];

    let last = marginal(
        smoothed_probs.row(t_len - 1).iter().copied(),
        &reg_means,
        &reg_covs,
    );
    smoothed_means[t_len - 1] = last.mean;
    smoothed_covs[t_len - 1] = last.cov;

    for t in (0..t_len.saturating_sub(1)).rev() {
        // Pairwise RTS steps.
        let mut log_dens: Vec<f64> = Vec::with_capacity(k * k);
        let mut pair_means: Vec<DVector<f64>> = Vec::with_capacity(k * k);
        let mut pair_covs: Vec<DMatrix<f64>> = Vec::with_capacity(k * k);
        let mut pair_cross: Vec<DMatrix<f64>> = Vec::with_capacity(k * k);
        for j in 0..k {
            let fm = &filt.means[t][j];
            let fv = &filt.covs[t][j];
            for kk in 0..k {
                let av = &a[kk] * fv;
                let pred_cov = symmetrize(&(&av * a[kk].transpose() + &q[kk]));
                let gain_t = spd_solve(&pred_cov, &av).ok_or(Error::Diverged(t))?;
                log_dens.push(
                    log_gauss(&reg_means[kk], &(&a[kk] * fm), &pred_cov)
                        .ok_or(Error::Diverged(t))?,
                );
                let gain = gain_t.transpose();
                let mean = fm + &gain * (&reg_means[kk] - &a[kk] * fm);
                let cov = symmetrize(&(fv + &gain * (&reg_covs[kk] - &pred_cov) * &gain_t));
                pair_cross.push(&reg_covs[kk] * &gain_t);
                pair_means.push(mean);
                pair_covs.push(cov);
            }
        }

        // Pairwise regime posterior.
        let mut joint = DMatrix::zeros(k, k);
        for kk in 0..k {
            let lw: Vec<f64> = (0..k)
                .map(|j| {
                    filt.filtered_probs[(t, j)].max(PROB_FLOOR).ln()
                        + z[(j, kk)].max(PROB_FLOOR).ln()
                        + log_dens[j * k + kk]
                })
                .collect();
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = lw.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                joint[(j, kk)] = (lw[j] - max).exp() / norm * smoothed_probs[(t + 1, kk)];
            }
        }
        let total = joint.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Diverged(t));
        }
        joint /= total;
        for j in 0..k {
            smoothed_probs[(t, j)] = joint.row(j).sum();
        }

        // Collapse over the next regime for each current regime.
        let mut new_means = Vec::with_capacity(k);
        let mut new_covs = Vec::with_capacity(k);
        for j in 0..k {
            let mj = smoothed_probs[(t, j)];
            let g = if mj > PROB_FLOOR {
                collapse((0..k).map(|kk| {
                    (
                        joint[(j, kk)] / mj,
                        &pair_means[j * k + kk],
                        &pair_covs[j * k + kk],
                    )
                }))
            } else {
                let w = 1.0 / k as f64;
                collapse((0..k).map(|kk| (w, &pair_means[j * k + kk], &pair_covs[j * k + kk])))
            };
            new_means.push(g.mean);
            new_covs.push(g.cov);
        }

        let cur = marginal(smoothed_probs.row(t).iter().copied(), &new_means, &new_covs);
        let next_mean = &smoothed_means[t + 1];
        let mut cross = DMatrix::zeros(cur.mean.len(), cur.mean.len());
        for j in 0..k {
            for kk in 0..k {
                let w = joint[(j, kk)];
                if w == 0.0 {
                    continue;
                }
                cross += &pair_cross[j * k + kk] * w;
                let dn = &reg_means[kk] - next_mean;
                let dc = &pair_means[j * k + kk] - &cur.mean;
                cross.ger(w, &dn, &dc, 1.0);
            }
        }
        smoothed_crosscovs[t] = cross;
        smoothed_joint[t] = joint;
        smoothed_means[t] = cur.mean;
        smoothed_covs[t] = cur.cov;
        reg_means = new_means;
        reg_covs = new_covs;
    }

    Ok(InferenceResult {
        decoded_skf: decode_states(&filt.filtered_probs),
        decoded_sks: decode_states(&smoothed_probs),
        filtered_probs: filt.filtered_probs.clone(),
        smoothed_probs,
        smoothed_joint,
        smoothed_means,
        smoothed_covs,
        smoothed_crosscovs,
        loglik: filt.loglik,
    })
}

fn marginal(
    probs: impl Iterator<Item = f64>,
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> super::filter::Gaussian {
    let w: Vec<f64> = probs.collect();
    let s: f64 = w.iter().sum();
    collapse(
        w.iter()
            .zip(means.iter().zip(covs))
            .map(move |(wi, (m, v))| (wi / s, m, v)),
    )
}

/// Log density up to the `2 pi` constant.
fn log_gauss(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let ch = cov.clone().cholesky()?;
    let d = x - mean;
    let sol = ch.solve(&d);
    let logdet: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Some(-0.5 * (logdet + d.dot(&sol)))
}
