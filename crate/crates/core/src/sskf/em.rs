//! EM estimation of per-regime factor dynamics and the Markov transition
//! matrix. Loadings and observation noise stay fixed at their PCA values.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ObsPrecomp, RegimeParams, SwitchingSsm};
use super::smoother::InferenceResult;
use super::{filter::skf_filter_pre, sks_smooth};
use crate::error::{Error, Result};
use crate::factor::{fit_var_ls, FactorModelFit};
use crate::linalg::{clip_psd, companion, spd_solve, spectral_radius, symmetrize};
use crate::tsdata::Dataset;

const NOISE_EIG_FLOOR: f64 = 1e-10;
/// Regimes with less total smoothed weight keep their previous parameters.
const MIN_REGIME_WEIGHT: f64 = 1e-6;
const INIT_RADIUS_LIMIT: f64 = 0.98;
const INIT_RADIUS_TARGET: f64 = 0.9;
/// Step fractions tried when a full M-step lowers the likelihood.
const DAMPING_STEPS: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub loglik_rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub init_phi_scale: f64,
    pub init_sticky_prob: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            loglik_rel_tol: 1e-5,
            n_restarts: 5,
            seed: 0,
            init_phi_scale: 0.5,
            init_sticky_prob: 0.95,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.loglik_rel_tol > 0.0) {
            return Err(Error::InvalidArgument("loglik_rel_tol must be > 0".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument("n_restarts must be >= 1".into()));
        }
        if !(self.init_sticky_prob > 0.0 && self.init_sticky_prob < 1.0) {
            return Err(Error::InvalidArgument(
                "init_sticky_prob must lie in (0, 1)".into(),
            ));
        }
        if !(self.init_phi_scale >= 0.0) {
            return Err(Error::InvalidArgument("init_phi_scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: SwitchingSsm,
    pub inference: InferenceResult,
    /// Log-likelihood at the initialization followed by one entry per
    /// E/M cycle.
    pub loglik_trace: Vec<f64>,
    /// Final log-likelihood of every restart (`-inf` for diverged ones).
    pub restart_logliks: Vec<f64>,
    /// Index of the restart that was kept.
    pub best_restart: usize,
}

/// Fits a `K`-regime switching factor VAR(P) on `d` using the loadings and
/// noise variances of `fm`, keeping the best of `cfg.n_restarts` random
/// initializations.
pub fn em_fit(
    d: &Dataset,
    k: usize,
    p: usize,
    fm: &FactorModelFit,
    cfg: &EmConfig,
) -> Result<EmFit> {
    cfg.validate()?;
    if k == 0 || p == 0 {
        return Err(Error::InvalidArgument("K and P must be >= 1".into()));
    }
    if fm.n_channels() != d.n_channels() {
        return Err(Error::Dimension(format!(
            "factor model has {} channels, data has {}",
            fm.n_channels(),
            d.n_channels()
        )));
    }
    let r = fm.r;
    let n_params = k * r * r * p;
    if n_params > d.n_times() {
        warn!(
            "{n_params} autoregressive parameters exceed the {} available time points",
            d.n_times()
        );
    }
    let base_noise = initial_state_noise(fm, p, d.segment_boundaries());
    let obs_noise = floored_noise(&fm.noise_cov_diag);

    let runs: Vec<(usize, Result<(SwitchingSsm, InferenceResult, Vec<f64>)>)> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, i));
            let init = random_init(k, p, &fm.loadings, &obs_noise, &base_noise, cfg, &mut rng)
                .and_then(|m| em_fit_from(d, m, cfg));
            (i, init)
        })
        .collect();

    let mut best: Option<(usize, SwitchingSsm, InferenceResult, Vec<f64>)> = None;
    let mut restart_logliks = vec![f64::NEG_INFINITY; cfg.n_restarts];
    for (i, run) in runs {
        match run {
            Ok((model, inf, trace)) => {
                let ll = inf.loglik;
                restart_logliks[i] = ll;
                debug!(
                    "restart {i}: loglik {ll:.6} after {} iterations",
                    trace.len() - 1
                );
                if best.as_ref().is_none_or(|b| ll > b.2.loglik) {
                    best = Some((i, model, inf, trace));
                }
            }
            Err(e) => warn!("EM restart {i} failed: {e}"),
        }
    }
    let (best_restart, model, inference, loglik_trace) =
        best.ok_or(Error::AllRestartsDiverged(cfg.n_restarts))?;
    Ok(EmFit {
        model,
        inference,
        loglik_trace,
        restart_logliks,
        best_restart,
    })
}

fn restart_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64)
}

fn floored_noise(diag: &DVector<f64>) -> DVector<f64> {
    let mean = diag.mean().max(0.0);
    let floor = (mean * 1e-8).max(1e-12);
    diag.map(|v| v.max(floor))
}

fn initial_state_noise(fm: &FactorModelFit, p: usize, boundaries: &[usize]) -> DMatrix<f64> {
    let cov = match fit_var_ls(&fm.factors, p, boundaries) {
        Ok(v) => v.innovation_cov,
        Err(_) => fm.factors.transpose() * &fm.factors / fm.factors.nrows() as f64,
    };
    let scale = (cov.trace() / cov.nrows() as f64).max(1e-12);
    clip_psd(&cov, scale * 1e-6)
}

fn random_init<R: Rng + ?Sized>(
    k: usize,
    p: usize,
    loadings: &DMatrix<f64>,
    obs_noise: &DVector<f64>,
    base_noise: &DMatrix<f64>,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<SwitchingSsm> {
    let r = loadings.ncols();
    let regimes = (0..k)
        .map(|_| {
            let mut phi: Vec<DMatrix<f64>> = (0..p)
                .map(|_| {
                    DMatrix::from_fn(r, r, |_, _| {
                        cfg.init_phi_scale * (2.0 * rng.random::<f64>() - 1.0)
                    })
                })
                .collect();
            let rho = spectral_radius(&companion(&phi));
            if rho >= INIT_RADIUS_LIMIT {
                // Scaling lag l by c^l scales every companion eigenvalue by c.
                let c = INIT_RADIUS_TARGET / rho;
                for (l, m) in phi.iter_mut().enumerate() {
                    *m *= c.powi(l as i32 + 1);
                }
            }
            RegimeParams {
                phi,
                state_noise_cov: base_noise.clone(),
            }
        })
        .collect();
    let trans = if k == 1 {
        DMatrix::identity(1, 1)
    } else {
        let off = (1.0 - cfg.init_sticky_prob) / (k - 1) as f64;
        DMatrix::from_fn(k, k, |i, j| if i == j { cfg.init_sticky_prob } else { off })
    };
    SwitchingSsm::new(regimes, loadings.clone(), obs_noise.clone(), trans)
}

/// Filter + smoother pass.
pub fn e_step(m: &SwitchingSsm, d: &Dataset) -> Result<InferenceResult> {
    let obs = ObsPrecomp::new(m, d)?;
    let filt = skf_filter_pre(m, &obs)?;
    sks_smooth(m, &filt)
}

fn e_step_pre(m: &SwitchingSsm, obs: &ObsPrecomp) -> Result<InferenceResult> {
    let filt = skf_filter_pre(m, obs)?;
    sks_smooth(m, &filt)
}

/// Runs EM from a given starting model. Returns the final model, its
/// inference pass and the log-likelihood trace.
///
/// An M-step that lowers the log-likelihood by more than `1e-6 |L|` is
/// replaced by the largest damped step (a convex combination of the old and
/// new parameters) that does not; if none exists the iteration stops.
pub fn em_fit_from(
    d: &Dataset,
    init: SwitchingSsm,
    cfg: &EmConfig,
) -> Result<(SwitchingSsm, InferenceResult, Vec<f64>)> {
    cfg.validate()?;
    init.validate()?;
    let obs = ObsPrecomp::new(&init, d)?;
    let mut model = init;
    let mut inf = e_step_pre(&model, &obs)?;
    let mut trace = vec![inf.loglik];

    for iter in 0..cfg.max_iters {
        let prev = inf.loglik;
        let slack = 1e-6 * prev.abs();
        let full = m_step(&model, &inf)?;
        let mut accepted: Option<(SwitchingSsm, InferenceResult)> = None;
        match e_step_pre(&full, &obs) {
            Ok(cand) if cand.loglik >= prev - slack => accepted = Some((full, cand)),
            _ => {
                for &step in &DAMPING_STEPS {
                    let damped = blend(&model, &full, step);
                    if let Ok(cand) = e_step_pre(&damped, &obs) {
                        if cand.loglik >= prev - slack {
                            debug!("iteration {iter}: accepted damped step {step}");
                            accepted = Some((damped, cand));
                            break;
                        }
                    }
                }
            }
        }
        let Some((next, next_inf)) = accepted else {
            debug!("iteration {iter}: no ascent step found, stopping");
            trace.push(prev);
            break;
        };
        model = next;
        inf = next_inf;
        trace.push(inf.loglik);
        if ((inf.loglik - prev) / prev.abs().max(1e-300)).abs() < cfg.loglik_rel_tol {
            break;
        }
    }
    Ok((model, inf, trace))
}

fn blend(old: &SwitchingSsm, new: &SwitchingSsm, step: f64) -> SwitchingSsm {
    let mix = |a: &DMatrix<f64>, b: &DMatrix<f64>| a * (1.0 - step) + b * step;
    let regimes = old
        .regimes
        .iter()
        .zip(&new.regimes)
        .map(|(a, b)| RegimeParams {
            phi: a.phi.iter().zip(&b.phi).map(|(x, y)| mix(x, y)).collect(),
            state_noise_cov: symmetrize(&mix(&a.state_noise_cov, &b.state_noise_cov)),
        })
        .collect();
    let mut trans = mix(&old.trans, &new.trans);
    normalize_rows(&mut trans);
    SwitchingSsm {
        regimes,
        trans,
        ..old.clone()
    }
}

fn normalize_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let s = row.sum();
        row.unscale_mut(s);
    }
}

/// Expected second moments entering the M-step for one regime.
struct RegimeStats {
    weight: f64,
    /// `sum_t w_t E[f_t f_t']` (top-left block of `P_t`).
    s11: DMatrix<f64>,
    /// `sum_t w_t E[f_t F_t-1']` (top block row of `P_t,t-1`).
    s10: DMatrix<f64>,
    /// `sum_t w_t E[F_t-1 F_t-1']`.
    s00: DMatrix<f64>,
}

fn regime_stats(inf: &InferenceResult, j: usize, r: usize) -> RegimeStats {
    let d = inf.smoothed_means[0].len();
    let mut s11 = DMatrix::zeros(r, r);
    let mut s10 = DMatrix::zeros(r, d);
    let mut s00 = DMatrix::zeros(d, d);
    let mut weight = 0.0;
    for t in 1..inf.n_times() {
        let w = inf.smoothed_probs[(t, j)];
        if w == 0.0 {
            continue;
        }
        weight += w;
        let cur = &inf.smoothed_means[t];
        let prev = &inf.smoothed_means[t - 1];
        let top = cur.rows(0, r);
        s11 += inf.smoothed_covs[t].view((0, 0), (r, r)) * w;
        s11.ger(w, &top, &top, 1.0);
        s10 += inf.smoothed_crosscovs[t - 1].rows(0, r) * w;
        s10.ger(w, &top, prev, 1.0);
        s00 += &inf.smoothed_covs[t - 1] * w;
        s00.ger(w, prev, prev, 1.0);
    }
    RegimeStats {
        weight,
        s11,
        s10,
        s00,
    }
}

/// Weighted-normal-equation update of every regime's free companion block
/// and state noise, and the transition matrix from the pairwise posteriors.
pub fn m_step(m: &SwitchingSsm, inf: &InferenceResult) -> Result<SwitchingSsm> {
    let (k, p, r) = (m.k(), m.p(), m.r());
    let mut regimes = Vec::with_capacity(k);
    for j in 0..k {
        let st = regime_stats(inf, j, r);
        if st.weight < MIN_REGIME_WEIGHT {
            regimes.push(m.regimes[j].clone());
            continue;
        }
        let Some(phi_t) = spd_solve(&symmetrize(&st.s00), &st.s10.transpose()) else {
            regimes.push(m.regimes[j].clone());
            continue;
        };
        let phi_stacked = phi_t.transpose(); // r x rP = [Phi(1) ... Phi(P)]
        let resid = (&st.s11 - &phi_stacked * st.s10.transpose()) / st.weight;
        let state_noise_cov = clip_psd(&resid, NOISE_EIG_FLOOR);
        let phi = (0..p)
            .map(|l| phi_stacked.columns(l * r, r).into_owned())
            .collect();
        regimes.push(RegimeParams {
            phi,
            state_noise_cov,
        });
    }

    let mut trans = m.trans.clone();
    if k > 1 {
        let mut num = DMatrix::zeros(k, k);
        for joint in &inf.smoothed_joint {
            num += joint;
        }
        for i in 0..k {
            let den: f64 = num.row(i).sum();
            if den > MIN_REGIME_WEIGHT {
                trans.set_row(i, &(num.row(i) / den));
            }
        }
        normalize_rows(&mut trans);
    }
    Ok(SwitchingSsm {
        regimes,
        trans,
        ..m.clone()
    })
}
