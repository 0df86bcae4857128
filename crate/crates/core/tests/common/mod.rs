//! Reference implementations used as independent oracles. They work in the
//! full observation space (explicit `N x N` innovation covariances and
//! inverses) and share no code with the library's filter.

#![allow(dead_code)]

use fsvar::linalg::companion;
use fsvar::sskf::{RegimeParams, SwitchingSsm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct KfOut {
    pub loglik: f64,
    pub filt_means: Vec<DVector<f64>>,
    pub filt_covs: Vec<DMatrix<f64>>,
    pub pred_means: Vec<DVector<f64>>,
    pub pred_covs: Vec<DMatrix<f64>>,
}

/// Kalman filter for `x_t = A_t x_t-1 + w_t`, `y_t = H x_t + v_t` where the
/// first state is drawn from `N(m0, v0)` without a transition.
pub fn plain_kf(
    a: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    m0: &DVector<f64>,
    v0: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> KfOut {
    let t_len = y.nrows();
    let n = y.ncols() as f64;
    let mut out = KfOut {
        loglik: 0.0,
        filt_means: vec![],
        filt_covs: vec![],
        pred_means: vec![],
        pred_covs: vec![],
    };
    for t in 0..t_len {
        let (pm, pv) = if t == 0 {
            (m0.clone(), v0.clone())
        } else {
            let m = &a[t] * &out.filt_means[t - 1];
            let v = &a[t] * &out.filt_covs[t - 1] * a[t].transpose() + &q[t];
            (m, v)
        };
        let s = h * &pv * h.transpose() + r;
        let s_inv = s.clone().try_inverse().unwrap();
        let e = y.row(t).transpose() - h * &pm;
        let gain = &pv * h.transpose() * &s_inv;
        let m = &pm + &gain * &e;
        let v = &pv - &gain * h * &pv;
        let quad = (e.transpose() * &s_inv * &e)[(0, 0)];
        out.loglik += -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + quad);
        out.pred_means.push(pm);
        out.pred_covs.push(pv);
        out.filt_means.push(m);
        out.filt_covs.push(v);
    }
    out
}

/// Rauch-Tung-Striebel smoother; returns means, covariances and lag-one
/// cross-covariances `Cov(x_t+1, x_t | Y)`.
pub fn plain_rts(
    a: &[DMatrix<f64>],
    kf: &KfOut,
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let t_len = kf.filt_means.len();
    let mut means = kf.filt_means.clone();
    let mut covs = kf.filt_covs.clone();
    let mut cross = vec![DMatrix::zeros(0, 0); t_len - 1];
    for t in (0..t_len - 1).rev() {
        let pv = &kf.pred_covs[t + 1];
        let j = &kf.filt_covs[t] * a[t + 1].transpose() * pv.clone().try_inverse().unwrap();
        means[t] = &kf.filt_means[t] + &j * (&means[t + 1] - &kf.pred_means[t + 1]);
        covs[t] = &kf.filt_covs[t] + &j * (&covs[t + 1] - pv) * j.transpose();
        cross[t] = &covs[t + 1] * j.transpose();
    }
    (means, covs, cross)
}

/// Builds the per-step transition/noise sequences of the linear-Gaussian
/// model obtained by fixing the regime path.
pub fn path_system(m: &SwitchingSsm, path: &[usize]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let a = path.iter().map(|&j| companion(&m.regimes[j].phi)).collect();
    let q = path.iter().map(|&j| m.state_noise_full(j)).collect();
    (a, q)
}

pub struct ExactPosterior {
    /// `T x K` smoothed marginals.
    pub smoothed: DMatrix<f64>,
    /// `T x K` filtered marginals `P(S_t | y_1..t)`.
    pub filtered: DMatrix<f64>,
    /// Entry `s`: `P(S_s, S_s+1 | Y)`.
    pub joint: Vec<DMatrix<f64>>,
}

/// Exact regime posterior by enumerating all `K^T` paths.
pub fn enumerate_posterior(m: &SwitchingSsm, y: &DMatrix<f64>) -> ExactPosterior {
    let t_len = y.nrows();
    let k = m.k();
    let h = m.obs_map();
    let r = DMatrix::from_diagonal(&m.obs_noise_diag);
    let mut smoothed = DMatrix::zeros(t_len, k);
    let mut joint = vec![DMatrix::zeros(k, k); t_len - 1];
    let mut filtered = DMatrix::zeros(t_len, k);

    for prefix in 1..=t_len {
        let yp = y.rows(0, prefix).into_owned();
        let n_paths = k.pow(prefix as u32);
        let mut logw = Vec::with_capacity(n_paths);
        let mut paths = Vec::with_capacity(n_paths);
        for code in 0..n_paths {
            let path: Vec<usize> = (0..prefix).map(|t| (code / k.pow(t as u32)) % k).collect();
            let mut lp = m.init_state_probs[path[0]].ln();
            for t in 1..prefix {
                lp += m.trans[(path[t - 1], path[t])].ln();
            }
            let (a, q) = path_system(m, &path);
            let kf = plain_kf(&a, &q, &h, &r, &m.init_mean, &m.init_cov, &yp);
            logw.push(lp + kf.loglik);
            paths.push(path);
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        for (path, wi) in paths.iter().zip(&w) {
            let p = wi / total;
            filtered[(prefix - 1, path[prefix - 1])] += p;
            if prefix == t_len {
                for t in 0..t_len {
                    smoothed[(t, path[t])] += p;
                }
                for t in 0..t_len - 1 {
                    joint[t][(path[t], path[t + 1])] += p;
                }
            }
        }
    }
    ExactPosterior {
        smoothed,
        filtered,
        joint,
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Samples a regime path and observations from a switching model.
pub fn sample_switching(m: &SwitchingSsm, t_len: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.state_dim();
    let n = m.n_channels();
    let h = m.obs_map();
    let draw = |rng: &mut ChaCha8Rng, probs: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        probs.len() - 1
    };
    let mut states = Vec::with_capacity(t_len);
    let mut y = DMatrix::zeros(t_len, n);
    let mut x = DVector::<f64>::zeros(d);
    for t in 0..t_len {
        let s = if t == 0 {
            draw(&mut rng, m.init_state_probs.as_slice())
        } else {
            let row: Vec<f64> = m.trans.row(states[t - 1]).iter().copied().collect();
            draw(&mut rng, &row)
        };
        states.push(s);
        let chol = m.regimes[s].state_noise_cov.clone().cholesky().unwrap();
        let z = DVector::from_fn(m.r(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = chol.l() * z;
        let mut next = companion(&m.regimes[s].phi) * &x;
        for i in 0..m.r() {
            next[i] += eta[i];
        }
        x = next;
        let eps = DVector::from_fn(n, |i, _| {
            m.obs_noise_diag[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        y.set_row(t, &(&h * &x + eps).transpose());
    }
    (y, states)
}

/// Random orthonormal `n x r` loadings.
pub fn random_loadings(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, r).into_owned()
}

/// Random stable regime with lag matrices scaled to spectral radius <= 0.8.
pub fn random_regime(r: usize, p: usize, rng: &mut ChaCha8Rng) -> RegimeParams {
    let mut phi: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(r, r, |_, _| rng.random_range(-0.6..0.6)))
        .collect();
    let rho = fsvar::linalg::spectral_radius(&companion(&phi));
    if rho > 0.8 {
        let c = 0.8 / rho;
        for (l, m) in phi.iter_mut().enumerate() {
            *m *= c.powi(l as i32 + 1);
        }
    }
    let g = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let state_noise_cov = &g * g.transpose() / r as f64 + DMatrix::identity(r, r) * 0.1;
    RegimeParams {
        phi,
        state_noise_cov: (&state_noise_cov + state_noise_cov.transpose()) * 0.5,
    }
}
