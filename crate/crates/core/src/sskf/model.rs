use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::companion;
use crate::simgen::{from_nested_rows, nested_rows};
use crate::tsdata::Dataset;

/// Dynamics of one regime: `f_t = sum_l phi[l] f_{t-l-1} + eta_t`,
/// `eta_t ~ N(0, state_noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams {
    pub phi: Vec<DMatrix<f64>>,
    pub state_noise_cov: DMatrix<f64>,
}

/// Switching linear-Gaussian state-space model in companion form.
///
/// The state is `F_t = [f_t; f_{t-1}; ...; f_{t-P+1}]` (dimension `rP`),
/// observed through `y_t = Q f_t + eps_t` with diagonal `Cov(eps_t)`.
/// `trans[(i, j)]` is `P(S_t = j | S_{t-1} = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSsm {
    pub regimes: Vec<RegimeParams>,
    /// `N x r` loadings; the observation map is `[Q, 0, ..., 0]`.
    pub loadings: DMatrix<f64>,
    pub obs_noise_diag: DVector<f64>,
    pub trans: DMatrix<f64>,
    pub init_state_probs: DVector<f64>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

pub(crate) const DIFFUSE_INIT_VAR: f64 = 10.0;

impl SwitchingSsm {
    /// A model with uniform initial regime probabilities and a diffuse
    /// zero-mean initial state.
    pub fn new(
        regimes: Vec<RegimeParams>,
        loadings: DMatrix<f64>,
        obs_noise_diag: DVector<f64>,
        trans: DMatrix<f64>,
    ) -> Result<Self> {
        let k = regimes.len();
        let dim = regimes
            .first()
            .map(|g| g.phi.len() * loadings.ncols())
            .unwrap_or(0);
        let m = Self {
            regimes,
            loadings,
            obs_noise_diag,
            trans,
            init_state_probs: DVector::from_element(k, 1.0 / k.max(1) as f64),
            init_mean: DVector::zeros(dim),
            init_cov: DMatrix::identity(dim, dim) * DIFFUSE_INIT_VAR,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.regimes.len()
    }

    pub fn p(&self) -> usize {
        self.regimes[0].phi.len()
    }

    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n_channels(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.r() * self.p()
    }

    pub fn companion(&self, j: usize) -> DMatrix<f64> {
        companion(&self.regimes[j].phi)
    }

    /// `rP x rP` state-noise covariance; only the top-left `r x r` block is
    /// nonzero.
    pub fn state_noise_full(&self, j: usize) -> DMatrix<f64> {
        let (r, d) = (self.r(), self.state_dim());
        let mut s = DMatrix::zeros(d, d);
        s.view_mut((0, 0), (r, r))
            .copy_from(&self.regimes[j].state_noise_cov);
        s
    }

    /// `N x rP` observation map `[Q, 0, ..., 0]`.
    pub fn obs_map(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_channels(), self.state_dim());
        h.view_mut((0, 0), self.loadings.shape())
            .copy_from(&self.loadings);
        h
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let k = self.k();
        if k == 0 {
            return bad("model needs at least one regime".into());
        }
        let (n, r) = self.loadings.shape();
        if n == 0 || r == 0 {
            return bad("empty loadings".into());
        }
        let p = self.regimes[0].phi.len();
        if p == 0 {
            return bad("VAR order must be >= 1".into());
        }
        for (j, g) in self.regimes.iter().enumerate() {
            if g.phi.len() != p || g.phi.iter().any(|m| m.shape() != (r, r)) {
                return bad(format!(
                    "regime {j}: expected {p} lag matrices of size {r}x{r}"
                ));
            }
            if g.state_noise_cov.shape() != (r, r) {
                return bad(format!("regime {j}: state noise must be {r}x{r}"));
            }
            let s = &g.state_noise_cov;
            if (s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
                return bad(format!(
                    "regime {j}: state noise covariance is not symmetric"
                ));
            }
        }
        if self.obs_noise_diag.len() != n || self.obs_noise_diag.iter().any(|v| !(*v > 0.0)) {
            return bad(format!("observation noise must be {n} positive variances"));
        }
        if self.trans.shape() != (k, k) {
            return bad(format!("transition matrix must be {k}x{k}"));
        }
        for i in 0..k {
            let row = self.trans.row(i);
            if row.iter().any(|v| *v < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                return bad(format!("transition row {i} is not a probability vector"));
            }
        }
        if self.init_state_probs.len() != k
            || (self.init_state_probs.sum() - 1.0).abs() > 1e-12
            || self.init_state_probs.iter().any(|v| *v < 0.0)
        {
            return bad("initial regime probabilities must be a simplex vector".into());
        }
        let d = r * p;
        if self.init_mean.len() != d || self.init_cov.shape() != (d, d) {
            return bad(format!("initial state must have dimension {d}"));
        }
        Ok(())
    }

    /// Relabels regimes so that new regime `a` is old regime `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> SwitchingSsm {
        let k = self.k();
        SwitchingSsm {
            regimes: perm.iter().map(|&j| self.regimes[j].clone()).collect(),
            trans: DMatrix::from_fn(k, k, |a, b| self.trans[(perm[a], perm[b])]),
            init_state_probs: DVector::from_fn(k, |a, _| self.init_state_probs[perm[a]]),
            ..self.clone()
        }
    }
}

/// Observation-side quantities that do not depend on the regime dynamics.
///
/// With `R = diag(obs_noise)` and `H = [Q, 0, ..., 0]`, every Kalman update
/// only needs `C = Q' R^-1 Q`, `u_t = Q' R^-1 y_t` and `y_t' R^-1 y_t`, so
/// no `N x N` innovation covariance is ever formed.
#[derive(Debug, Clone)]
pub(crate) struct ObsPrecomp {
    pub c: DMatrix<f64>,
    pub u: Vec<DVector<f64>>,
    pub yry: Vec<f64>,
    /// `N ln(2 pi) + ln det R`.
    pub const_term: f64,
}

impl ObsPrecomp {
    pub fn new(m: &SwitchingSsm, d: &Dataset) -> Result<Self> {
        let y = d.values();
        if y.ncols() != m.n_channels() {
            return Err(Error::Dimension(format!(
                "data has {} channels, model expects {}",
                y.ncols(),
                m.n_channels()
            )));
        }
        let inv_r = m.obs_noise_diag.map(|v| 1.0 / v);
        let scaled_q =
            DMatrix::from_fn(m.n_channels(), m.r(), |i, a| m.loadings[(i, a)] * inv_r[i]);
        let c = crate::linalg::symmetrize(&(m.loadings.transpose() * &scaled_q));
        let u_all = y * &scaled_q;
        let u = u_all.row_iter().map(|row| row.transpose()).collect();
        let yry = y
            .row_iter()
            .map(|row| row.iter().zip(inv_r.iter()).map(|(v, w)| v * v * w).sum())
            .collect();
        let n = m.n_channels() as f64;
        let const_term = n * (2.0 * std::f64::consts::PI).ln()
            + m.obs_noise_diag.iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            c,
            u,
            yry,
            const_term,
        })
    }
}

/// JSON form of a [`SwitchingSsm`]'s estimated parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeParamsFile {
    pub phi: Vec<Vec<Vec<f64>>>,
    pub state_noise_cov: Vec<Vec<f64>>,
}

impl From<&RegimeParams> for RegimeParamsFile {
    fn from(g: &RegimeParams) -> Self {
        Self {
            phi: g.phi.iter().map(nested_rows).collect(),
            state_noise_cov: nested_rows(&g.state_noise_cov),
        }
    }
}

impl RegimeParamsFile {
    pub fn to_params(&self) -> Result<RegimeParams> {
        Ok(RegimeParams {
            phi: self
                .phi
                .iter()
                .map(|m| from_nested_rows(m))
                .collect::<Result<_>>()?,
            state_noise_cov: from_nested_rows(&self.state_noise_cov)?,
        })
    }
}
