//! Ground-truthed data from a regime-switching VAR with block-diagonal
//! coefficient matrices.
//!
//! The series is a concatenation of `n_blocks` independently simulated
//! blocks of length `block_length`; block `b` uses state `b mod K`, so the
//! state path cycles `0, 1, 0, 1, ...` for two states.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{companion, spectral_radius};
use crate::tsdata::Dataset;

pub const DEFAULT_RETRY_CAP: usize = 1000;
pub const BURN_IN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub block_size: usize,
    /// Per-state half-width `c_j` of the uniform coefficient distribution.
    pub coeff_ranges: Vec<f64>,
    pub noise_var: f64,
    pub block_length: usize,
    pub n_blocks: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n: 10,
            k: 2,
            p: 1,
            block_size: 10,
            coeff_ranges: vec![0.4, 0.2],
            noise_var: 0.5,
            block_length: 50,
            n_blocks: 4,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n == 0 || self.block_size == 0 || !self.n.is_multiple_of(self.block_size) {
            return bad(format!(
                "N={} must be a positive multiple of block_size={}",
                self.n, self.block_size
            ));
        }
        if self.k == 0 || self.p == 0 || self.n_blocks == 0 {
            return bad("K, P and n_blocks must be positive".into());
        }
        if self.coeff_ranges.len() != self.k {
            return bad(format!(
                "{} coefficient ranges for K={}",
                self.coeff_ranges.len(),
                self.k
            ));
        }
        // c = 0 is accepted: it degenerates to white noise.
        if self
            .coeff_ranges
            .iter()
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return bad(format!(
                "coefficient ranges must be >= 0, got {:?}",
                self.coeff_ranges
            ));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return bad(format!(
                "noise variance must be > 0, got {}",
                self.noise_var
            ));
        }
        if self.block_length < self.p + 1 {
            return bad(format!(
                "block length {} must be at least P+1={}",
                self.block_length,
                self.p + 1
            ));
        }
        Ok(())
    }

    pub fn n_times(&self) -> usize {
        self.block_length * self.n_blocks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `coeff_matrices[j][l]` is the lag-`l+1` matrix of state `j`.
    pub coeff_matrices: Vec<Vec<DMatrix<f64>>>,
    /// 0-based state of each time point.
    pub state_sequence: Vec<usize>,
    /// Indices `t` (0-based) such that the state changes between `t-1` and `t`.
    pub change_points: Vec<usize>,
}

/// On-disk form of [`GroundTruth`]; states are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub coeff_matrices: Vec<Vec<Vec<Vec<f64>>>>,
    pub state_sequence: Vec<usize>,
    pub change_points: Vec<usize>,
    pub scenario: SimScenario,
}

impl GroundTruth {
    pub fn to_file(&self, scenario: &SimScenario) -> GroundTruthFile {
        GroundTruthFile {
            coeff_matrices: self
                .coeff_matrices
                .iter()
                .map(|lags| lags.iter().map(nested_rows).collect())
                .collect(),
            state_sequence: self.state_sequence.iter().map(|s| s + 1).collect(),
            change_points: self.change_points.clone(),
            scenario: scenario.clone(),
        }
    }
}

impl GroundTruthFile {
    pub fn into_truth(self) -> Result<GroundTruth> {
        let coeff_matrices = self
            .coeff_matrices
            .iter()
            .map(|lags| lags.iter().map(|rows| from_nested_rows(rows)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let state_sequence = self
            .state_sequence
            .iter()
            .map(|&s| {
                s.checked_sub(1)
                    .ok_or_else(|| Error::InvalidArgument("states are 1-based".into()))
            })
            .collect::<Result<_>>()?;
        Ok(GroundTruth {
            coeff_matrices,
            state_sequence,
            change_points: self.change_points,
        })
    }
}

pub(crate) fn nested_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_nested_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged nested matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(
        n,
        m,
        rows.iter().flatten().copied(),
    ))
}

/// Draws one `n x n` block-diagonal matrix with entries inside each diagonal
/// block i.i.d. uniform on `[-c, c)`, redrawing until it is stable.
pub fn gen_block_var_coeffs<R: Rng + ?Sized>(
    n: usize,
    block_size: usize,
    c: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut lags = gen_block_var_lags(n, block_size, c, 1, DEFAULT_RETRY_CAP, rng)?;
    Ok(lags.remove(0))
}

/// VAR(P) generalization of [`gen_block_var_coeffs`]: all `p` lag matrices
/// share the block mask, and the draw is repeated until the companion
/// spectral radius is below one.
pub fn gen_block_var_lags<R: Rng + ?Sized>(
    n: usize,
    block_size: usize,
    c: f64,
    p: usize,
    retry_cap: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    if block_size == 0 || !n.is_multiple_of(block_size) {
        return Err(Error::InvalidArgument(format!(
            "N={n} is not divisible by block size {block_size}"
        )));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "coefficient range must be >= 0, got {c}"
        )));
    }
    let n_blocks = n / block_size;
    for _ in 0..retry_cap {
        let mut lags = vec![DMatrix::zeros(n, n); p];
        for lag in lags.iter_mut() {
            for b in 0..n_blocks {
                let o = b * block_size;
                for i in 0..block_size {
                    for j in 0..block_size {
                        lag[(o + i, o + j)] = c * (2.0 * rng.random::<f64>() - 1.0);
                    }
                }
            }
        }
        // Block-diagonal lags: the companion spectrum is the union of the
        // per-block companion spectra.
        let stable = (0..n_blocks).all(|b| {
            let o = b * block_size;
            let blocks: Vec<DMatrix<f64>> = lags
                .iter()
                .map(|m| m.view((o, o), (block_size, block_size)).into_owned())
                .collect();
            spectral_radius(&companion(&blocks)) < 1.0
        });
        if stable {
            return Ok(lags);
        }
    }
    Err(Error::Unstable(retry_cap))
}

/// Simulates a VAR(P) block of `len` samples after discarding `burn_in`
/// samples started from zero.
pub fn simulate_var<R: Rng + ?Sized>(
    lags: &[DMatrix<f64>],
    noise_sd: f64,
    len: usize,
    burn_in: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = lags[0].nrows();
    let p = lags.len();
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(n); p];
    let mut out = DMatrix::zeros(len, n);
    for step in 0..burn_in + len {
        let mut x = DVector::from_fn(n, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
        for (l, m) in lags.iter().enumerate() {
            x.gemv(1.0, m, &history[l], 1.0);
        }
        history.rotate_right(1);
        if step >= burn_in {
            out.set_row(step - burn_in, &x.transpose());
        }
        history[0] = x;
    }
    out
}

/// Runs a scenario end to end. Identical scenarios give identical output.
pub fn simulate_switching_var(s: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let coeff_matrices = s
        .coeff_ranges
        .iter()
        .map(|&c| gen_block_var_lags(s.n, s.block_size, c, s.p, DEFAULT_RETRY_CAP, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let t = s.n_times();
    let noise_sd = s.noise_var.sqrt();
    let mut values = DMatrix::zeros(t, s.n);
    let mut state_sequence = Vec::with_capacity(t);
    for b in 0..s.n_blocks {
        let state = b % s.k;
        let block = simulate_var(
            &coeff_matrices[state],
            noise_sd,
            s.block_length,
            BURN_IN,
            &mut rng,
        );
        values
            .view_mut((b * s.block_length, 0), (s.block_length, s.n))
            .copy_from(&block);
        state_sequence.extend(std::iter::repeat_n(state, s.block_length));
    }
    let change_points = (1..t)
        .filter(|&i| state_sequence[i] != state_sequence[i - 1])
        .collect();
    let data = Dataset::from_values(values)?;
    Ok((
        data,
        GroundTruth {
            coeff_matrices,
            state_sequence,
            change_points,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_single_block_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = gen_block_var_coeffs(10, 10, 0.4, &mut rng).unwrap();
        assert!(m.iter().all(|v| v.abs() <= 0.4));
        assert!(m.iter().filter(|v| **v != 0.0).count() > 90);
        assert!(spectral_radius(&m) < 1.0);
    }

    #[test]
    fn two_blocks_have_exact_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = gen_block_var_coeffs(20, 10, 0.2, &mut rng).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let same_block = i / 10 == j / 10;
                assert_eq!(m[(i, j)] != 0.0, same_block, "entry ({i},{j})");
            }
        }
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 200);
    }

    #[test]
    fn tiny_range_is_nearly_zero_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gen_block_var_coeffs(10, 5, 1e-12, &mut rng).unwrap();
        assert!(spectral_radius(&m) < 1e-10);
    }

    #[test]
    fn explosive_range_hits_retry_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = gen_block_var_lags(10, 10, 50.0, 1, 20, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Unstable(20)));
    }

    #[test]
    fn indivisible_dimension_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_block_var_coeffs(15, 10, 0.4, &mut rng).is_err());
    }

    #[test]
    fn default_scenario_shape() {
        let (d, truth) = simulate_switching_var(&SimScenario::default()).unwrap();
        assert_eq!(d.n_times(), 200);
        assert_eq!(d.n_channels(), 10);
        assert_eq!(truth.change_points, vec![50, 100, 150]);
        assert_eq!(truth.state_sequence[0], 0);
        assert_eq!(truth.state_sequence[75], 1);
        assert_eq!(truth.state_sequence[120], 0);
        assert_eq!(truth.state_sequence[199], 1);
    }

    #[test]
    fn single_regime_has_constant_state() {
        let s = SimScenario {
            k: 1,
            coeff_ranges: vec![0.4],
            ..SimScenario::default()
        };
        let (_, truth) = simulate_switching_var(&s).unwrap();
        assert!(truth.state_sequence.iter().all(|&x| x == 0));
        assert!(truth.change_points.is_empty());
    }

    #[test]
    fn seeds_are_deterministic() {
        let s = SimScenario {
            n: 20,
            seed: 99,
            ..SimScenario::default()
        };
        let a = simulate_switching_var(&s).unwrap();
        let b = simulate_switching_var(&s).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = simulate_switching_var(&SimScenario { seed: 100, ..s }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn white_noise_covariance_matches() {
        let s = SimScenario {
            n: 4,
            k: 1,
            block_size: 2,
            coeff_ranges: vec![0.0],
            noise_var: 0.5,
            block_length: 20_000,
            n_blocks: 1,
            ..SimScenario::default()
        };
        let (d, _) = simulate_switching_var(&s).unwrap();
        let y = d.values();
        let cov = y.transpose() * y / y.nrows() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.5 } else { 0.0 };
                // 5% of the variance scale on every entry.
                assert!(
                    (cov[(i, j)] - expected).abs() < 0.05 * 0.5,
                    "cov[{i},{j}]={}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn ground_truth_file_round_trip() {
        let s = SimScenario::default();
        let (_, truth) = simulate_switching_var(&s).unwrap();
        let json = serde_json::to_string(&truth.to_file(&s)).unwrap();
        let back: GroundTruthFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.state_sequence[0], 1);
        assert_eq!(back.into_truth().unwrap(), truth);
    }
}
