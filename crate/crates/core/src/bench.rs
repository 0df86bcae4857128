//! One replication of the simulation benchmark: simulate, fit every
//! requested method, score against the ground truth.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::baseline::{expand_labels, kmeans_l1, regime_ridge_estimates, sliding_ridge_tvvar};
use crate::connectivity::{coupled_estimator, decoupled_estimator};
use crate::error::{Error, Result};
use crate::factor::{estimate_pca, select_num_factors};
use crate::metrics::{aligned_frob_errors, state_accuracy, BenchmarkRecord};
use crate::simgen::{simulate_switching_var, GroundTruth, SimScenario};
use crate::sskf::{decode_states, em_fit, EmConfig};
use crate::tsdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fsvar-coupled")]
    FsvarCoupled,
    #[serde(rename = "fsvar-decoupled")]
    FsvarDecoupled,
    #[serde(rename = "kmeans")]
    Kmeans,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FsvarCoupled, Method::FsvarDecoupled, Method::Kmeans];

    pub fn name(self) -> &'static str {
        match self {
            Method::FsvarCoupled => "fsvar-coupled",
            Method::FsvarDecoupled => "fsvar-decoupled",
            Method::Kmeans => "kmeans",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Scenario template; `n` and `seed` are set per cell.
    pub scenario: SimScenario,
    /// Fixed factor count; BIC over `1..=min(max_r, N - 1)` when `None`.
    pub r: Option<usize>,
    pub max_r: usize,
    pub em: EmConfig,
    pub window: usize,
    pub shift: usize,
    pub lambda: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenario: SimScenario::default(),
            r: None,
            max_r: 10,
            em: EmConfig::default(),
            window: 30,
            shift: 1,
            lambda: 0.1,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
        }
    }
}

/// Seed of cell `(n, replication)` derived from the run seed.
pub fn cell_seed(seed: u64, n: usize, replication: usize) -> u64 {
    let mut z = seed
        ^ (n as u64).wrapping_mul(0xA24B_AED4_963E_E407)
        ^ (replication as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every method in `methods` on one simulated dataset. Failures of a
/// method become records carrying the error message.
pub fn run_replication(
    n: usize,
    replication: usize,
    methods: &[Method],
    cfg: &BenchConfig,
    seed: u64,
) -> Result<Vec<BenchmarkRecord>> {
    let cell = cell_seed(seed, n, replication);
    let scenario = SimScenario {
        n,
        seed: cell,
        ..cfg.scenario.clone()
    };
    let (data, truth) = simulate_switching_var(&scenario)?;
    let k = scenario.k;
    let p = scenario.p;
    let blank = |method: Method| BenchmarkRecord {
        n,
        method: method.name().into(),
        replication,
        r: None,
        state_accuracy: None,
        skf_accuracy: None,
        frob_sq_error: Vec::new(),
        runtime_ms: 0.0,
        error: None,
    };
    let fail = |method: Method, e: Error| {
        warn!("N={n} replication {replication} {}: {e}", method.name());
        BenchmarkRecord {
            error: Some(e.to_string()),
            ..blank(method)
        }
    };

    let mut records = Vec::with_capacity(methods.len());
    let wants = |m: Method| methods.contains(&m);
    if wants(Method::FsvarCoupled) || wants(Method::FsvarDecoupled) {
        let em_cfg = EmConfig {
            seed: cell,
            ..cfg.em.clone()
        };
        let start = Instant::now();
        match fit_switching(&data, &truth, k, p, cfg, &em_cfg) {
            Ok(shared) => {
                let shared_ms = start.elapsed().as_secs_f64() * 1e3;
                for method in [Method::FsvarCoupled, Method::FsvarDecoupled] {
                    if !wants(method) {
                        continue;
                    }
                    let start = Instant::now();
                    let est = match method {
                        Method::FsvarCoupled => {
                            coupled_estimator(&shared.fm, &shared.model, &shared.inference)
                        }
                        _ => decoupled_estimator(&data, &shared.states, k, shared.fm.r, p),
                    };
                    let phi = est.map(|rc| {
                        rc.per_regime
                            .into_iter()
                            .map(|reg| reg.phi_y)
                            .collect::<Vec<_>>()
                    });
                    let record = phi
                        .and_then(|phi| {
                            aligned_frob_errors(&phi, &truth.coeff_matrices, &shared.perm)
                        })
                        .map(|frob| BenchmarkRecord {
                            r: Some(shared.fm.r),
                            state_accuracy: Some(shared.accuracy),
                            skf_accuracy: Some(shared.skf_accuracy),
                            frob_sq_error: frob,
                            runtime_ms: shared_ms + start.elapsed().as_secs_f64() * 1e3,
                            ..blank(method)
                        });
                    records.push(record.unwrap_or_else(|e| fail(method, e)));
                }
            }
            Err(e) => {
                for method in [Method::FsvarCoupled, Method::FsvarDecoupled] {
                    if wants(method) {
                        records.push(fail(method, clone_error(&e)));
                    }
                }
            }
        }
    }
    if wants(Method::Kmeans) {
        let start = Instant::now();
        let record =
            fit_kmeans(&data, &truth, k, p, cfg, cell).map(|(acc, frob)| BenchmarkRecord {
                state_accuracy: Some(acc),
                frob_sq_error: frob,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                ..blank(Method::Kmeans)
            });
        records.push(record.unwrap_or_else(|e| fail(Method::Kmeans, e)));
    }
    Ok(records)
}

fn clone_error(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

struct SwitchingFit {
    fm: crate::factor::FactorModelFit,
    model: crate::sskf::SwitchingSsm,
    inference: crate::sskf::InferenceResult,
    states: Vec<usize>,
    perm: Vec<usize>,
    accuracy: f64,
    skf_accuracy: f64,
}

fn fit_switching(
    data: &Dataset,
    truth: &GroundTruth,
    k: usize,
    p: usize,
    cfg: &BenchConfig,
    em_cfg: &EmConfig,
) -> Result<SwitchingFit> {
    let r = match cfg.r {
        Some(r) => r,
        None => select_num_factors(data, cfg.max_r.min(data.n_channels() - 1).max(1))?.r,
    };
    let fm = estimate_pca(data, r)?;
    let fit = em_fit(data, k, p, &fm, em_cfg)?;
    let states = fit.inference.decoded_sks.clone();
    let (accuracy, perm) = state_accuracy(&states, &truth.state_sequence, k)?;
    let skf = decode_states(&fit.inference.filtered_probs);
    let (skf_accuracy, _) = state_accuracy(&skf, &truth.state_sequence, k)?;
    Ok(SwitchingFit {
        fm,
        model: fit.model,
        inference: fit.inference,
        states,
        perm,
        accuracy,
        skf_accuracy,
    })
}

fn fit_kmeans(
    data: &Dataset,
    truth: &GroundTruth,
    k: usize,
    p: usize,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let tv = sliding_ridge_tvvar(data, cfg.window, cfg.shift, cfg.lambda, p)?;
    let km = kmeans_l1(
        &tv.coeffs,
        k,
        cfg.kmeans_restarts,
        cfg.kmeans_max_iter,
        seed,
    )?;
    let labels = expand_labels(&tv.centers, &km.labels, data.n_times());
    let (acc, perm) = state_accuracy(&labels, &truth.state_sequence, k)?;
    let phi = regime_ridge_estimates(data, &labels, k, p, cfg.lambda)?;
    let frob = aligned_frob_errors(&phi, &truth.coeff_matrices, &perm)?;
    Ok((acc, frob))
}
