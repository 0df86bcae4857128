use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fsvar::connectivity::{
    coeff_significance_with, coupled_estimator, decoupled_estimator, threshold_graph,
    write_edges_csv, write_matrix_csv, AdjacencySummary, CovarianceForm, MatrixSidecar, Variant,
    DIRECTION,
};
use fsvar::factor::{estimate_pca, select_num_factors};
use fsvar::sskf::{em_fit, EmConfig, RegimeParamsFile};
use fsvar::tsdata::{format_sig15, Standardization};
use fsvar::Dataset;

use crate::config::{merge, Common};
use crate::output::Staging;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    None,
    Demean,
    Zscore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceArg {
    Asymptotic,
    Direct,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Input CSV, rows = time points.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Whether the first row is a header; detected when omitted.
    #[arg(long)]
    pub header: Option<bool>,
    /// Length of each concatenated recording (marks segment joins).
    #[arg(long)]
    pub segment_length: Option<usize>,
    /// Per-segment preprocessing [default: demean].
    #[arg(long, value_enum)]
    pub standardize: Option<StandardizeMode>,
    /// Number of regimes [default: 2].
    #[arg(long)]
    pub k: Option<usize>,
    /// VAR order [default: 1].
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of factors; selected by BIC when omitted.
    #[arg(long)]
    pub r: Option<usize>,
    /// Select r by BIC even if --r is present in a config file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_r: Option<bool>,
    /// Largest r considered by BIC [default: min(N - 1, T, 20)].
    #[arg(long)]
    pub max_r: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative log-likelihood tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Initial self-transition probability.
    #[arg(long)]
    pub sticky: Option<f64>,
    /// Connectivity estimator [default: coupled].
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Stop after the PCA step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub step1_only: Option<bool>,
    /// Family-wise significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Coefficient variance used by the tests [default: asymptotic].
    #[arg(long, value_enum)]
    pub covariance: Option<CovarianceArg>,
    /// Magnitude threshold for graph edges [default: 0].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep self-loops in the edge exports.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub self_loops: Option<bool>,
}

#[derive(Serialize)]
struct Step1Summary {
    r: usize,
    selected_by: &'static str,
    bic_values: Option<Vec<f64>>,
    eigenvalues: Vec<f64>,
    noise_cov_diag: Vec<f64>,
}

#[derive(Serialize)]
struct ModelSummary {
    k: usize,
    p: usize,
    r: usize,
    regime_params: Vec<RegimeParamsFile>,
    trans: Vec<Vec<f64>>,
    init_state_probs: Vec<f64>,
    obs_noise_diag: Vec<f64>,
    loglik: f64,
    loglik_trace: Vec<f64>,
    restart_logliks: Vec<f64>,
    best_restart: usize,
    occupancy: Vec<usize>,
    decoded_skf: Vec<usize>,
    decoded_sks: Vec<usize>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_table<W: Write>(w: &mut W, prefix: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_sig15(v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn detect_header(path: &Path) -> CliResult<bool> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    Ok(first
        .trim()
        .split(',')
        .any(|cell| !cell.trim().is_empty() && cell.trim().parse::<f64>().is_err()))
}

fn load(args: &FitArgs) -> CliResult<Dataset> {
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let header = match args.header {
        Some(h) => h,
        None => detect_header(path)?,
    };
    let mut data = Dataset::load_csv(path, header)?;
    if let Some(len) = args.segment_length {
        if len == 0 {
            return Err(CliError::Usage("--segment-length must be >= 1".into()));
        }
        let bounds: Vec<usize> = (len..data.n_times()).step_by(len).collect();
        let names = data.channel_names().to_vec();
        data = Dataset::with_boundaries(data.into_values(), names, bounds)?;
    }
    let mode = match args.standardize.unwrap_or(StandardizeMode::Demean) {
        StandardizeMode::None => return Ok(data),
        StandardizeMode::Demean => Standardization::Demean,
        StandardizeMode::Zscore => Standardization::ZScore,
    };
    let st = data.standardize(mode)?;
    if !st.zero_variance.is_empty() {
        log::warn!(
            "zero-variance channels left unscaled: {:?}",
            st.zero_variance
        );
    }
    Ok(st.data)
}

pub fn run(args: FitArgs) -> CliResult<()> {
    let config = args.common.config.clone();
    let args = merge(args, config.as_ref())?;
    let data = load(&args)?;
    let (t, n) = (data.n_times(), data.n_channels());
    let k = args.k.unwrap_or(2);
    let p = args.p.unwrap_or(1);
    let mut out = Staging::new(&args.common.out_dir())?;

    // Step 1.
    let auto = args.auto_r.unwrap_or(false) || args.r.is_none();
    let (r, bic_values) = if auto {
        let max_r = args
            .max_r
            .unwrap_or(n.saturating_sub(1).min(t).clamp(1, 20));
        let sel = select_num_factors(&data, max_r)?;
        log::info!("BIC selected r={}", sel.r);
        (sel.r, Some(sel.bic_values))
    } else {
        (args.r.unwrap_or(1), None)
    };
    let fm = estimate_pca(&data, r)?;
    out.write_json(
        "step1.json",
        &Step1Summary {
            r,
            selected_by: if auto { "bic" } else { "fixed" },
            bic_values,
            eigenvalues: fm.eigenvalues.iter().copied().collect(),
            noise_cov_diag: fm.noise_cov_diag.iter().copied().collect(),
        },
    )?;
    out.write("loadings.csv", |w| write_table(w, "factor", &fm.loadings))?;
    out.write("factors.csv", |w| write_table(w, "factor", &fm.factors))?;
    if args.step1_only.unwrap_or(false) {
        out.commit()?;
        return Ok(());
    }

    // Step 2.
    let defaults = EmConfig::default();
    let cfg = EmConfig {
        max_iters: args.max_iters.unwrap_or(defaults.max_iters),
        loglik_rel_tol: args.tol.unwrap_or(defaults.loglik_rel_tol),
        n_restarts: args.restarts.unwrap_or(defaults.n_restarts),
        seed: args.common.seed(),
        init_sticky_prob: args.sticky.unwrap_or(defaults.init_sticky_prob),
        ..defaults
    };
    let fit = em_fit(&data, k, p, &fm, &cfg)?;
    let inf = &fit.inference;
    let one_based = |s: &[usize]| s.iter().map(|v| v + 1).collect::<Vec<_>>();
    out.write_json(
        "model.json",
        &ModelSummary {
            k,
            p,
            r,
            regime_params: fit
                .model
                .regimes
                .iter()
                .map(RegimeParamsFile::from)
                .collect(),
            trans: rows(&fit.model.trans),
            init_state_probs: fit.model.init_state_probs.iter().copied().collect(),
            obs_noise_diag: fit.model.obs_noise_diag.iter().copied().collect(),
            loglik: inf.loglik,
            loglik_trace: fit.loglik_trace.clone(),
            restart_logliks: fit.restart_logliks.clone(),
            best_restart: fit.best_restart,
            occupancy: inf.occupancy(),
            decoded_skf: one_based(&inf.decoded_skf),
            decoded_sks: one_based(&inf.decoded_sks),
        },
    )?;
    out.write("smoothed_probs.csv", |w| {
        write_table(w, "regime", &inf.smoothed_probs)
    })?;
    out.write("filtered_probs.csv", |w| {
        write_table(w, "regime", &inf.filtered_probs)
    })?;
    out.write("states.csv", |w| {
        writeln!(w, "t,skf,sks")?;
        for (i, (a, b)) in inf.decoded_skf.iter().zip(&inf.decoded_sks).enumerate() {
            writeln!(w, "{},{},{}", i + 1, a + 1, b + 1)?;
        }
        Ok(())
    })?;

    // Step 3.
    let variant = match args.variant.unwrap_or(VariantArg::Coupled) {
        VariantArg::Coupled => Variant::Coupled,
        VariantArg::Decoupled => Variant::Decoupled,
    };
    let mut rc = match variant {
        Variant::Coupled => coupled_estimator(&fm, &fit.model, inf)?,
        Variant::Decoupled => decoupled_estimator(&data, &inf.decoded_sks, k, r, p)?,
    };
    let alpha = args.alpha.unwrap_or(0.05);
    let tau = args.tau.unwrap_or(0.0);
    let self_loops = args.self_loops.unwrap_or(false);
    let counts = rc.n_obs();
    let form = match args.covariance.unwrap_or(CovarianceArg::Asymptotic) {
        CovarianceArg::Asymptotic => CovarianceForm::Asymptotic,
        CovarianceArg::Direct => CovarianceForm::Direct,
    };
    coeff_significance_with(&mut rc, &counts, alpha, form)?;
    let edges = threshold_graph(&rc, tau, self_loops)?;
    let mut files = Vec::new();
    for (j, reg) in rc.per_regime.iter().enumerate() {
        for (l, phi) in reg.phi_y.iter().enumerate() {
            let name = format!("connectivity_regime{}_lag{}.csv", j + 1, l + 1);
            out.write(&name, |w| write_matrix_csv(w, phi))?;
            files.push(name);
            let name = format!("pvalues_regime{}_lag{}.csv", j + 1, l + 1);
            out.write(&name, |w| write_matrix_csv(w, &reg.p_values[l]))?;
        }
    }
    out.write_json(
        "connectivity.json",
        &MatrixSidecar {
            direction: DIRECTION.into(),
            variant,
            n_regimes: rc.k(),
            order: rc.order(),
            n_channels: n,
            channel_names: data.channel_names().to_vec(),
            alpha: rc.alpha,
            n_tests: rc.n_tests,
            covariance_form: form,
            tau,
            include_self_loops: self_loops,
            regime_sample_counts: counts,
            files,
        },
    )?;
    let names = data.channel_names().to_vec();
    out.write("edges.csv", |w| write_edges_csv(w, &edges, &names))?;
    out.write_json(
        "adjacency.json",
        &AdjacencySummary::new(&edges, tau, rc.alpha),
    )?;
    for path in out.commit()? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
