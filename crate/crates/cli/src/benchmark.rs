use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fsvar::bench::{run_replication, BenchConfig, Method};
use fsvar::metrics::{write_records_csv, write_timings_csv, BenchmarkRecord};
use fsvar::sskf::EmConfig;

use crate::config::{merge, Common};
use crate::output::Staging;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 100 replications.
    Paper,
    /// 20 replications.
    Desk,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Channel counts [default: 10,20,...,100].
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Replications per N [default: 100, or the preset's].
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Subset of fsvar-coupled,fsvar-decoupled,kmeans [default: all].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Fixed factor count; BIC when omitted.
    #[arg(long)]
    pub r: Option<usize>,
    /// Largest r considered by BIC, capped at N - 1 [default: 10].
    #[arg(long)]
    pub max_r: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub sticky: Option<f64>,
    /// Sliding-window length [default: 30].
    #[arg(long)]
    pub window: Option<usize>,
    /// Sliding-window step [default: 1].
    #[arg(long)]
    pub shift: Option<usize>,
    /// Ridge penalty [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// K-means starts [default: 10].
    #[arg(long)]
    pub kmeans_restarts: Option<usize>,
}

impl BenchmarkArgs {
    fn config(&self) -> BenchConfig {
        let d = BenchConfig::default();
        let em = EmConfig {
            max_iters: self.max_iters.unwrap_or(d.em.max_iters),
            loglik_rel_tol: self.tol.unwrap_or(d.em.loglik_rel_tol),
            n_restarts: self.restarts.unwrap_or(d.em.n_restarts),
            init_sticky_prob: self.sticky.unwrap_or(d.em.init_sticky_prob),
            ..d.em.clone()
        };
        BenchConfig {
            r: self.r,
            max_r: self.max_r.unwrap_or(d.max_r),
            em,
            window: self.window.unwrap_or(d.window),
            shift: self.shift.unwrap_or(d.shift),
            lambda: self.lambda.unwrap_or(d.lambda),
            kmeans_restarts: self.kmeans_restarts.unwrap_or(d.kmeans_restarts),
            ..d
        }
    }

    fn methods(&self) -> CliResult<Vec<Method>> {
        let Some(names) = &self.methods else {
            return Ok(Method::ALL.to_vec());
        };
        let mut out = Vec::new();
        for name in names {
            let m: Method = name.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(CliError::Usage("--methods is empty".into()));
        }
        // Fixed column order regardless of how the list was written.
        out.sort_by_key(|m| Method::ALL.iter().position(|a| a == m));
        Ok(out)
    }
}

/// Writes `records.csv` (deterministic) and `timings.csv` (wall times).
pub fn run(args: BenchmarkArgs) -> CliResult<()> {
    let config = args.common.config.clone();
    let args = merge(args, config.as_ref())?;
    let n_list = args
        .n_list
        .clone()
        .unwrap_or_else(|| (1..=10).map(|i| 10 * i).collect());
    if n_list.is_empty() {
        return Err(CliError::Usage("--n-list is empty".into()));
    }
    let reps = args.replications.unwrap_or(match args.preset {
        Some(Preset::Desk) => 20,
        _ => 100,
    });
    if reps == 0 {
        return Err(CliError::Usage("--replications must be >= 1".into()));
    }
    let methods = args.methods()?;
    let cfg = args.config();
    cfg.em.validate()?;
    let seed = args.common.seed();

    let cells: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..reps).map(move |rep| (n, rep)))
        .collect();
    let results: Vec<(usize, usize, fsvar::Result<Vec<BenchmarkRecord>>)> = cells
        .par_iter()
        .map(|&(n, rep)| {
            log::info!("N={n} replication {rep}");
            (n, rep, run_replication(n, rep, &methods, &cfg, seed))
        })
        .collect();
    let mut records = Vec::with_capacity(cells.len() * methods.len());
    for (n, rep, res) in results {
        match res {
            Ok(recs) => records.extend(recs),
            Err(e) => {
                log::warn!("N={n} replication {rep} failed: {e}");
                records.extend(methods.iter().map(|m| BenchmarkRecord {
                    n,
                    method: m.name().into(),
                    replication: rep,
                    r: None,
                    state_accuracy: None,
                    skf_accuracy: None,
                    frob_sq_error: Vec::new(),
                    runtime_ms: 0.0,
                    error: Some(e.to_string()),
                }));
            }
        }
    }
    let k = cfg.scenario.k;
    let mut out = Staging::new(&args.common.out_dir())?;
    out.write("records.csv", |w| write_records_csv(w, &records, k))?;
    out.write("timings.csv", |w| write_timings_csv(w, &records))?;
    for path in out.commit()? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
