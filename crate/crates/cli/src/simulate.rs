use clap::Args;
use serde::{Deserialize, Serialize};

use fsvar::simgen::{simulate_switching_var, SimScenario};

use crate::config::{merge, Common};
use crate::output::Staging;
use crate::CliResult;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Number of channels (a multiple of --block-size).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of regimes.
    #[arg(long)]
    pub k: Option<usize>,
    /// VAR order.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Time points per block.
    #[arg(long)]
    pub block_length: Option<usize>,
    #[arg(long)]
    pub n_blocks: Option<usize>,
    /// Per-regime coefficient half-ranges, e.g. `0.4,0.2`.
    #[arg(long, value_delimiter = ',')]
    pub coeff_ranges: Option<Vec<f64>>,
    /// Innovation variance.
    #[arg(long)]
    pub noise_var: Option<f64>,
}

impl SimulateArgs {
    pub fn scenario(&self) -> SimScenario {
        let d = SimScenario::default();
        SimScenario {
            n: self.n.unwrap_or(d.n),
            k: self.k.unwrap_or(d.k),
            p: self.p.unwrap_or(d.p),
            block_size: self.block_size.unwrap_or(d.block_size),
            coeff_ranges: self.coeff_ranges.clone().unwrap_or(d.coeff_ranges),
            noise_var: self.noise_var.unwrap_or(d.noise_var),
            block_length: self.block_length.unwrap_or(d.block_length),
            n_blocks: self.n_blocks.unwrap_or(d.n_blocks),
            seed: self.common.seed(),
        }
    }
}

/// Writes `data.csv` and `truth.json`.
pub fn run(args: SimulateArgs) -> CliResult<()> {
    let config = args.common.config.clone();
    let args = merge(args, config.as_ref())?;
    let scenario = args.scenario();
    let (data, truth) = simulate_switching_var(&scenario)?;
    let mut out = Staging::new(&args.common.out_dir())?;
    out.write("data.csv", |w| data.write_csv(w))?;
    out.write_json("truth.json", &truth.to_file(&scenario))?;
    for path in out.commit()? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
