use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use durm::instrumentation::{
    estimate_flatness, estimate_top_hessian_eigenvalue, MlpObjective, DEFAULT_FD_STEP, DEFAULT_POWER_ITERATIONS,
};
use durm::model::Checkpoint;

use crate::dataset::DataArgs;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct FlatnessArgs {
    /// Checkpoint file; repeat for several.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Rebuild the dataset from a run manifest instead of the data flags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "train")]
    pub split: Side,
    /// Probe radii, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_POWER_ITERATIONS)]
    pub hessian_iterations: usize,
    #[arg(long, env = "DURM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &FlatnessArgs) -> Result<()> {
    let spec = match &args.manifest {
        Some(path) => RunManifest::load(path)?.data,
        None => args.data.spec(args.seed)?,
    };
    let split = spec.load()?;
    let data = match args.split {
        Side::Train => &split.train,
        Side::Test => &split.test,
    };
    let mut csv = String::from("checkpoint,manifest_digest,delta,trials,epsilon_hat,tau,rho,rho_converged\n");
    for path in &args.checkpoints {
        if !path.exists() {
            bail!("checkpoint {} not found", path.display());
        }
        let ckpt = Checkpoint::load(path)?;
        let Some(head) = ckpt.head else {
            bail!("checkpoint {} has no head description", path.display());
        };
        let params = ckpt.to_params()?;
        let obj = MlpObjective::new(&params, data, head)
            .with_context(|| format!("checkpoint {} does not fit the dataset", path.display()))?;
        let w = params.flatten();
        let h = estimate_top_hessian_eigenvalue(&obj, &w, args.hessian_iterations, DEFAULT_FD_STEP, args.seed)?;
        let digest = ckpt.manifest_digest.as_deref().unwrap_or("");
        for &delta in &args.delta {
            let f = estimate_flatness(&obj, &w, delta, args.trials, args.seed)?;
            let _ = writeln!(
                csv,
                "{},{digest},{delta},{},{},{},{},{}",
                path.display(),
                f.trials,
                f.epsilon_hat,
                f.tau,
                h.rho,
                h.converged
            );
        }
    }
    match &args.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
