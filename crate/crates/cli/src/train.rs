use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use durm::data::{Dataset, Split};
use durm::instrumentation::{
    estimate_flatness, estimate_top_hessian_eigenvalue, FlatnessReport, GradientTrace, MlpObjective,
    DEFAULT_FD_STEP, DEFAULT_POWER_ITERATIONS,
};
use durm::model::{Checkpoint, MlpParams};
use durm::trainer::{evaluate, train, EarlyStop, Ema, EpochMetrics, Mixup, Swa, TrainConfig, TrainResult};
use durm::HeadConfig;
use serde::Serialize;

use crate::dataset::DataArgs;
use crate::manifest::RunManifest;

/// Training hyperparameters; each flag overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// JSON training config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of dummy classes (0 = ERM).
    #[arg(long)]
    pub dummy: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, env = "DURM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATIENCE")]
    pub early_stop: Option<usize>,
    #[arg(long, value_name = "DECAY")]
    pub ema: Option<f64>,
    #[arg(long, value_name = "START_EPOCH")]
    pub swa: Option<usize>,
    #[arg(long, value_name = "ALPHA")]
    pub mixup: Option<f64>,
}

impl TrainFlags {
    pub fn config(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str::<TrainConfig>(&text)
                    .with_context(|| format!("invalid config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            };
        }
        set!(dummy => num_dummy);
        set!(epochs => epochs);
        set!(lr => learning_rate);
        set!(momentum => momentum);
        set!(weight_decay => weight_decay);
        set!(batch_size => batch_size);
        set!(hidden => hidden);
        set!(seed => seed);
        let r = &mut c.regularizers;
        if let Some(patience) = self.early_stop {
            r.early_stop = Some(EarlyStop { patience });
        }
        if let Some(decay) = self.ema {
            r.ema = Some(Ema { decay });
        }
        if let Some(start_epoch) = self.swa {
            r.swa = Some(Swa { start_epoch });
        }
        if let Some(alpha) = self.mixup {
            r.mixup = Some(Mixup { alpha });
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Probe radius for the flatness report.
    #[arg(long, default_value_t = 0.1)]
    pub flatness_delta: f64,
    #[arg(long, default_value_t = 20)]
    pub flatness_trials: usize,
    #[arg(long, default_value_t = DEFAULT_POWER_ITERATIONS)]
    pub hessian_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub train_dummy_predictions: usize,
    pub test_dummy_predictions: usize,
}

impl Metrics {
    pub fn of(params: &MlpParams, split: &Split, head: &HeadConfig) -> Result<Self> {
        let tr = evaluate(params, &split.train, head)?;
        let te = evaluate(params, &split.test, head)?;
        Ok(Self {
            train_accuracy: tr.accuracy,
            test_accuracy: te.accuracy,
            test_loss: te.loss,
            train_dummy_predictions: tr.dummy_predictions,
            test_dummy_predictions: te.dummy_predictions,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub manifest_digest: String,
    pub mode: String,
    pub num_classes: usize,
    pub num_dummy: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    #[serde(rename = "final")]
    pub final_metrics: Metrics,
    pub best_epoch: usize,
    pub best: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ema: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swa: Option<Metrics>,
    pub history: Vec<EpochMetrics>,
}

pub fn summarize(r: &TrainResult, split: &Split, digest: &str) -> Result<RunSummary> {
    let opt = |p: &Option<MlpParams>| -> Result<Option<Metrics>> {
        p.as_ref().map(|p| Metrics::of(p, split, &r.head)).transpose()
    };
    Ok(RunSummary {
        manifest_digest: digest.to_string(),
        mode: r.head.mode_name().to_string(),
        num_classes: r.head.num_classes,
        num_dummy: r.head.num_dummy,
        epochs_run: r.history.len(),
        stopped_early: r.stopped_early,
        final_metrics: Metrics::of(&r.final_params, split, &r.head)?,
        best_epoch: r.best_epoch,
        best: Metrics::of(&r.best_params, split, &r.head)?,
        ema: opt(&r.ema_params)?,
        swa: opt(&r.swa_params)?,
        history: r.history.clone(),
    })
}

pub fn flatness_report(
    r: &TrainResult,
    data: &Dataset,
    delta: f64,
    trials: usize,
    iterations: usize,
) -> Result<FlatnessReport> {
    let obj = MlpObjective::new(&r.final_params, data, r.head)?;
    let w = r.final_params.flatten();
    let h = estimate_top_hessian_eigenvalue(&obj, &w, iterations, DEFAULT_FD_STEP, r.config.seed)?;
    let f = estimate_flatness(&obj, &w, delta, trials, r.config.seed)?;
    Ok(FlatnessReport {
        model_distance: r.model_distance.clone(),
        cumulative_grad_norm: r.trace.cumulative_grad_norm(),
        rho: h.rho,
        rho_converged: h.converged,
        epsilon_hat: f.epsilon_hat,
        tau: f.tau,
        delta,
    })
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    manifest_digest: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, digest: &str, body: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Tagged {
        manifest_digest: digest,
        body,
    })?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Per-epoch series, one row per epoch. The first line records the
/// manifest digest as a `#` comment.
pub fn epochs_csv(r: &TrainResult, digest: &str) -> String {
    let trace: &GradientTrace = &r.trace;
    let width = r.head.width();
    let cumulative = trace.cumulative_grad_norm();
    let mut out = format!("# manifest_digest={digest}\n");
    out.push_str("epoch,train_loss,train_accuracy,val_loss,val_accuracy,dummy_predictions,model_distance,cumulative_grad_norm");
    for k in 0..width {
        let _ = write!(out, ",grad_variance_{k}");
    }
    for j in 0..r.head.num_dummy {
        let _ = write!(out, ",dummy_fraction_{j}");
    }
    for l in 0..r.final_params.layers().len() {
        let _ = write!(out, ",layer_variance_{l}");
    }
    out.push('\n');
    for (e, m) in r.history.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            m.dummy_predictions,
            r.model_distance[e + 1],
            cumulative[e + 1]
        );
        for v in &trace.epochs[e].variance {
            let _ = write!(out, ",{v}");
        }
        for v in &trace.dummy_fraction[e] {
            let _ = write!(out, ",{v}");
        }
        for v in &trace.layer_variance[e] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn save_checkpoint(dir: &Path, name: &str, params: &MlpParams, head: HeadConfig, digest: &str) -> Result<()> {
    let mut c = Checkpoint::from_params(params, Some(head));
    c.manifest_digest = Some(digest.to_string());
    c.save(&dir.join(format!("{name}.json")))?;
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let config = args.train.config()?;
    let spec = args.data.spec(config.seed)?;
    let split = spec.load()?;
    let manifest = RunManifest::new(
        "train",
        config.clone(),
        spec,
        split.train.provenance().clone(),
        None,
    );
    let dir = args.out.join(manifest.short());
    fs::create_dir_all(dir.join("checkpoints"))
        .with_context(|| format!("creating {}", dir.display()))?;
    manifest.save(&dir.join("manifest.json"))?;

    let r = train(&split.train, Some(&split.test), &config)?;
    let digest = &manifest.digest;
    let summary = summarize(&r, &split, digest)?;
    let flat = flatness_report(
        &r,
        &split.train,
        args.flatness_delta,
        args.flatness_trials,
        args.hessian_iterations,
    )?;

    write_json(&dir.join("result.json"), digest, &summary)?;
    write_json(&dir.join("trace.json"), digest, &r.trace)?;
    write_json(&dir.join("flatness.json"), digest, &flat)?;
    fs::write(dir.join("epochs.csv"), epochs_csv(&r, digest))?;
    let ckpt = dir.join("checkpoints");
    save_checkpoint(&ckpt, "init", r.initial_params(), r.head, digest)?;
    save_checkpoint(&ckpt, "final", &r.final_params, r.head, digest)?;
    save_checkpoint(&ckpt, "best", &r.best_params, r.head, digest)?;
    if let Some(p) = &r.ema_params {
        save_checkpoint(&ckpt, "ema", p, r.head, digest)?;
    }
    if let Some(p) = &r.swa_params {
        save_checkpoint(&ckpt, "swa", p, r.head, digest)?;
    }

    let f = &summary.final_metrics;
    println!("run_dir={}", dir.display());
    println!("mode={} num_dummy={}", summary.mode, summary.num_dummy);
    println!("epochs_run={}", summary.epochs_run);
    println!(
        "final_test_accuracy={:.4} final_train_accuracy={:.4}",
        f.test_accuracy, f.train_accuracy
    );
    println!("best_epoch={} best_test_accuracy={:.4}", summary.best_epoch, summary.best.test_accuracy);
    println!("dummy_predictions={}", f.test_dummy_predictions + f.train_dummy_predictions);
    println!(
        "rho={:.6} epsilon_hat={:.6e} tau={:.6e}",
        flat.rho, flat.epsilon_hat, flat.tau
    );
    Ok(())
}
