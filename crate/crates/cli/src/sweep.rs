use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use durm::trainer::train;
use rayon::prelude::*;

use crate::dataset::DataArgs;
use crate::manifest::{RunManifest, SweepSpec};
use crate::train::{summarize, TrainFlags};

pub const MAX_DUMMY: usize = 64;

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Dummy counts: `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1..40")]
    pub range: String,
    /// Seeds per dummy count, starting at the base seed.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Concurrent training jobs (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

pub fn parse_range(s: &str) -> Result<Vec<usize>> {
    let mut out = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (
            a.trim().parse().with_context(|| format!("bad range start in {s:?}"))?,
            b.trim().parse().with_context(|| format!("bad range end in {s:?}"))?,
        );
        if a > b {
            bail!("empty range {s:?}");
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad dummy count {t:?}")))
            .collect::<Result<Vec<_>>>()?
    };
    out.sort_unstable();
    out.dedup();
    if let Some(&c) = out.iter().find(|&&c| c > MAX_DUMMY) {
        bail!("dummy count {c} outside [0, {MAX_DUMMY}]");
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Cell {
    num_dummy: usize,
    seed: u64,
    outcome: std::result::Result<(f64, f64, usize), String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

pub fn run(args: &SweepArgs) -> Result<()> {
    if args.repeats == 0 {
        bail!("--repeats must be >= 1");
    }
    let requested = parse_range(&args.range)?;
    let base = args.train.config()?;
    let spec = args.data.spec(base.seed)?;
    let split = spec.load()?;
    let manifest = RunManifest::new(
        "sweep",
        base.clone(),
        spec,
        split.train.provenance().clone(),
        Some(SweepSpec {
            num_dummy: requested.clone(),
            repeats: args.repeats,
        }),
    );
    let dir = args.out.join(format!("sweep-{}", manifest.short()));
    fs::create_dir_all(dir.join("cells")).with_context(|| format!("creating {}", dir.display()))?;
    manifest.save(&dir.join("manifest.json"))?;
    let digest = manifest.digest.clone();

    let mut grid = requested.clone();
    if !grid.contains(&0) {
        grid.insert(0, 0);
    }
    let jobs: Vec<(usize, u64)> = grid
        .iter()
        .flat_map(|&c| (0..args.repeats as u64).map(move |r| (c, base.seed + r)))
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build()?;
    let cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(num_dummy, seed)| {
                let cfg = durm::TrainConfig {
                    num_dummy,
                    seed,
                    ..base.clone()
                };
                let outcome = (|| -> Result<(f64, f64, usize)> {
                    let r = train(&split.train, Some(&split.test), &cfg)?;
                    let s = summarize(&r, &split, &digest)?;
                    let cell_dir = dir.join("cells").join(format!("cd{num_dummy:02}-seed{seed}"));
                    fs::create_dir_all(&cell_dir)?;
                    fs::write(cell_dir.join("result.json"), serde_json::to_string_pretty(&s)?)?;
                    Ok((
                        s.final_metrics.test_accuracy,
                        s.best.test_accuracy,
                        s.final_metrics.test_dummy_predictions,
                    ))
                })()
                .map_err(|e| format!("{e:#}"));
                if let Err(e) = &outcome {
                    eprintln!("cell num_dummy={num_dummy} seed={seed} failed: {e}");
                }
                Cell {
                    num_dummy,
                    seed,
                    outcome,
                }
            })
            .collect()
    });

    let baseline: BTreeMap<u64, f64> = cells
        .iter()
        .filter(|c| c.num_dummy == 0)
        .filter_map(|c| c.outcome.as_ref().ok().map(|o| (c.seed, o.0)))
        .collect();
    let has_durm = grid.iter().any(|&c| c > 0);
    let wins = |c: &Cell| -> Option<bool> {
        let acc = c.outcome.as_ref().ok()?.0;
        Some(acc > *baseline.get(&c.seed)?)
    };

    let mut cells_csv = format!("# manifest_digest={digest}\n");
    cells_csv.push_str("num_dummy,seed,status,test_accuracy,best_test_accuracy,test_dummy_predictions");
    cells_csv.push_str(if has_durm { ",beats_baseline\n" } else { "\n" });
    for c in &cells {
        match &c.outcome {
            Ok((acc, best, dummy)) => {
                let _ = write!(cells_csv, "{},{},ok,{acc},{best},{dummy}", c.num_dummy, c.seed);
            }
            Err(_) => {
                let _ = write!(cells_csv, "{},{},failed,,,", c.num_dummy, c.seed);
            }
        }
        if has_durm {
            let w = match (c.num_dummy, wins(c)) {
                (0, _) | (_, None) => String::new(),
                (_, Some(w)) => u8::from(w).to_string(),
            };
            let _ = write!(cells_csv, ",{w}");
        }
        cells_csv.push('\n');
    }

    let mut summary = format!("# manifest_digest={digest}\n");
    summary.push_str("num_dummy,cells,completed,mean_accuracy,std_accuracy");
    summary.push_str(if has_durm { ",wins\n" } else { "\n" });
    println!("num_dummy  accuracy (mean +- std)  wins");
    for &c in &grid {
        let row: Vec<&Cell> = cells.iter().filter(|x| x.num_dummy == c).collect();
        let accs: Vec<f64> = row.iter().filter_map(|x| x.outcome.as_ref().ok().map(|o| o.0)).collect();
        let (mean, std) = mean_std(&accs);
        let _ = write!(summary, "{c},{},{},{mean},{std}", row.len(), accs.len());
        let w = if c == 0 {
            String::new()
        } else {
            row.iter().filter(|x| wins(x) == Some(true)).count().to_string()
        };
        if has_durm {
            let _ = write!(summary, ",{w}");
        }
        summary.push('\n');
        println!("{c:>9}  {mean:.4} +- {std:.4}  {w:>12}");
    }
    fs::write(dir.join("cells.csv"), cells_csv)?;
    fs::write(dir.join("summary.csv"), summary)?;
    println!("sweep_dir={}", dir.display());
    Ok(())
}
