use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use durm::data::{gen_blobs, load_csv, train_test_split, Split};
use durm::trainer::make_longtail;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Synthetic Gaussian blobs or a CSV file.
    #[arg(long, value_enum, default_value = "blobs")]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 300)]
    pub per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 5.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Seed for data generation and the split (defaults to the run seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long, required_if_eq("dataset", "csv"))]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub test_fraction: f64,
    /// Subsample the training side to a long-tail profile with this head/tail ratio.
    #[arg(long)]
    pub longtail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

/// Everything needed to rebuild the train/test split of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: Source,
    pub seed: u64,
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longtail: Option<f64>,
}

impl DataArgs {
    pub fn spec(&self, run_seed: u64) -> Result<DataSpec> {
        let source = match self.dataset {
            DatasetKind::Blobs => Source::Blobs {
                classes: self.classes,
                per_class: self.per_class,
                dim: self.dim,
                separation: self.separation,
                spread: self.spread,
            },
            DatasetKind::Csv => match &self.csv {
                Some(path) => Source::Csv {
                    path: path.clone(),
                    label_column: self.label_column.clone(),
                },
                None => bail!("--dataset csv needs --csv PATH"),
            },
        };
        Ok(DataSpec {
            source,
            seed: self.data_seed.unwrap_or(run_seed),
            test_fraction: self.test_fraction,
            longtail: self.longtail,
        })
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Split> {
        let data = match &self.source {
            Source::Blobs {
                classes,
                per_class,
                dim,
                separation,
                spread,
            } => gen_blobs(self.seed, *classes, *per_class, *dim, *separation, *spread)?,
            Source::Csv { path, label_column } => load_csv(path, label_column)?,
        };
        let mut split = train_test_split(&data, self.test_fraction, self.seed, true)?;
        if let Some(ratio) = self.longtail {
            split.train = make_longtail(&split.train, ratio, self.seed)?;
        }
        Ok(split)
    }
}
