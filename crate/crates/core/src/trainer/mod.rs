//! Mini-batch SGD training of an MLP under ERM or DuRM, with optional
//! regularizers and full gradient instrumentation.

pub mod adversarial;
pub mod longtail;
pub mod optim;
pub mod regularizers;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::head::{gradient_fraction, pad_label, HeadConfig};
use crate::instrumentation::{model_distance, GradientTrace, LayerVarianceAccumulator};
use crate::model::{Gradients, MlpParams};
use crate::numerics::{argmax, cross_entropy, grad_logits, softmax};
use crate::rng::{stream, Stream};

pub use adversarial::{adversarial_perturb, input_gradient, robust_accuracy, Attack};
pub use longtail::{longtail_counts, make_longtail};
pub use optim::{sgd_step, SgdConfig};
pub use regularizers::{
    ema_update, mixup_batch, EarlyStop, EarlyStopper, Ema, Mixup, Regularizers, Swa, SwaState,
};

fn default_learning_rate() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    32
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Number of dummy classes; 0 is plain ERM.
    #[serde(default)]
    pub num_dummy: usize,
    #[serde(default)]
    pub regularizers: Regularizers,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            hidden: default_hidden(),
            num_dummy: 0,
            regularizers: Regularizers::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        self.regularizers.validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn head(&self, num_classes: usize) -> Result<HeadConfig> {
        HeadConfig::new(num_classes, self.num_dummy)
    }
}

/// Loss and accuracy of a model on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy against zero-padded labels.
    pub loss: f64,
    pub accuracy: f64,
    /// Samples whose argmax landed on a dummy class.
    pub dummy_predictions: usize,
    #[serde(skip)]
    pub predictions: Vec<usize>,
}

pub fn evaluate(params: &MlpParams, data: &Dataset, head: &HeadConfig) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let logits = params.logits(data.sample(i))?;
        let p = softmax(&logits)?;
        loss += cross_entropy(&p, &pad_label(data.labels()[i], head)?)?;
        let pred = argmax(&logits);
        correct += usize::from(pred == data.labels()[i]);
        predictions.push(pred);
    }
    let dummy_predictions = predictions.iter().filter(|&&p| p >= head.num_classes).count();
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        dummy_predictions,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's optimizer steps (against mixed
    /// targets when mixup is on).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub dummy_predictions: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub config: TrainConfig,
    pub head: HeadConfig,
    pub history: Vec<EpochMetrics>,
    pub trace: GradientTrace,
    /// Parameters at initialization and after every epoch.
    pub snapshots: Vec<MlpParams>,
    /// `||w_e - w_0||^2` for every snapshot.
    pub model_distance: Vec<f64>,
    pub final_params: MlpParams,
    /// Parameters from the epoch with the lowest validation loss.
    pub best_params: MlpParams,
    pub best_epoch: usize,
    pub ema_params: Option<MlpParams>,
    pub swa_params: Option<MlpParams>,
    pub stopped_early: bool,
}

impl TrainResult {
    pub fn initial_params(&self) -> &MlpParams {
        &self.snapshots[0]
    }
}

fn diverged(epoch: usize, step: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        epoch,
        step,
        detail: detail.into(),
    }
}

/// Trains on `train` and tracks validation metrics on `valid` (or on `train`
/// when no validation set is given).
///
/// Every non-finite loss or parameter aborts with [`Error::Divergence`].
pub fn train(train: &Dataset, valid: Option<&Dataset>, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let head = config.head(train.num_classes())?;
    if let Some(v) = valid {
        if v.dim() != train.dim() {
            return Err(crate::error::shape_err("validation dim", train.dim(), v.dim()));
        }
    }
    let valid = valid.unwrap_or(train);
    let sgd = config.sgd();

    let mut params = MlpParams::init(train.dim(), &config.hidden, &head, config.seed)?;
    let mut velocity = Gradients::zeros_like(&params);
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut mixup_rng = stream(config.seed, Stream::Mixup);

    let mut trace = GradientTrace::new(&head);
    let mut layer_acc = LayerVarianceAccumulator::new(&params);
    let mut snapshots = vec![params.clone()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut ema = config.regularizers.ema.map(|e| (params.clone(), e.decay));
    let mut swa = config.regularizers.swa.map(|s| SwaState::new(s.start_epoch));
    let mut stopper = config.regularizers.early_stop.map(|e| EarlyStopper::new(e.patience));
    let mut best: Option<(f64, usize, MlpParams)> = None;
    let mut stopped_early = false;

    let targets: Vec<Vec<f64>> = train
        .labels()
        .iter()
        .map(|&y| pad_label(y, &head))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut per_sample = Vec::with_capacity(train.len());
        let mut fraction_sum = vec![0.0; head.num_dummy];
        let mut underflows = 0usize;
        let mut loss_sum = 0.0;

        for batch in order.chunks(config.batch_size) {
            let (xs, ys) = match config.regularizers.mixup {
                Some(m) => {
                    let xs: Vec<Vec<f64>> = batch.iter().map(|&i| train.sample(i).to_vec()).collect();
                    let ys: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
                    let (xs, ys, _) = mixup_batch(&xs, &ys, m.alpha, &mut mixup_rng)?;
                    (xs, ys)
                }
                None => (
                    batch.iter().map(|&i| train.sample(i).to_vec()).collect(),
                    batch.iter().map(|&i| targets[i].clone()).collect(),
                ),
            };

            let mut acc = Gradients::zeros_like(&params);
            for (x, y) in xs.iter().zip(&ys) {
                let (logits, fwd) = params.forward(x)?;
                let p = softmax(&logits).map_err(|e| diverged(epoch, step, e.to_string()))?;
                let loss = cross_entropy(&p, y)?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, step, format!("loss {loss}")));
                }
                loss_sum += loss;
                let d = grad_logits(&p, y)?;
                if head.num_dummy > 0 {
                    let f = gradient_fraction(&p[head.num_classes..])?;
                    underflows += usize::from(f.underflow);
                    for (s, v) in fraction_sum.iter_mut().zip(&f.fractions) {
                        *s += v;
                    }
                }
                let g = params.backward(&fwd, &d)?;
                layer_acc.push(&g);
                acc.add_assign(&g);
                per_sample.push(d);
            }
            acc.scale(1.0 / batch.len() as f64);
            trace.step_grad_norms.push(acc.norm());
            sgd_step(&mut params, &acc, &mut velocity, &sgd)
                .map_err(|e| diverged(epoch, step, e.to_string()))?;
            if params.flatten().iter().any(|v| !v.is_finite()) {
                return Err(diverged(epoch, step, "non-finite parameters after update"));
            }
            if let Some((shadow, decay)) = ema.as_mut() {
                ema_update(shadow, &params, *decay);
            }
            step += 1;
        }

        trace.record_epoch_gradients(epoch, &per_sample)?;
        let n = per_sample.len() as f64;
        trace
            .dummy_fraction
            .push(fraction_sum.iter().map(|s| s / n).collect());
        trace.fraction_underflows.push(underflows);
        trace.layer_variance.push(layer_acc.finish());
        trace.steps_per_epoch.push(step);

        if let Some(s) = swa.as_mut() {
            s.observe(&params, epoch);
        }
        snapshots.push(params.clone());

        let train_eval = evaluate(&params, train, &head)?;
        let val_eval = evaluate(&params, valid, &head)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: train_eval.accuracy,
            val_loss: val_eval.loss,
            val_accuracy: val_eval.accuracy,
            dummy_predictions: val_eval.dummy_predictions,
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_eval.loss < *l) {
            best = Some((val_eval.loss, epoch, params.clone()));
        }
        if let Some(s) = stopper.as_mut() {
            if s.observe(val_eval.loss) {
                stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }

    let model_distance = snapshots
        .iter()
        .map(|s| model_distance(s, &snapshots[0]))
        .collect::<Result<_>>()?;
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainResult {
        config: config.clone(),
        head,
        history,
        trace,
        model_distance,
        final_params: params,
        best_params,
        best_epoch,
        ema_params: ema.map(|(p, _)| p),
        swa_params: swa.and_then(|s| s.mean),
        stopped_early,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    fn blobs() -> Dataset {
        gen_blobs(3, 3, 40, 2, 4.0, 1.0).unwrap()
    }

    fn quick(num_dummy: usize) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            hidden: vec![8],
            num_dummy,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
        let err = serde_json::from_str::<TrainConfig>(r#"{"learnig_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learnig_rate"));
        let c: TrainConfig =
            serde_json::from_str(r#"{"num_dummy": 2, "regularizers": {"ema": {"decay": 0.99}}}"#).unwrap();
        assert_eq!(c.num_dummy, 2);
        assert_eq!(c.regularizers.ema, Some(Ema { decay: 0.99 }));
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                hidden: vec![4, 0],
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn records_everything_per_epoch() {
        let d = blobs();
        let r = train(&d, None, &quick(2)).unwrap();
        assert_eq!(r.history.len(), 5);
        assert_eq!(r.snapshots.len(), 6);
        assert_eq!(r.model_distance.len(), 6);
        assert_eq!(r.model_distance[0], 0.0);
        assert_eq!(r.trace.epochs.len(), 5);
        assert_eq!(r.trace.epochs[0].samples, d.len());
        assert_eq!(r.trace.dummy_fraction[0].len(), 2);
        assert_eq!(r.trace.layer_variance[0].len(), 2);
        let steps = d.len().div_ceil(16);
        assert_eq!(r.trace.steps_per_epoch, (1..=5).map(|e| e * steps).collect::<Vec<_>>());
        assert_eq!(r.trace.step_grad_norms.len(), 5 * steps);
        for f in &r.trace.dummy_fraction {
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.final_params.output_width(), 5);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = blobs();
        let a = train(&d, None, &quick(1)).unwrap();
        let b = train(&d, None, &quick(1)).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.history, b.history);
        let c = train(&d, None, &TrainConfig { seed: 12, ..quick(1) }).unwrap();
        assert_ne!(a.final_params, c.final_params);
    }

    #[test]
    fn small_step_loss_decreases() {
        let d = blobs();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 10,
            ..quick(2)
        };
        let r = train(&d, None, &cfg).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{:?}", r.history);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let d = blobs();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            momentum: 0.0,
            ..quick(0)
        };
        match train(&d, None, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn regularizers_produce_outputs() {
        let d = blobs();
        let cfg = TrainConfig {
            epochs: 6,
            regularizers: Regularizers {
                ema: Some(Ema { decay: 0.9 }),
                swa: Some(Swa { start_epoch: 3 }),
                mixup: Some(Mixup { alpha: 0.4 }),
                early_stop: None,
            },
            ..quick(2)
        };
        let r = train(&d, None, &cfg).unwrap();
        assert!(r.ema_params.is_some());
        assert!(r.swa_params.is_some());
        assert_ne!(r.ema_params.unwrap(), r.final_params);
    }

    #[test]
    fn early_stopping_halts() {
        // Rotated labels make validation loss rise as training fits the data.
        let d = blobs();
        let rotated: Vec<usize> = d.labels().iter().map(|y| (y + 1) % 3).collect();
        let valid = Dataset::new(d.features().clone(), rotated, 3, d.provenance().clone()).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            regularizers: Regularizers {
                early_stop: Some(EarlyStop { patience: 3 }),
                ..Default::default()
            },
            ..quick(0)
        };
        let r = train(&d, Some(&valid), &cfg).unwrap();
        assert!(r.history.len() < 50);
        assert!(r.stopped_early);
        assert!(r.best_epoch + 3 < r.history.len() + 1);
    }

    #[test]
    fn evaluation_counts() {
        let d = blobs();
        let head = HeadConfig::new(3, 2).unwrap();
        let p = MlpParams::init(2, &[4], &head, 0).unwrap();
        let e = evaluate(&p, &d, &head).unwrap();
        assert_eq!(e.predictions.len(), d.len());
        assert_eq!(
            e.dummy_predictions,
            e.predictions.iter().filter(|&&x| x >= 3).count()
        );
        assert!((0.0..=1.0).contains(&e.accuracy));
    }
}
