//! Regularizers that run alongside training: early stopping, parameter EMA,
//! stochastic weight averaging and mixup.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MlpParams;

/// Which regularizers are active. All off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularizers {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<EarlyStop>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema: Option<Ema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swa: Option<Swa>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixup: Option<Mixup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ema {
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Swa {
    pub start_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixup {
    pub alpha: f64,
}

impl Regularizers {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.early_stop {
            if e.patience < 1 {
                return Err(Error::InvalidConfig("early_stop.patience must be >= 1".into()));
            }
        }
        if let Some(e) = self.ema {
            if !(0.0..=1.0).contains(&e.decay) {
                return Err(Error::InvalidConfig(format!(
                    "ema.decay must be in [0, 1], got {}",
                    e.decay
                )));
            }
        }
        if let Some(m) = self.mixup {
            if !(m.alpha > 0.0 && m.alpha.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "mixup.alpha must be positive, got {}",
                    m.alpha
                )));
            }
        }
        Ok(())
    }
}

/// `shadow <- decay * shadow + (1 - decay) * params`.
pub fn ema_update(shadow: &mut MlpParams, params: &MlpParams, decay: f64) {
    for (s, p) in shadow.layers_mut().iter_mut().zip(params.layers()) {
        let sv = s.weight.as_mut_slice().iter_mut().chain(s.bias.iter_mut());
        let pv = p.weight.as_slice().iter().chain(&p.bias);
        for (a, b) in sv.zip(pv) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

/// Running mean of epoch-end checkpoints from `start_epoch` on.
#[derive(Debug, Clone)]
pub struct SwaState {
    pub start_epoch: usize,
    pub count: usize,
    pub mean: Option<MlpParams>,
}

impl SwaState {
    pub fn new(start_epoch: usize) -> Self {
        Self {
            start_epoch,
            count: 0,
            mean: None,
        }
    }

    /// Folds in the checkpoint of `epoch`; earlier epochs are ignored.
    pub fn observe(&mut self, params: &MlpParams, epoch: usize) {
        if epoch < self.start_epoch {
            return;
        }
        self.count += 1;
        match &mut self.mean {
            None => self.mean = Some(params.clone()),
            Some(mean) => {
                let n = self.count as f64;
                for (m, p) in mean.layers_mut().iter_mut().zip(params.layers()) {
                    let mv = m.weight.as_mut_slice().iter_mut().chain(m.bias.iter_mut());
                    let pv = p.weight.as_slice().iter().chain(&p.bias);
                    for (a, b) in mv.zip(pv) {
                        *a += (b - *a) / n;
                    }
                }
            }
        }
    }
}

/// Tracks validation loss; signals a stop after `patience` epochs without
/// improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Returns true when training should stop.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

/// `lambda * a + (1 - lambda) * b`, element-wise.
pub fn mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Mixed inputs, mixed targets and the mixing weight.
pub type MixedBatch = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

/// Mixes every sample of a batch with a partner from a random permutation
/// of the same batch, using one `lambda ~ Beta(alpha, alpha)`.
pub fn mixup_batch<R: Rng>(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::InvalidConfig(format!("mixup alpha {alpha}: {e}")))?;
    let lambda: f64 = beta.sample(rng);
    let mut partner: Vec<usize> = (0..inputs.len()).collect();
    rand::seq::SliceRandom::shuffle(partner.as_mut_slice(), rng);
    let xs = partner
        .iter()
        .enumerate()
        .map(|(i, &j)| mix(&inputs[i], &inputs[j], lambda))
        .collect();
    let ys = partner
        .iter()
        .enumerate()
        .map(|(i, &j)| mix(&targets[i], &targets[j], lambda))
        .collect();
    Ok((xs, ys, lambda))
}
