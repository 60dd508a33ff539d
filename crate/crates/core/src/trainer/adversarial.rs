//! FGSM and PGD input perturbations under the L-infinity norm.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::head::{pad_label, HeadConfig};
use crate::model::MlpParams;
use crate::numerics::{check_finite, grad_logits, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Attack {
    Fgsm { epsilon: f64 },
    Pgd { epsilon: f64, steps: usize, step_size: f64 },
}

impl Attack {
    pub fn epsilon(&self) -> f64 {
        match *self {
            Attack::Fgsm { epsilon } | Attack::Pgd { epsilon, .. } => epsilon,
        }
    }

    fn validate(&self) -> Result<()> {
        let eps = self.epsilon();
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {eps}")));
        }
        if let Attack::Pgd { steps, step_size, .. } = *self {
            if steps < 1 {
                return Err(Error::InvalidConfig("pgd needs at least one step".into()));
            }
            if !(step_size >= 0.0 && step_size.is_finite()) {
                return Err(Error::InvalidConfig(format!("step_size must be >= 0, got {step_size}")));
            }
        }
        Ok(())
    }
}

/// Gradient of the padded-label cross-entropy with respect to the input.
pub fn input_gradient(params: &MlpParams, x: &[f64], y: usize, head: &HeadConfig) -> Result<Vec<f64>> {
    let (logits, trace) = params.forward(x)?;
    let p = softmax(&logits)?;
    let d = grad_logits(&p, &pad_label(y, head)?)?;
    let g = params.backward(&trace, &d)?.input;
    check_finite(&g, "input gradient")?;
    Ok(g)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Perturbs `x` to increase the loss on label `y`, then clips every
/// coordinate into `range`.
///
/// PGD takes `steps` signed-gradient steps of `step_size`, projecting back
/// into the epsilon ball around `x` after each one.
pub fn adversarial_perturb(
    attack: &Attack,
    params: &MlpParams,
    x: &[f64],
    y: usize,
    head: &HeadConfig,
    range: &[(f64, f64)],
) -> Result<Vec<f64>> {
    attack.validate()?;
    if range.len() != x.len() {
        return Err(shape_err("input range", x.len(), range.len()));
    }
    let clip = |v: &mut Vec<f64>| {
        for (vi, &(lo, hi)) in v.iter_mut().zip(range) {
            *vi = vi.clamp(lo, hi);
        }
    };
    match *attack {
        Attack::Fgsm { epsilon } => {
            if epsilon == 0.0 {
                return Ok(x.to_vec());
            }
            let g = input_gradient(params, x, y, head)?;
            let mut out: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + epsilon * sign(*gi)).collect();
            clip(&mut out);
            Ok(out)
        }
        Attack::Pgd {
            epsilon,
            steps,
            step_size,
        } => {
            if epsilon == 0.0 {
                return Ok(x.to_vec());
            }
            let mut cur = x.to_vec();
            for _ in 0..steps {
                let g = input_gradient(params, &cur, y, head)?;
                for i in 0..cur.len() {
                    let stepped = cur[i] + step_size * sign(g[i]);
                    cur[i] = stepped.clamp(x[i] - epsilon, x[i] + epsilon);
                }
                clip(&mut cur);
            }
            Ok(cur)
        }
    }
}

/// Accuracy on `data` after attacking every sample (real-class argmax over
/// the full head, as in clean evaluation).
pub fn robust_accuracy(
    params: &MlpParams,
    data: &Dataset,
    head: &HeadConfig,
    attack: &Attack,
    range: &[(f64, f64)],
) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..data.len() {
        let y = data.labels()[i];
        let adv = adversarial_perturb(attack, params, data.sample(i), y, head, range)?;
        if params.predict(&adv)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
