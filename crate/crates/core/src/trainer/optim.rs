use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, MlpParams};

/// Heavy-ball SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- momentum * v - lr * (g + weight_decay * w)`, then `w <- w + v`.
///
/// `velocity` has the shape of the parameters; its input-gradient slot is
/// unused. Non-finite gradients are rejected before anything is modified.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    cfg: &SgdConfig,
) -> Result<()> {
    if grads.layers.len() != params.layers().len() || velocity.layers.len() != params.layers().len() {
        return Err(crate::error::shape_err(
            "sgd layer count",
            params.layers().len(),
            grads.layers.len(),
        ));
    }
    for (l, g) in grads.layers.iter().enumerate() {
        let p = &params.layers()[l];
        if g.weight.shape() != p.weight.shape() || velocity.layers[l].weight.shape() != p.weight.shape() {
            return Err(crate::error::shape_err(
                "sgd layer shape",
                format!("{:?}", p.weight.shape()),
                format!("{:?}", g.weight.shape()),
            ));
        }
        if let Some(index) = g
            .weight
            .as_slice()
            .iter()
            .chain(&g.bias)
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                what: "parameter gradient",
                index,
            });
        }
    }
    let SgdConfig {
        learning_rate: lr,
        momentum,
        weight_decay: wd,
    } = *cfg;
    for ((p, g), v) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        let pw = p.weight.as_mut_slice().iter_mut().chain(p.bias.iter_mut());
        let gw = g.weight.as_slice().iter().chain(&g.bias);
        let vw = v.weight.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
        for ((pi, gi), vi) in pw.zip(gw).zip(vw) {
            *vi = momentum * *vi - lr * (gi + wd * *pi);
            *pi += *vi;
        }
    }
    Ok(())
}
