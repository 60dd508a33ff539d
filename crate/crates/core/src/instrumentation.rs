//! Gradient statistics, model distance and loss-landscape probes.
//!
//! Sign convention: traces store the loss gradient at the logits,
//! `sum_i (p_k - y_k)`. The class gradient `g_k` of the push/pull analysis is
//! its negation, so `-g_k = push + pull` equals the stored sum.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::head::{pad_label, HeadConfig};
use crate::model::{Gradients, MlpParams};
use crate::numerics::{cross_entropy, dot, grad_logits, norm, softmax};
use crate::rng::{stream, Stream};

/// Default number of power iterations for the sharpness probe.
pub const DEFAULT_POWER_ITERATIONS: usize = 50;
/// Default finite-difference step for Hessian-vector products.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Flatness is `1 / max(epsilon_hat, TAU_FLOOR)`, so it never exceeds `1e12`.
pub const TAU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushPull {
    /// `sum_{i: y_i != k} p_k^{(i)}`
    pub push: f64,
    /// `sum_{j: y_j == k} (p_k^{(j)} - 1)`
    pub pull: f64,
}

impl PushPull {
    /// `push + pull`, the summed loss gradient at logit `k`.
    pub fn total(&self) -> f64 {
        self.push + self.pull
    }
}

/// Splits the summed logit gradient of class `k` into push and pull terms.
///
/// Dummy classes (`k >= C`) never match a label, so they only get a push term.
pub fn decompose_push_pull(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<PushPull> {
    if probs.len() != labels.len() {
        return Err(shape_err("push/pull samples", probs.len(), labels.len()));
    }
    let mut out = PushPull {
        push: 0.0,
        pull: 0.0,
    };
    for (p, &y) in probs.iter().zip(labels) {
        if k >= p.len() {
            return Err(shape_err("push/pull class index", p.len(), k + 1));
        }
        if y == k {
            out.pull += p[k] - 1.0;
        } else {
            out.push += p[k];
        }
    }
    Ok(out)
}

/// Logit-gradient statistics of one epoch, one entry per output class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochGradients {
    pub epoch: usize,
    pub samples: usize,
    /// Summed per-sample loss gradient `sum_i (p_k - y_k)`.
    pub grad_sum: Vec<f64>,
    /// Unbiased variance (divisor `N - 1`) of the per-sample gradients.
    pub variance: Vec<f64>,
}

/// Everything recorded about gradients during a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientTrace {
    pub num_classes: usize,
    pub num_dummy: usize,
    pub epochs: Vec<EpochGradients>,
    /// Per epoch, mean over samples of each dummy class's gradient fraction.
    pub dummy_fraction: Vec<Vec<f64>>,
    /// Per epoch, samples whose dummy mass underflowed to zero.
    pub fraction_underflows: Vec<usize>,
    /// Per epoch and layer, the mean over that layer's parameters of the
    /// within-epoch variance of per-sample parameter gradients.
    pub layer_variance: Vec<Vec<f64>>,
    /// Norm of the mini-batch loss gradient at every optimizer step.
    pub step_grad_norms: Vec<f64>,
    /// Optimizer steps completed at the end of each epoch.
    pub steps_per_epoch: Vec<usize>,
}

impl GradientTrace {
    pub fn new(head: &HeadConfig) -> Self {
        Self {
            num_classes: head.num_classes,
            num_dummy: head.num_dummy,
            ..Default::default()
        }
    }

    pub fn width(&self) -> usize {
        self.num_classes + self.num_dummy
    }

    /// Stores the per-class sum and within-epoch variance for `epoch`.
    ///
    /// Epochs must be recorded in order, each exactly once.
    pub fn record_epoch_gradients(&mut self, epoch: usize, per_sample: &[Vec<f64>]) -> Result<()> {
        if epoch < self.epochs.len() {
            return Err(Error::EpochRecorded(epoch));
        }
        if epoch > self.epochs.len() {
            return Err(Error::InvalidConfig(format!(
                "epoch {epoch} recorded before epoch {}",
                self.epochs.len()
            )));
        }
        if per_sample.is_empty() {
            return Err(Error::Empty("per-sample gradients"));
        }
        let width = self.width();
        if let Some(bad) = per_sample.iter().find(|g| g.len() != width) {
            return Err(shape_err("per-sample logit gradient", width, bad.len()));
        }
        let n = per_sample.len();
        let mut grad_sum = vec![0.0; width];
        for g in per_sample {
            for (s, v) in grad_sum.iter_mut().zip(g) {
                *s += v;
            }
        }
        let variance = if n < 2 {
            vec![0.0; width]
        } else {
            (0..width)
                .map(|k| {
                    let mean = grad_sum[k] / n as f64;
                    let ss: f64 = per_sample.iter().map(|g| (g[k] - mean).powi(2)).sum();
                    ss / (n - 1) as f64
                })
                .collect()
        };
        self.epochs.push(EpochGradients {
            epoch,
            samples: n,
            grad_sum,
            variance,
        });
        Ok(())
    }

    /// Mean over epochs of the within-epoch variance for class `k`.
    pub fn mean_within_epoch_variance(&self, k: usize) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.variance[k]).sum::<f64>() / self.epochs.len() as f64
    }

    /// Unbiased variance, across epochs, of the per-epoch mean gradient of class `k`.
    pub fn across_epoch_variance(&self, k: usize) -> f64 {
        let means: Vec<f64> = self
            .epochs
            .iter()
            .map(|e| e.grad_sum[k] / e.samples as f64)
            .collect();
        sample_variance(&means)
    }

    /// Mean of each dummy class's fraction over the last `window` epochs.
    pub fn final_dummy_fraction(&self, window: usize) -> Vec<f64> {
        let n = self.dummy_fraction.len();
        let tail = &self.dummy_fraction[n.saturating_sub(window)..];
        let mut out = vec![0.0; self.num_dummy];
        for row in tail {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v / tail.len() as f64;
            }
        }
        out
    }

    /// `cumulative[e]` is the sum of step gradient norms through epoch `e`;
    /// `cumulative[0] = 0` stands for initialization.
    pub fn cumulative_grad_norm(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps_per_epoch.len() + 1);
        out.push(0.0);
        let mut acc = 0.0;
        let mut start = 0;
        for &end in &self.steps_per_epoch {
            acc += self.step_grad_norms[start..end].iter().sum::<f64>();
            out.push(acc);
            start = end;
        }
        out
    }
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Streaming per-parameter variance (Welford) for the per-layer report.
#[derive(Debug, Clone)]
pub(crate) struct LayerVarianceAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    layer_sizes: Vec<usize>,
}

impl LayerVarianceAccumulator {
    pub(crate) fn new(params: &MlpParams) -> Self {
        let layer_sizes: Vec<usize> = params
            .layers()
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .collect();
        let total = layer_sizes.iter().sum();
        Self {
            count: 0,
            mean: vec![0.0; total],
            m2: vec![0.0; total],
            layer_sizes,
        }
    }

    pub(crate) fn push(&mut self, grads: &Gradients) {
        self.count += 1;
        let n = self.count as f64;
        let mut i = 0;
        for l in 0..grads.layers.len() {
            for v in grads.layer_values(l) {
                let delta = v - self.mean[i];
                self.mean[i] += delta / n;
                self.m2[i] += delta * (v - self.mean[i]);
                i += 1;
            }
        }
    }

    pub(crate) fn finish(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layer_sizes.len());
        let mut start = 0;
        for &size in &self.layer_sizes {
            let m2 = &self.m2[start..start + size];
            let v = if self.count < 2 {
                0.0
            } else {
                m2.iter().sum::<f64>() / ((self.count - 1) * size) as f64
            };
            out.push(v);
            start += size;
        }
        self.count = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
        out
    }
}

/// `||w_t - w_0||^2` over every parameter.
pub fn model_distance(params_t: &MlpParams, params_0: &MlpParams) -> Result<f64> {
    let a = params_t.flatten();
    let b = params_0.flatten();
    if a.len() != b.len() {
        return Err(shape_err("model distance", b.len(), a.len()));
    }
    for (la, lb) in params_t.layers().iter().zip(params_0.layers()) {
        if la.weight.shape() != lb.weight.shape() {
            return Err(shape_err(
                "model distance layer",
                format!("{:?}", lb.weight.shape()),
                format!("{:?}", la.weight.shape()),
            ));
        }
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// A differentiable scalar loss over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, w: &[f64]) -> Result<f64>;
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>>;
}

/// `0.5 * w^T A w + c * sum(w)` with symmetric `A` (row-major).
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub n: usize,
    pub a: Vec<f64>,
    /// Scales the whole loss.
    pub scale: f64,
}

impl Quadratic {
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(shape_err("quadratic matrix", n * n, a.len()));
        }
        Ok(Self { n, a, scale: 1.0 })
    }

    pub fn diagonal(curvatures: &[f64]) -> Self {
        let n = curvatures.len();
        let mut a = vec![0.0; n * n];
        for (i, &c) in curvatures.iter().enumerate() {
            a[i * n + i] = c;
        }
        Self { n, a, scale: 1.0 }
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(&self.a[i * self.n..(i + 1) * self.n], w))
            .collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        Ok(self.scale * 0.5 * dot(w, &self.apply(w)))
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(w).into_iter().map(|v| v * self.scale).collect())
    }
}

/// Mean padded-label cross-entropy of a network over a dataset, as a
/// function of the flattened parameters.
pub struct MlpObjective<'a> {
    template: MlpParams,
    data: &'a Dataset,
    head: HeadConfig,
    targets: Vec<Vec<f64>>,
}

impl<'a> MlpObjective<'a> {
    pub fn new(template: &MlpParams, data: &'a Dataset, head: HeadConfig) -> Result<Self> {
        if template.output_width() != head.width() {
            return Err(shape_err("head width", head.width(), template.output_width()));
        }
        if template.input_dim() != data.dim() {
            return Err(shape_err("dataset dimension", template.input_dim(), data.dim()));
        }
        let targets = data
            .labels()
            .iter()
            .map(|&y| pad_label(y, &head))
            .collect::<Result<_>>()?;
        Ok(Self {
            template: template.clone(),
            data,
            head,
            targets,
        })
    }

    pub fn head(&self) -> HeadConfig {
        self.head
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        let params = self.template.with_flat(w)?;
        let mut total = 0.0;
        for (i, y) in self.targets.iter().enumerate() {
            let p = softmax(&params.logits(self.data.sample(i))?)?;
            total += cross_entropy(&p, y)?;
        }
        Ok(total / self.data.len() as f64)
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let params = self.template.with_flat(w)?;
        let mut acc = Gradients::zeros_like(&params);
        for (i, y) in self.targets.iter().enumerate() {
            let (logits, trace) = params.forward(self.data.sample(i))?;
            let d = grad_logits(&softmax(&logits)?, y)?;
            acc.add_assign(&params.backward(&trace, &d)?);
        }
        acc.scale(1.0 / self.data.len() as f64);
        Ok(acc.flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianEstimate {
    pub rho: f64,
    /// Rayleigh quotient after every iteration.
    pub history: Vec<f64>,
    /// False when the last two estimates differ by more than 1%.
    pub converged: bool,
}

/// Top Hessian eigenvalue by power iteration on finite-difference
/// Hessian-vector products `(grad(w + h s) - grad(w - h s)) / 2h`.
pub fn estimate_top_hessian_eigenvalue(
    objective: &dyn Objective,
    w: &[f64],
    iterations: usize,
    fd_step: f64,
    seed: u64,
) -> Result<HessianEstimate> {
    let mut rng = stream(seed, Stream::Probe);
    let init: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    power_iteration(objective, w, &init, iterations, fd_step)
}

/// Power iteration from an explicit starting direction.
pub fn power_iteration(
    objective: &dyn Objective,
    w: &[f64],
    init: &[f64],
    iterations: usize,
    fd_step: f64,
) -> Result<HessianEstimate> {
    if iterations < 10 {
        return Err(Error::InvalidConfig(format!(
            "power iteration needs at least 10 iterations, got {iterations}"
        )));
    }
    if fd_step.is_nan() || fd_step <= 0.0 {
        return Err(Error::InvalidConfig(format!("fd_step must be positive, got {fd_step}")));
    }
    if w.len() != objective.dim() || init.len() != w.len() {
        return Err(shape_err("power iteration vectors", objective.dim(), w.len().max(init.len())));
    }
    let n0 = norm(init);
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidConfig("initial direction must be nonzero".into()));
    }
    let mut s: Vec<f64> = init.iter().map(|v| v / n0).collect();
    let mut history = Vec::with_capacity(iterations);
    let mut plus = vec![0.0; w.len()];
    let mut minus = vec![0.0; w.len()];
    for _ in 0..iterations {
        for i in 0..w.len() {
            plus[i] = w[i] + fd_step * s[i];
            minus[i] = w[i] - fd_step * s[i];
        }
        let gp = objective.gradient(&plus)?;
        let gm = objective.gradient(&minus)?;
        let hv: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * fd_step))
            .collect();
        if let Some(index) = hv.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Hessian-vector product",
                index,
            });
        }
        history.push(dot(&s, &hv));
        let hn = norm(&hv);
        if hn == 0.0 {
            break;
        }
        s = hv.into_iter().map(|v| v / hn).collect();
    }
    let rho = *history.last().unwrap_or(&0.0);
    let converged = match history.len() {
        0 | 1 => true,
        n => {
            let prev = history[n - 2];
            (rho - prev).abs() <= 0.01 * rho.abs().max(prev.abs()).max(f64::MIN_POSITIVE)
        }
    };
    Ok(HessianEstimate {
        rho,
        history,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessEstimate {
    pub delta: f64,
    pub trials: usize,
    /// Largest loss increase over random perturbations of norm `delta`.
    pub epsilon_hat: f64,
    /// `1 / max(epsilon_hat, 1e-12)`.
    pub tau: f64,
}

/// Draws `trials` isotropic directions rescaled to norm `delta` and reports
/// the largest loss increase (clipped below at zero).
///
/// The directions depend only on `seed` and the parameter count, so probes at
/// different radii use the same directions.
pub fn estimate_flatness(
    objective: &dyn Objective,
    w: &[f64],
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<FlatnessEstimate> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("flatness probe needs at least one trial".into()));
    }
    if w.len() != objective.dim() {
        return Err(shape_err("flatness parameters", objective.dim(), w.len()));
    }
    let base = objective.loss(w)?;
    let mut rng = stream(seed, Stream::Probe);
    let mut eps: f64 = 0.0;
    let mut shifted = vec![0.0; w.len()];
    for _ in 0..trials {
        let v: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
        let scale = delta / norm(&v);
        for i in 0..w.len() {
            shifted[i] = w[i] + scale * v[i];
        }
        let l = objective.loss(&shifted)?;
        if !l.is_finite() {
            return Err(Error::NonFinite {
                what: "perturbed loss",
                index: 0,
            });
        }
        eps = eps.max(l - base);
    }
    Ok(FlatnessEstimate {
        delta,
        trials,
        epsilon_hat: eps,
        tau: 1.0 / eps.max(TAU_FLOOR),
    })
}

/// Training-trajectory and landscape summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    /// `||w_e - w_0||^2`, index 0 is initialization.
    pub model_distance: Vec<f64>,
    pub cumulative_grad_norm: Vec<f64>,
    pub rho: f64,
    pub rho_converged: bool,
    pub epsilon_hat: f64,
    pub tau: f64,
    pub delta: f64,
}
