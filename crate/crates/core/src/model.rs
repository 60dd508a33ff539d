//! Feed-forward classifier with analytic backpropagation.
//!
//! Hidden layers apply `max(0, x)` after the affine map; the last layer emits
//! raw logits of width `C + C_d`. Weights are row-major `(out, in)`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::head::HeadConfig;
use crate::numerics::{affine_unchecked, argmax, check_finite, Matrix};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative; the subgradient at 0 is taken as 0.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Parameters of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Intermediates of one forward pass, consumed by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`inputs[0]` is the sample itself).
    inputs: Vec<Vec<f64>>,
    /// Affine output of each layer, before the activation.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Gradient with respect to every parameter (same shapes as [`MlpParams`])
/// plus the gradient with respect to the input sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            input: vec![0.0; params.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
        self.input.iter_mut().for_each(|v| *v *= s);
    }

    /// Parameter gradients flattened in checkpoint order (input gradient excluded).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Parameter gradients of one layer, weights then bias.
    pub fn layer_values(&self, l: usize) -> impl Iterator<Item = f64> + '_ {
        let layer = &self.layers[l];
        layer
            .weight
            .as_slice()
            .iter()
            .chain(&layer.bias)
            .copied()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(shape_err("layer bias", l.out_dim(), l.bias.len()));
            }
            check_finite(l.weight.as_slice(), "layer weight")?;
            check_finite(&l.bias, "layer bias")?;
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(shape_err(
                    "consecutive layer widths",
                    layers[i - 1].out_dim(),
                    l.in_dim(),
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    /// All-zero network with the given widths `[input, hidden..., output]`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be positive with at least input and output: {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Self::new(layers, Activation::Relu)
    }

    /// Glorot-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`), zero biases.
    ///
    /// Weights are drawn as `a * u` with `u ~ U[-1, 1]`. Real-class output rows
    /// come from the same stream as the hidden layers and dummy rows from a
    /// separate one, so for a fixed seed the ERM and DuRM networks share
    /// every hidden weight and the direction of every real-class row.
    pub fn init(input_dim: usize, hidden: &[usize], head: &HeadConfig, seed: u64) -> Result<Self> {
        head.validate()?;
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(head.width());
        let mut params = Self::zeros(&widths)?;

        let mut rng = stream(seed, Stream::Init);
        let mut dummy_rng = stream(seed, Stream::DummyInit);
        let last = params.layers.len() - 1;
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let (out_dim, in_dim) = layer.weight.shape();
            let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
            for r in 0..out_dim {
                let source = if i == last && r >= head.num_classes {
                    &mut dummy_rng
                } else {
                    &mut rng
                };
                for v in layer.weight.row_mut(r) {
                    *v = a * source.gen_range(-1.0..=1.0);
                }
            }
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// All parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Overwrites all parameters from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err("flat parameter vector", self.num_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.weight.as_mut_slice() {
                *v = it.next().unwrap_or_default();
            }
            for v in &mut l.bias {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.assign_flat(flat)?;
        Ok(p)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(shape_err("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Logits and the trace needed by [`backward`](Self::backward).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine_unchecked(&layer.weight, &current, &layer.bias);
            let next = if i == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre_activations.push(z);
        }
        Ok((
            current,
            ForwardTrace {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Logits without keeping a trace.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine_unchecked(&layer.weight, &current, &layer.bias);
            if i != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            current = z;
        }
        Ok(current)
    }

    /// Backpropagates `dlogits` (the loss gradient at the logits).
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<Gradients> {
        self.check_trace(trace)?;
        if dlogits.len() != self.output_width() {
            return Err(shape_err("logit gradient", self.output_width(), dlogits.len()));
        }
        let mut layers: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let mut g = Layer::zeros(layer.out_dim(), layer.in_dim());
            for (r, &d) in delta.iter().enumerate() {
                for (gw, &xi) in g.weight.row_mut(r).iter_mut().zip(input) {
                    *gw = d * xi;
                }
            }
            g.bias.copy_from_slice(&delta);

            // W^T delta
            let mut back = vec![0.0; layer.in_dim()];
            for (r, &d) in delta.iter().enumerate() {
                for (b, &w) in back.iter_mut().zip(layer.weight.row(r)) {
                    *b += w * d;
                }
            }
            if l > 0 {
                for (b, &z) in back.iter_mut().zip(&trace.pre_activations[l - 1]) {
                    *b *= self.activation.derivative(z);
                }
                delta = back;
            } else {
                input_grad = back;
            }
            layers.push(g);
        }
        layers.reverse();
        Ok(Gradients {
            layers,
            input: input_grad,
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let n = self.layers.len();
        if trace.inputs.len() != n || trace.pre_activations.len() != n {
            return Err(shape_err("trace layer count", n, trace.inputs.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if trace.inputs[l].len() != layer.in_dim()
                || trace.pre_activations[l].len() != layer.out_dim()
            {
                return Err(shape_err(
                    "trace widths (stale trace?)",
                    format!("{}->{}", layer.in_dim(), layer.out_dim()),
                    format!(
                        "{}->{}",
                        trace.inputs[l].len(),
                        trace.pre_activations[l].len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Argmax over all `C + C_d` logits, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

/// On-disk checkpoint layout (JSON).
///
/// ```json
/// {
///   "format": "durm-mlp",
///   "version": 1,
///   "activation": "relu",
///   "head": {"num_classes": 3, "num_dummy": 2},
///   "layers": [{"rows": 32, "cols": 2, "weight": [...], "bias": [...]}, ...]
/// }
/// ```
///
/// `weight` is row-major `(rows, cols)`; layers are listed input to output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "durm-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_params(params: &MlpParams, head: Option<HeadConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            activation: params.activation,
            head,
            manifest_digest: None,
            layers: params
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    weight: l.weight.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} version {}",
                self.format, self.version
            )));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: Matrix::from_vec(l.rows, l.cols, l.weight.clone())?,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams::new(layers, self.activation)?;
        if let Some(head) = self.head {
            if head.width() != params.output_width() {
                return Err(Error::Checkpoint(format!(
                    "head width {} does not match output layer width {}",
                    head.width(),
                    params.output_width()
                )));
            }
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{affine, cross_entropy, grad_logits, softmax};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(widths: &[usize], seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::zeros(widths).unwrap();
        let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.assign_flat(&flat).unwrap();
        p
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = MlpParams::zeros(&[4, 8, 5]).unwrap();
        assert_eq!(p.logits(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_layer_is_affine() {
        let p = random_params(&[3, 4], 1);
        let x = [0.3, -1.2, 2.0];
        let l = &p.layers()[0];
        assert_eq!(p.logits(&x).unwrap(), affine(&l.weight, &x, &l.bias).unwrap());
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let p = random_params(&[3, 5, 4], 2);
        let x = [0.7, -0.4, 1.1];
        let (w1, b1) = (&p.layers()[0].weight, &p.layers()[0].bias);
        let (w2, b2) = (&p.layers()[1].weight, &p.layers()[1].bias);
        let mut hidden = [0.0; 5];
        for i in 0..5 {
            let mut s = 0.0;
            for j in 0..3 {
                s += w1.get(i, j) * x[j];
            }
            hidden[i] = (s + b1[i]).max(0.0);
        }
        let (logits, trace) = p.forward(&x).unwrap();
        assert_eq!(trace.logits(), logits.as_slice());
        for k in 0..4 {
            let mut s = 0.0;
            for i in 0..5 {
                s += w2.get(k, i) * hidden[i];
            }
            assert!((logits[k] - (s + b2[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = random_params(&[3, 6, 6, 3], 4);
        let x = [0.1, 0.2, 0.3];
        let a = p.logits(&x).unwrap();
        let b = p.forward(&x).unwrap().0;
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::zeros(&[3, 2]).unwrap();
        assert!(p.forward(&[1.0]).is_err());
        let (_, trace) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.backward(&trace, &[1.0]).is_err());
        let other = MlpParams::zeros(&[3, 4, 2]).unwrap();
        assert!(other.backward(&trace, &[1.0, 1.0]).is_err());
        assert!(MlpParams::zeros(&[3]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = random_params(&[3, 4, 2], 5);
        let (_, trace) = p.forward(&[1.0, -1.0, 0.5]).unwrap();
        let g = p.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let p = random_params(&[3, 2], 6);
        let x = [0.5, -2.0, 1.5];
        let d = [0.25, -0.75];
        let (_, trace) = p.forward(&x).unwrap();
        let g = p.backward(&trace, &d).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(g.layers[0].weight.get(r, c), d[r] * x[c]);
            }
            assert_eq!(g.layers[0].bias[r], d[r]);
        }
    }

    fn sample_loss(p: &MlpParams, x: &[f64], y: &[f64]) -> f64 {
        cross_entropy(&softmax(&p.logits(x).unwrap()).unwrap(), y).unwrap()
    }

    #[test]
    fn backward_matches_finite_differences_up_to_three_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for widths in [vec![4, 3], vec![4, 8, 3], vec![4, 16, 16, 3], vec![4, 32, 32, 32, 3]] {
            let p = random_params(&widths, 10 + widths.len() as u64);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; 3];
            y[rng.gen_range(0..3)] = 1.0;
            let (logits, trace) = p.forward(&x).unwrap();
            let d = grad_logits(&softmax(&logits).unwrap(), &y).unwrap();
            let g = p.backward(&trace, &d).unwrap().flatten();
            let base = p.flatten();
            let h = 1e-6;
            for i in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (sample_loss(&p.with_flat(&plus).unwrap(), &x, &y)
                    - sample_loss(&p.with_flat(&minus).unwrap(), &x, &y))
                    / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
                assert!(err < 1e-5, "widths {widths:?} param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn predict_uses_lowest_index_on_ties() {
        let mut p = MlpParams::zeros(&[1, 3]).unwrap();
        p.layers_mut()[0].bias = vec![3.0, 1.0, 2.0];
        assert_eq!(p.predict(&[0.0]).unwrap(), 0);
        let mut p = MlpParams::zeros(&[1, 2]).unwrap();
        p.layers_mut()[0].bias = vec![1.0, 1.0];
        assert_eq!(p.predict(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn init_shares_real_rows_between_erm_and_durm() {
        let erm = MlpParams::init(2, &[8], &HeadConfig::new(3, 0).unwrap(), 42).unwrap();
        let durm = MlpParams::init(2, &[8], &HeadConfig::new(3, 2).unwrap(), 42).unwrap();
        assert_eq!(erm.layers()[0], durm.layers()[0]);
        assert_eq!(durm.output_width(), 5);
        let a_erm = (6.0f64 / 11.0).sqrt();
        let a_durm = (6.0f64 / 13.0).sqrt();
        for r in 0..3 {
            for c in 0..8 {
                let u1 = erm.layers()[1].weight.get(r, c) / a_erm;
                let u2 = durm.layers()[1].weight.get(r, c) / a_durm;
                assert!((u1 - u2).abs() < 1e-12);
            }
        }
        for v in durm.layers()[1].weight.as_slice() {
            assert!(v.abs() <= a_durm);
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let p = MlpParams::init(3, &[7, 5], &HeadConfig::new(3, 2).unwrap(), 8).unwrap();
        let ck = Checkpoint::from_params(&p, Some(HeadConfig::new(3, 2).unwrap()));
        let text = ck.to_json();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_params().unwrap(), p);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn checkpoint_rejects_bad_layouts() {
        let p = MlpParams::zeros(&[2, 3]).unwrap();
        let mut ck = Checkpoint::from_params(&p, None);
        ck.version = 9;
        assert!(ck.to_params().is_err());
        let mut ck = Checkpoint::from_params(&p, Some(HeadConfig::new(2, 2).unwrap()));
        assert!(ck.to_params().is_err());
        ck.head = None;
        ck.layers[0].weight.pop();
        assert!(ck.to_params().is_err());
    }
}
