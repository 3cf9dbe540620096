//! Fully connected networks with manual backpropagation.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`, so a layer computes
//! `y = act(x W^T + b)` for a batch `x` of shape `(batch, in_dim)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::shape(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self::new(in_dim, out_dim, weights, bias, activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &Tensor) -> Vec<f64> {
        let batch = x.rows();
        let mut z = Vec::with_capacity(batch * self.out_dim);
        for i in 0..batch {
            let xi = x.row(i);
            for o in 0..self.out_dim {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let dot: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum();
                z.push(dot + self.bias[o]);
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of a [`DenseNet`], in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient layer count mismatch"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len() {
                return Err(Error::shape("gradient layer size mismatch"));
            }
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, batch_size: usize) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            learning_rate,
            batch_size,
        })
    }
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Tensor>,
    /// Pre-activation values per layer, row-major `(batch, out_dim)`.
    pre: Vec<Vec<f64>>,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a network with layer widths `dims` (input first). Hidden layers use
    /// `hidden`, the last layer uses `last`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, last: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape("need at least input and output widths"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Dense::init(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in manifest order: for each layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        x.ensure_matrix("forward")?;
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "forward: input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&current);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let next = Tensor::matrix(current.rows(), layer.out_dim, a)?;
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: current,
        })
    }

    /// Parameter gradients and input gradient for upstream gradient `upstream`
    /// on the network output at input `x`.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<(NetGrads, Tensor)> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<(NetGrads, Tensor)> {
        if upstream.shape() != trace.output.shape() {
            return Err(Error::shape(format!(
                "backward: upstream shape {:?} does not match output {:?}",
                upstream.shape(),
                trace.output.shape()
            )));
        }
        let batch = upstream.rows();
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.values().to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[idx];
            for (d, &zv) in delta.iter_mut().zip(z) {
                *d *= layer.activation.derivative(zv);
            }
            let input = &trace.inputs[idx];
            let mut gw = vec![0.0; layer.weights.len()];
            let mut gb = vec![0.0; layer.out_dim];
            let mut gin = vec![0.0; batch * layer.in_dim];
            for i in 0..batch {
                let xi = input.row(i);
                let di = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                let gi = &mut gin[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (o, &d) in di.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = o * layer.in_dim;
                    let w = &layer.weights[row..row + layer.in_dim];
                    for k in 0..layer.in_dim {
                        gw[row + k] += d * xi[k];
                        gi[k] += d * w[k];
                    }
                }
            }
            grads.push(LayerGrads { weights: gw, bias: gb });
            delta = gin;
        }
        grads.reverse();
        let input_grad = Tensor::matrix(batch, self.input_dim(), delta)?;
        let grads = NetGrads { layers: grads };
        if !grads.is_finite() {
            return Err(Error::Degenerate("non-finite gradient".into()));
        }
        Ok((grads, input_grad))
    }

    /// In-place `w -= lr * g`.
    pub fn apply_gradients(&mut self, grads: &NetGrads, learning_rate: f64) -> Result<()> {
        self.check_grads(grads)?;
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= learning_rate * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(w, d)| *w -= learning_rate * d);
        }
        Ok(())
    }

    fn check_grads(&self, grads: &NetGrads) -> Result<()> {
        let ok = grads.layers.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(l, g)| l.weights.len() == g.weights.len() && l.bias.len() == g.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("gradients do not match network"))
        }
    }
}

/// One SGD step, returning the updated network.
pub fn sgd_step(net: &DenseNet, grads: &NetGrads, cfg: &SgdConfig) -> Result<DenseNet> {
    let mut next = net.clone();
    next.apply_gradients(grads, cfg.learning_rate)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn identity_net(activation: Activation) -> DenseNet {
        DenseNet::new(vec![Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], activation).unwrap()]).unwrap()
    }

    #[test]
    fn identity_forward() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(identity_net(Activation::Identity).forward(&x).unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        assert_eq!(identity_net(Activation::Relu).forward(&x).unwrap().values(), &[0.0, 3.0]);
    }

    #[test]
    fn two_layer_forward_matches_hand_chain() {
        let mut rng = rng_for(11, &[0]);
        let net = DenseNet::init(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = vec![0.5, -1.0, 2.0];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let hidden: Vec<f64> = (0..4)
            .map(|o| {
                let mut s = l0.bias()[o];
                for k in 0..3 {
                    s += l0.weights()[o * 3 + k] * x[k];
                }
                s.max(0.0)
            })
            .collect();
        let expected: Vec<f64> = (0..2)
            .map(|o| {
                let mut s = l1.bias()[o];
                for k in 0..4 {
                    s += l1.weights()[o * 4 + k] * hidden[k];
                }
                s
            })
            .collect();
        let out = net.forward(&Tensor::from_rows(&[x]).unwrap()).unwrap();
        for (a, b) in out.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(identity_net(Activation::Identity).forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = rng_for(3, &[1]);
        let net = DenseNet::init(&[5, 8, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = rng_for(5, &[0]);
        let net = DenseNet::init(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let (g, gin) = net.backward(&x, &Tensor::zeros(2, 2)).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(gin.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_net_passes_gradient_through() {
        let net = identity_net(Activation::Identity);
        let x = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let g = Tensor::from_rows(&[vec![0.25, -4.0]]).unwrap();
        let (_, gin) = net.backward(&x, &g).unwrap();
        assert_eq!(gin.values(), g.values());
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let net = identity_net(Activation::Identity);
        let x = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        assert!(net.backward(&x, &Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let net = DenseNet::new(vec![Dense::new(1, 1, vec![1.0], vec![0.0], Activation::Identity).unwrap()]).unwrap();
        let grads = NetGrads {
            layers: vec![LayerGrads {
                weights: vec![2.0],
                bias: vec![0.0],
            }],
        };
        let cfg = SgdConfig::new(0.01, 1).unwrap();
        let next = sgd_step(&net, &grads, &cfg).unwrap();
        assert!((next.layers()[0].weights()[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grads_and_zero_lr_are_identity() {
        let mut rng = rng_for(9, &[0]);
        let net = DenseNet::init(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let zero = NetGrads::zeros_like(&net);
        let cfg = SgdConfig::new(0.5, 4).unwrap();
        assert_eq!(sgd_step(&net, &zero, &cfg).unwrap(), net);
        let mut other = net.clone();
        let mut g = NetGrads::zeros_like(&net);
        g.layers[0].weights[0] = 3.0;
        other.apply_gradients(&g, 0.0).unwrap();
        assert_eq!(other, net);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // f(w, b) = 0.5 * ((w - 3)^2 + (b + 1)^2), minimizer (3, -1).
        let mut net = DenseNet::new(vec![Dense::new(1, 1, vec![0.0], vec![0.0], Activation::Identity).unwrap()]).unwrap();
        for _ in 0..2000 {
            let w = net.layers()[0].weights()[0];
            let b = net.layers()[0].bias()[0];
            let grads = NetGrads {
                layers: vec![LayerGrads {
                    weights: vec![w - 3.0],
                    bias: vec![b + 1.0],
                }],
            };
            net.apply_gradients(&grads, 0.1).unwrap();
        }
        assert!((net.layers()[0].weights()[0] - 3.0).abs() < 1e-6);
        assert!((net.layers()[0].bias()[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn sgd_config_validation() {
        assert!(SgdConfig::new(0.0, 1).is_err());
        assert!(SgdConfig::new(0.1, 0).is_err());
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = rng_for(2, &[0]);
        let net = DenseNet::init(&[4, 6, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut other = DenseNet::init(&[4, 6, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert_eq!(net.param_count(), 4 * 6 + 6 + 6 * 3 + 3);
        assert!(DenseNet::new(vec![
            Dense::init(2, 3, Activation::Relu, &mut rng).unwrap(),
            Dense::init(4, 1, Activation::Relu, &mut rng).unwrap()
        ])
        .is_err());
    }
}
