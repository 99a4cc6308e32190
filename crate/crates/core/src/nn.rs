//! Feedforward classifier: ReLU hidden layers, softmax head, and a tap on the
//! last hidden activation used as the sample embedding.
//!
//! Parameters flatten to a single [`ParamVector`] in layer-major order; within
//! a layer the weight matrix (`fan_in x fan_out`, row-major) comes first,
//! followed by the bias vector.

use std::ops::{Deref, DerefMut};

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

/// Flat parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ParamVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for ParamVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `fan_in x fan_out`
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn num_params(&self) -> usize {
        self.fan_in() * self.fan_out() + self.fan_out()
    }

    /// `input * W + b`
    fn affine(&self, input: &Matrix<T>) -> Matrix<T> {
        let (batch, fan_in) = input.shape();
        let fan_out = self.fan_out();
        let w = self.weights.data();
        let mut out = Matrix::zeros(batch, fan_out);
        for i in 0..batch {
            let x = input.row(i);
            let o = out.row_mut(i);
            o.copy_from_slice(&self.bias);
            for k in 0..fan_in {
                let a = x[k];
                if a == T::zero() {
                    continue;
                }
                let wk = &w[k * fan_out..(k + 1) * fan_out];
                for (oj, &wj) in o.iter_mut().zip(wk) {
                    *oj += a * wj;
                }
            }
        }
        out
    }
}

/// Everything a backward pass needs, plus the embedding tap.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    /// Pre-activation of every layer; the last entry is the logits.
    pub pre_activations: Vec<Matrix<T>>,
    /// ReLU outputs of the hidden layers.
    pub activations: Vec<Matrix<T>>,
    pub probs: Matrix<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.pre_activations.last().expect("network has at least one layer")
    }

    /// Input of the final layer. For a network without hidden layers this is
    /// the input itself.
    pub fn embedding(&self) -> &Matrix<T> {
        self.activations.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Vec<usize>,
    layers: Vec<Layer<T>>,
}

fn check_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::config(format!(
            "architecture needs at least an input and an output width, got {arch:?}"
        )));
    }
    if arch.contains(&0) {
        return Err(Error::config(format!("zero-width layer in {arch:?}")));
    }
    Ok(())
}

impl<T: Scalar> Network<T> {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(arch: &[usize], seed: u64) -> Result<Self> {
        check_arch(arch)?;
        let mut rng = rng::seeded(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weights: Matrix::new(fan_in, fan_out, data).expect("sized above"),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self {
            arch: arch.to_vec(),
            layers,
        })
    }

    pub fn zeros(arch: &[usize]) -> Result<Self> {
        check_arch(arch)?;
        let layers = arch
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![T::zero(); w[1]],
            })
            .collect();
        Ok(Self {
            arch: arch.to_vec(),
            layers,
        })
    }

    pub fn from_params(arch: &[usize], params: &[T]) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        net.set_params(params)?;
        Ok(net)
    }

    /// Builds a network from explicit layers, validating shape agreement.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("network needs at least one layer"))?;
        let mut arch = vec![first.fan_in()];
        for (j, layer) in layers.iter().enumerate() {
            if layer.fan_in() != *arch.last().unwrap() {
                return Err(Error::shape(format!(
                    "layer {j} fan_in {} does not match previous fan_out {}",
                    layer.fan_in(),
                    arch.last().unwrap()
                )));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::shape(format!(
                    "layer {j} bias has length {}, expected {}",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            arch.push(layer.fan_out());
        }
        check_arch(&arch)?;
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.arch.last().unwrap()
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch[self.arch.len() - 2]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> ParamVector<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        ParamVector(out)
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(format!(
                "parameter vector has length {}, network has {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.data().len();
            layer.weights.data_mut().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix<T>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(last);
        for (j, layer) in self.layers.iter().enumerate() {
            let input = if j == 0 { batch } else { &activations[j - 1] };
            let z = layer.affine(input);
            if j < last {
                activations.push(z.map(|v| v.max(T::zero())));
            }
            pre_activations.push(z);
        }
        let probs = softmax_rows(&pre_activations[last]);
        Ok(ForwardTrace {
            input: batch.clone(),
            pre_activations,
            activations,
            probs,
        })
    }

    /// Softmax outputs only.
    pub fn predict_proba(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(batch)?.probs)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the logits. Batch averaging must already be
    /// folded into `grad_logits`.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_logits: &Matrix<T>) -> Result<ParamVector<T>> {
        let batch = trace.batch_size();
        if trace.pre_activations.len() != self.layers.len()
            || trace.input.cols() != self.input_dim()
            || trace
                .pre_activations
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.cols() != l.fan_out() || z.rows() != batch)
        {
            return Err(Error::shape("forward trace does not belong to this network"));
        }
        if grad_logits.shape() != (batch, self.num_classes()) {
            return Err(Error::shape(format!(
                "logit gradient is {:?}, expected {:?}",
                grad_logits.shape(),
                (batch, self.num_classes())
            )));
        }

        let mut grads: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.clone();
        for j in (0..self.layers.len()).rev() {
            let layer = &self.layers[j];
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let input = if j == 0 {
                &trace.input
            } else {
                &trace.activations[j - 1]
            };

            let mut g = vec![T::zero(); fan_in * fan_out + fan_out];
            let (gw, gb) = g.split_at_mut(fan_in * fan_out);
            for i in 0..batch {
                let x = input.row(i);
                let d = delta.row(i);
                for k in 0..fan_in {
                    let a = x[k];
                    if a == T::zero() {
                        continue;
                    }
                    for (gkj, &dj) in gw[k * fan_out..(k + 1) * fan_out].iter_mut().zip(d) {
                        *gkj += a * dj;
                    }
                }
                for (b, &dj) in gb.iter_mut().zip(d) {
                    *b += dj;
                }
            }
            grads.push(g);

            if j > 0 {
                let w = layer.weights.data();
                let pre = &trace.pre_activations[j - 1];
                let mut next = Matrix::zeros(batch, fan_in);
                for i in 0..batch {
                    let d = delta.row(i);
                    let z = pre.row(i);
                    let out = next.row_mut(i);
                    for k in 0..fan_in {
                        if z[k] <= T::zero() {
                            continue;
                        }
                        let wk = &w[k * fan_out..(k + 1) * fan_out];
                        out[k] = wk.iter().zip(d).map(|(&a, &b)| a * b).sum();
                    }
                }
                delta = next;
            }
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for g in grads.into_iter().rev() {
            flat.extend(g);
        }
        Ok(ParamVector(flat))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parameter_count_matches_arch() {
        let net = Network::<f64>::init(&[2, 4, 3], 7).unwrap();
        assert_eq!(net.num_params(), 27);
        assert_eq!(net.params().len(), 27);
    }

    #[test]
    fn degenerate_arch_is_rejected() {
        assert!(matches!(Network::<f64>::init(&[], 0), Err(Error::Config(_))));
        assert!(matches!(Network::<f64>::init(&[3], 0), Err(Error::Config(_))));
        assert!(matches!(Network::<f64>::init(&[3, 0, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Network::<f64>::init(&[5, 8, 3], 11).unwrap();
        let b = Network::<f64>::init(&[5, 8, 3], 11).unwrap();
        let c = Network::<f64>::init(&[5, 8, 3], 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn he_init_standard_deviation() {
        let net = Network::<f64>::init(&[10, 128, 64, 5], 0).unwrap();
        let w = net.layers()[0].weights.data();
        assert_eq!(w.len(), 1280);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = (2.0f64 / 10.0).sqrt();
        assert!((var.sqrt() - target).abs() < 0.2 * target, "std {}", var.sqrt());
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_network_outputs_uniform() {
        let net = Network::<f64>::zeros(&[3, 5, 4]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let probs = net.predict_proba(&x).unwrap();
        assert!(probs.data().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn hand_computed_logits() {
        // 2 -> 2 (ReLU) -> 2
        let l1 = Layer {
            weights: Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5]]).unwrap(),
            bias: vec![0.1, -0.2],
        };
        let l2 = Layer {
            weights: Matrix::from_rows(&[[0.3, -0.7], [1.5, 0.25]]).unwrap(),
            bias: vec![0.05, 0.0],
        };
        let net: Network<f64> = Network::from_layers(vec![l1, l2]).unwrap();
        let x = Matrix::from_rows(&[[0.5, 1.0]]).unwrap();
        let trace = net.forward(&x).unwrap();
        // hidden pre: [0.5 + 2 + 0.1, -0.5 + 0.5 - 0.2] = [2.6, -0.2] -> relu [2.6, 0]
        assert_eq!(trace.embedding().row(0), &[2.6, 0.0]);
        let logits = trace.logits().row(0);
        assert_relative_eq!(logits[0], 2.6 * 0.3 + 0.05, epsilon = 1e-12);
        assert_relative_eq!(logits[1], 2.6 * -0.7, epsilon = 1e-12);
        let p0 = 1.0 / (1.0 + (logits[1] - logits[0] as f64).exp());
        assert_relative_eq!(trace.probs.get(0, 0), p0, epsilon = 1e-12);
    }

    #[test]
    fn probabilities_are_normalized_and_stable() {
        let net = Network::<f64>::init(&[4, 16, 6], 3).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3, 4.0], [-1.0, 0.0, 2.0, 0.5]]).unwrap();
        for row in net.predict_proba(&x).unwrap().row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
        let mut big = Matrix::<f64>::from_rows(&[[1e4, -1e4, 0.0, 5e3]]).unwrap();
        softmax_in_place(big.row_mut(0));
        assert!(big.data().iter().all(|p| p.is_finite()));
        assert_relative_eq!(big.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::<f64>::init(&[3, 4, 2], 0).unwrap();
        let x = Matrix::<f64>::zeros(2, 4);
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_is_linear_in_logit_gradient() {
        let net = Network::<f64>::init(&[3, 6, 4], 5).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.2, 0.9], [1.2, 0.4, -0.6]]).unwrap();
        let trace = net.forward(&x).unwrap();
        let g = Matrix::from_rows(&[[0.1, -0.3, 0.05, 0.15], [-0.2, 0.1, 0.0, 0.1]]).unwrap();
        let zero = net.backward(&trace, &Matrix::zeros(2, 4)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let once = net.backward(&trace, &g).unwrap();
        let twice = net.backward(&trace, &g.map(|v| 2.0 * v)).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let net = Network::<f64>::init(&[3, 6, 4], 5).unwrap();
        let other = Network::<f64>::init(&[3, 5, 4], 5).unwrap();
        let trace = other.forward(&Matrix::zeros(1, 3)).unwrap();
        assert!(matches!(
            net.backward(&trace, &Matrix::zeros(1, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn param_roundtrip_and_f32() {
        let net = Network::<f32>::init(&[2, 3, 2], 1).unwrap();
        let rebuilt = Network::<f32>::from_params(net.arch(), &net.params()).unwrap();
        assert_eq!(net, rebuilt);
    }

    #[test]
    fn argmax_prefers_smallest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
    }
}
