use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{
    Activation, ActivationLayer, BatchNorm, Conv2d, ConvTranspose2d, Dense, Dropout, Layer, Mode, Param,
};
use super::softmax::overparam_softmax_rows;
use super::spec::{ArchitectureSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A sequential network built from an [`ArchitectureSpec`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchitectureSpec,
    layers: Vec<Layer<T>>,
    /// For each spec layer, the index one past its last runtime layer.
    spec_ends: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut spec_ends = Vec::with_capacity(spec.layers.len());
        let mut cur = spec.input_shape.clone();
        for (ls, out) in spec.layers.iter().zip(&shapes) {
            let push_tail = |layers: &mut Vec<Layer<T>>, bn: bool, act: Activation, features: usize| {
                if bn {
                    layers.push(Layer::BatchNorm(BatchNorm::new(features)));
                }
                if act != Activation::None {
                    layers.push(Layer::Activation(ActivationLayer::new(act)));
                }
            };
            match ls {
                LayerSpec::Dense { units, batch_norm, activation } => {
                    let inputs = cur.iter().product();
                    layers.push(Layer::Dense(Dense::new(inputs, *units, &mut rng)));
                    push_tail(&mut layers, *batch_norm, *activation, *units);
                }
                LayerSpec::Conv { kernel, channels, stride, batch_norm, activation } => {
                    layers.push(Layer::Conv(Conv2d::new(cur[0], *channels, *kernel, *stride, &mut rng)));
                    push_tail(&mut layers, *batch_norm, *activation, *channels);
                }
                LayerSpec::TransposeConv { kernel, channels, stride, batch_norm, activation } => {
                    layers.push(Layer::ConvTranspose(ConvTranspose2d::new(cur[0], *channels, *kernel, *stride, &mut rng)));
                    push_tail(&mut layers, *batch_norm, *activation, *channels);
                }
                LayerSpec::Dropout { rate } => layers.push(Layer::Dropout(Dropout::new(*rate))),
                LayerSpec::MaxPool { size } => layers.push(Layer::MaxPool { size: *size, argmax: None }),
                LayerSpec::GlobalMeanPool => layers.push(Layer::GlobalMeanPool { hw: None }),
                LayerSpec::Reshape { shape } => layers.push(Layer::Reshape { shape: shape.clone(), input_shape: None }),
            }
            spec_ends.push(layers.len());
            cur = out.clone();
        }
        Ok(Self { spec: spec.clone(), layers, spec_ends, rng })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    /// Runs the network on `x` (`[batch, ...input_shape]`). When `tap` names a
    /// spec layer, that layer's output is also returned, flattened per row.
    pub fn forward(&mut self, x: ArrayD<T>, mode: Mode, tap: Option<usize>) -> Result<(ArrayD<T>, Option<Array2<T>>)> {
        let tap_end = tap.map(|t| self.spec_ends[t]);
        let mut cur = x;
        let mut tapped = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(cur, mode, &mut self.rng)?;
            if tap_end == Some(i + 1) {
                let n = cur.shape()[0];
                let flat = cur.iter().copied().collect::<Vec<T>>();
                tapped = Some(Array2::from_shape_vec((n, flat.len() / n.max(1)), flat).expect("row-major"));
            }
        }
        Ok((cur, tapped))
    }

    /// Backpropagates `grad` from the output and, optionally, an extra
    /// gradient injected at a tapped spec layer. Accumulates parameter
    /// gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: ArrayD<T>, tap: Option<(usize, Array2<T>)>) -> ArrayD<T> {
        let tap = tap.map(|(t, g)| (self.spec_ends[t], g));
        let mut cur = grad;
        for i in (0..self.layers.len()).rev() {
            if let Some((end, g)) = &tap {
                if *end == i + 1 {
                    let shape = cur.shape().to_vec();
                    let extra = g.clone().into_shape_with_order(IxDyn(&shape)).expect("tap gradient matches tap output");
                    cur = cur + extra;
                }
            }
            cur = self.layers[i].backward(cur);
        }
        cur
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn state(&self) -> NetworkState {
        let to_f64 = |a: &ArrayD<T>| a.iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
        NetworkState {
            spec: self.spec.clone(),
            params: self.params().iter().map(|p| to_f64(&p.value)).collect(),
            buffers: self
                .layers
                .iter()
                .flat_map(Layer::buffers)
                .map(|b| b.iter().map(|v| v.as_f64()).collect())
                .collect(),
            rng: self.rng.clone(),
        }
    }

    pub fn from_state(state: &NetworkState) -> Result<Self> {
        let mut net = Self::build(&state.spec, 0)?;
        {
            let mut params = net.params_mut();
            if params.len() != state.params.len() {
                return Err(Error::Incompatible(format!(
                    "{} parameter tensors stored, architecture has {}",
                    state.params.len(),
                    params.len()
                )));
            }
            for (p, stored) in params.iter_mut().zip(&state.params) {
                if p.value.len() != stored.len() {
                    return Err(Error::Incompatible("parameter tensor size mismatch".into()));
                }
                p.value.iter_mut().zip(stored).for_each(|(v, s)| *v = T::lit(*s));
            }
        }
        let mut buffers: Vec<&mut Array1<T>> = net.layers.iter_mut().flat_map(Layer::buffers_mut).collect();
        if buffers.len() != state.buffers.len() {
            return Err(Error::Incompatible("buffer count mismatch".into()));
        }
        for (b, stored) in buffers.iter_mut().zip(&state.buffers) {
            if b.len() != stored.len() {
                return Err(Error::Incompatible("buffer size mismatch".into()));
            }
            b.iter_mut().zip(stored).for_each(|(v, s)| *v = T::lit(*s));
        }
        net.rng = state.rng.clone();
        Ok(net)
    }
}

/// Serializable network: spec, flat parameter arrays, buffers and RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub spec: ArchitectureSpec,
    pub params: Vec<Vec<f64>>,
    pub buffers: Vec<Vec<f64>>,
    pub rng: ChaCha8Rng,
}

/// Discriminator outputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutput<T> {
    /// Length K+1; the last entry is the fake class.
    pub probs: Vec<T>,
    pub features: Vec<T>,
    /// Length K, before the zero logit is appended.
    pub logits: Vec<T>,
}

/// Discriminator outputs for a batch, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorBatch<T> {
    pub logits: Array2<T>,
    pub probs: Array2<T>,
    pub features: Array2<T>,
}

impl<T: Scalar> DiscriminatorBatch<T> {
    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.nrows() == 0
    }

    pub fn outputs(&self) -> Vec<DiscriminatorOutput<T>> {
        (0..self.len())
            .map(|i| DiscriminatorOutput {
                probs: self.probs.row(i).to_vec(),
                features: self.features.row(i).to_vec(),
                logits: self.logits.row(i).to_vec(),
            })
            .collect()
    }
}

/// K-way classifier with a feature tap; probabilities come from the
/// over-parameterized (K+1)-way softmax.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    net: Network<T>,
    k: usize,
    tap: usize,
}

pub fn build_discriminator<T: Scalar>(spec: &ArchitectureSpec, k: usize, seed: u64) -> Result<Discriminator<T>> {
    spec.validate_discriminator(k)?;
    let net = Network::build(spec, seed)?;
    Ok(Discriminator { net, k, tap: spec.feature_tap.expect("validated") })
}

fn batch_shape(rows: usize, instance: &[usize]) -> Vec<usize> {
    let mut s = vec![rows];
    s.extend_from_slice(instance);
    s
}

impl<T: Scalar> Discriminator<T> {
    pub fn from_network(net: Network<T>, k: usize) -> Result<Self> {
        net.spec().validate_discriminator(k)?;
        let tap = net.spec().feature_tap.expect("validated");
        Ok(Self { net, k, tap })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn input_len(&self) -> usize {
        self.net.spec().input_shape.iter().product()
    }

    /// Forward pass over flattened instances (one per row).
    pub fn forward(&mut self, x: ArrayView2<T>, mode: Mode) -> Result<DiscriminatorBatch<T>> {
        if x.ncols() != self.input_len() {
            return Err(Error::shape(format!(
                "discriminator expects {} values per instance ({:?}), got {}",
                self.input_len(),
                self.net.spec().input_shape,
                x.ncols()
            )));
        }
        let shape = batch_shape(x.nrows(), &self.net.spec().input_shape);
        let input = x.to_owned().into_shape_with_order(IxDyn(&shape)).expect("row-major");
        let (out, features) = self.net.forward(input, mode, Some(self.tap))?;
        let logits = out.into_dimensionality::<ndarray::Ix2>().map_err(|e| Error::shape(e.to_string()))?;
        let probs = overparam_softmax_rows(logits.view());
        Ok(DiscriminatorBatch { logits, probs, features: features.expect("tap requested") })
    }

    /// Backward from gradients w.r.t. logits and (optionally) features of the
    /// most recent forward pass. Returns gradients w.r.t. the flattened input.
    pub fn backward(&mut self, grad_logits: Array2<T>, grad_features: Option<Array2<T>>) -> Array2<T> {
        let n = grad_logits.nrows();
        let g = self.net.backward(grad_logits.into_dyn(), grad_features.map(|g| (self.tap, g)));
        let flat: Vec<T> = g.iter().copied().collect();
        Array2::from_shape_vec((n, flat.len() / n.max(1)), flat).expect("row-major")
    }
}

/// Noise vectors drawn from the standard normal prior.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch<T> {
    pub samples: Array2<T>,
}

impl<T: Scalar> NoiseBatch<T> {
    pub fn sample(batch: usize, dimension: usize, rng: &mut ChaCha8Rng) -> Self {
        let samples = Array2::from_shape_simple_fn((batch, dimension), || {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        });
        Self { samples }
    }

    pub fn zeros(batch: usize, dimension: usize) -> Self {
        Self { samples: Array2::zeros((batch, dimension)) }
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    net: Network<T>,
    noise_dim: usize,
}

pub fn build_generator<T: Scalar>(spec: &ArchitectureSpec, seed: u64) -> Result<Generator<T>> {
    let noise_dim = spec
        .noise_dim
        .ok_or_else(|| Error::config(format!("generator `{}` has no noise_dim", spec.name)))?;
    let out = spec.output_shape()?;
    spec.validate_generator(&out)?;
    Ok(Generator { net: Network::build(spec, seed)?, noise_dim })
}

impl<T: Scalar> Generator<T> {
    pub fn from_network(net: Network<T>) -> Result<Self> {
        let noise_dim = net.spec().noise_dim.ok_or_else(|| Error::config("generator without noise_dim"))?;
        Ok(Self { net, noise_dim })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.net.spec().output_shape().expect("validated at build")
    }

    /// Maps noise to images, flattened one per row.
    pub fn forward(&mut self, noise: &NoiseBatch<T>, mode: Mode) -> Result<Array2<T>> {
        if noise.dimension() != self.noise_dim {
            return Err(Error::config(format!(
                "generator expects {}-dimensional noise, got {}",
                self.noise_dim,
                noise.dimension()
            )));
        }
        let (out, _) = self.net.forward(noise.samples.clone().into_dyn(), mode, None)?;
        let n = noise.len();
        let flat: Vec<T> = out.iter().copied().collect();
        Ok(Array2::from_shape_vec((n, flat.len() / n.max(1)), flat).expect("row-major"))
    }

    /// Returns the gradient w.r.t. the noise.
    pub fn backward(&mut self, grad_images: Array2<T>) -> Array2<T> {
        let n = grad_images.nrows();
        let shape = batch_shape(n, &self.output_shape());
        let g = grad_images.into_shape_with_order(IxDyn(&shape)).expect("row-major");
        let g = self.net.backward(g, None);
        g.into_dimensionality::<ndarray::Ix2>().expect("noise gradient is 2-d")
    }
}

/// Row-wise mean, for feature matching.
pub fn feature_mean<T: Scalar>(features: ArrayView2<T>) -> Array1<T> {
    features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(features.ncols()))
}

/// Evaluation-mode forward pass over a batch of flattened instances.
pub fn discriminator_forward<T: Scalar>(
    model: &mut Discriminator<T>,
    images: ArrayView2<T>,
) -> Result<Vec<DiscriminatorOutput<T>>> {
    Ok(model.forward(images, Mode::Eval)?.outputs())
}
