use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Activation;
use crate::error::{Error, Result};

fn one() -> usize {
    1
}

/// One declarative layer. Convolutions use "same" zero padding (`kernel / 2`),
/// so a stride-`s` convolution divides spatial size by `s` (rounding up) and a
/// stride-`s` transposed convolution multiplies it by `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default)]
        batch_norm: bool,
        #[serde(default)]
        activation: Activation,
    },
    Conv {
        kernel: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        batch_norm: bool,
        #[serde(default)]
        activation: Activation,
    },
    TransposeConv {
        kernel: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        batch_norm: bool,
        #[serde(default)]
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    MaxPool {
        size: usize,
    },
    GlobalMeanPool,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    fn dense(units: usize, batch_norm: bool, activation: Activation) -> Self {
        LayerSpec::Dense { units, batch_norm, activation }
    }

    fn conv(kernel: usize, channels: usize, stride: usize) -> Self {
        LayerSpec::Conv { kernel, channels, stride, batch_norm: false, activation: Activation::Relu }
    }

    fn conv_bn(kernel: usize, channels: usize, activation: Activation) -> Self {
        LayerSpec::Conv { kernel, channels, stride: 1, batch_norm: true, activation }
    }

    fn tconv(kernel: usize, channels: usize, batch_norm: bool, activation: Activation) -> Self {
        LayerSpec::TransposeConv { kernel, channels, stride: 2, batch_norm, activation }
    }

    /// Per-instance output shape for a per-instance input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [c, h, w] => Ok((*c, *h, *w)),
                _ => Err(Error::config(format!("{what} needs a (channels, height, width) input, got {input:?}"))),
            }
        };
        match self {
            LayerSpec::Dense { units, .. } => Ok(vec![*units]),
            LayerSpec::Conv { kernel, channels, stride, .. } => {
                let (_, h, w) = spatial("convolution")?;
                if *kernel == 0 || kernel % 2 == 0 || *stride == 0 {
                    return Err(Error::config(format!("convolution needs an odd kernel and positive stride, got {kernel}/{stride}")));
                }
                Ok(vec![*channels, (h - 1) / stride + 1, (w - 1) / stride + 1])
            }
            LayerSpec::TransposeConv { kernel, channels, stride, .. } => {
                let (_, h, w) = spatial("transposed convolution")?;
                if *kernel == 0 || kernel % 2 == 0 || *stride == 0 || *stride > *kernel {
                    return Err(Error::config(format!("transposed convolution needs odd kernel ≥ stride, got {kernel}/{stride}")));
                }
                Ok(vec![*channels, h * stride, w * stride])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = spatial("max pooling")?;
                if *size == 0 || h < *size || w < *size {
                    return Err(Error::config(format!("max pool of size {size} on {h}x{w}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::GlobalMeanPool => {
                let (c, _, _) = spatial("global mean pooling")?;
                Ok(vec![c])
            }
            LayerSpec::Reshape { shape } => {
                let from: usize = input.iter().product();
                let to: usize = shape.iter().product();
                if from != to {
                    return Err(Error::config(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Declarative network description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Per-instance input shape; `[noise_dim]` for generators.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index into `layers` whose output is the feature-matching tap.
    #[serde(default)]
    pub feature_tap: Option<usize>,
    #[serde(default)]
    pub noise_dim: Option<usize>,
}

impl ArchitectureSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Per-instance shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::config(format!("architecture `{}` has no layers", self.name)));
        }
        let mut cur = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = layer.output_shape(&cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("non-empty"))
    }

    /// Checks a discriminator: K-wide linear head and a valid feature tap.
    pub fn validate_discriminator(&self, k: usize) -> Result<()> {
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { units, activation: Activation::None, .. }) if *units == k => {}
            _ => {
                return Err(Error::config(format!(
                    "discriminator `{}` must end in a linear dense layer of width {k}",
                    self.name
                )))
            }
        }
        match self.feature_tap {
            Some(t) if t < self.layers.len() => Ok(()),
            Some(t) => Err(Error::config(format!("feature tap {t} but only {} layers", self.layers.len()))),
            None => Err(Error::config(format!("discriminator `{}` has no feature tap", self.name))),
        }
    }

    /// Checks a generator: noise input and the requested image shape.
    pub fn validate_generator(&self, image_shape: &[usize]) -> Result<()> {
        let noise = self.noise_dim.ok_or_else(|| Error::config(format!("generator `{}` has no noise_dim", self.name)))?;
        if self.input_shape != [noise] {
            return Err(Error::config(format!("generator input {:?} does not match noise_dim {noise}", self.input_shape)));
        }
        let out = self.output_shape()?;
        if out.iter().product::<usize>() != image_shape.iter().product::<usize>() {
            return Err(Error::config(format!("generator produces {out:?}, dataset instances are {image_shape:?}")));
        }
        Ok(())
    }

    /// Discriminator for 28×28 grayscale images.
    pub fn mnist_discriminator(k: usize) -> Self {
        Self {
            name: "mnist-discriminator".into(),
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::conv(5, 32, 2),
                LayerSpec::conv(3, 64, 2),
                LayerSpec::conv(1, 32, 1),
                LayerSpec::dense(1024, false, Activation::Relu),
                LayerSpec::dense(k, false, Activation::None),
            ],
            feature_tap: Some(3),
            noise_dim: None,
        }
    }

    pub fn mnist_generator(noise_dim: usize) -> Self {
        Self {
            name: "mnist-generator".into(),
            input_shape: vec![noise_dim],
            layers: vec![
                LayerSpec::dense(500, true, Activation::Relu),
                LayerSpec::dense(500, true, Activation::Relu),
                LayerSpec::dense(784, true, Activation::Tanh),
                LayerSpec::Reshape { shape: vec![1, 28, 28] },
            ],
            feature_tap: None,
            noise_dim: Some(noise_dim),
        }
    }

    /// Discriminator for 32×32 RGB images (also used for SVHN and CIFAR-100
    /// with the head width set to K).
    pub fn cifar10_discriminator(k: usize) -> Self {
        Self {
            name: "cifar10-discriminator".into(),
            input_shape: vec![3, 32, 32],
            layers: vec![
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::conv(3, 64, 1),
                LayerSpec::conv(3, 64, 1),
                LayerSpec::conv(3, 64, 2),
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::conv(3, 128, 1),
                LayerSpec::conv(3, 128, 1),
                LayerSpec::conv(3, 128, 2),
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::conv(3, 256, 1),
                LayerSpec::conv(1, 128, 1),
                LayerSpec::conv(1, 64, 1),
                LayerSpec::GlobalMeanPool,
                LayerSpec::dense(k, false, Activation::None),
            ],
            feature_tap: Some(12),
            noise_dim: None,
        }
    }

    pub fn cifar10_generator(noise_dim: usize) -> Self {
        Self {
            name: "cifar10-generator".into(),
            input_shape: vec![noise_dim],
            layers: vec![
                LayerSpec::dense(4 * 4 * 512, true, Activation::Relu),
                LayerSpec::Reshape { shape: vec![512, 4, 4] },
                LayerSpec::tconv(5, 256, true, Activation::Relu),
                LayerSpec::tconv(5, 128, true, Activation::Relu),
                LayerSpec::tconv(5, 3, false, Activation::Tanh),
            ],
            feature_tap: None,
            noise_dim: Some(noise_dim),
        }
    }

    /// Small multilayer perceptron for low-dimensional tabular data.
    pub fn mlp_discriminator(input_dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            name: "mlp-discriminator".into(),
            input_shape: vec![input_dim],
            layers: vec![
                LayerSpec::dense(hidden, false, Activation::Relu),
                LayerSpec::dense(hidden, false, Activation::Relu),
                LayerSpec::dense(k, false, Activation::None),
            ],
            feature_tap: Some(1),
            noise_dim: None,
        }
    }

    pub fn mlp_generator(noise_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            name: "mlp-generator".into(),
            input_shape: vec![noise_dim],
            layers: vec![
                LayerSpec::dense(hidden, true, Activation::Relu),
                LayerSpec::dense(hidden, true, Activation::Relu),
                LayerSpec::dense(output_dim, false, Activation::Tanh),
            ],
            feature_tap: None,
            noise_dim: Some(noise_dim),
        }
    }

    /// Fully supervised reference network for MNIST. Only usable with DLLP
    /// or plain supervised training; it has no generator counterpart.
    pub fn mnist_supervised_baseline(k: usize) -> Self {
        Self {
            name: "mnist-supervised-baseline".into(),
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::Conv { kernel: 5, channels: 32, stride: 1, batch_norm: false, activation: Activation::Relu },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::conv_bn(3, 64, Activation::Relu),
                LayerSpec::conv_bn(3, 64, Activation::Relu),
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::conv_bn(3, 128, Activation::Relu),
                LayerSpec::conv_bn(1, 10, Activation::Relu),
                LayerSpec::GlobalMeanPool,
                LayerSpec::dense(k, true, Activation::None),
            ],
            feature_tap: Some(7),
            noise_dim: None,
        }
    }

    pub fn cifar10_supervised_baseline(k: usize) -> Self {
        let lr = Activation::LeakyRelu;
        Self {
            name: "cifar10-supervised-baseline".into(),
            input_shape: vec![3, 32, 32],
            layers: vec![
                LayerSpec::conv_bn(3, 96, lr),
                LayerSpec::conv_bn(3, 96, lr),
                LayerSpec::conv_bn(3, 96, lr),
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::conv_bn(3, 192, lr),
                LayerSpec::conv_bn(3, 192, lr),
                LayerSpec::conv_bn(3, 192, lr),
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::conv_bn(3, 192, lr),
                LayerSpec::conv_bn(1, 192, lr),
                LayerSpec::conv_bn(1, 10, lr),
                LayerSpec::GlobalMeanPool,
                LayerSpec::dense(k, false, Activation::None),
            ],
            feature_tap: Some(11),
            noise_dim: None,
        }
    }

    /// Default discriminator/generator pair for a dataset's instance shape.
    pub fn presets_for(instance_shape: &[usize], k: usize, noise_dim: usize) -> Result<(Self, Self)> {
        match instance_shape {
            [1, 28, 28] => Ok((Self::mnist_discriminator(k), Self::mnist_generator(noise_dim))),
            [3, 32, 32] => Ok((Self::cifar10_discriminator(k), Self::cifar10_generator(noise_dim))),
            [d] => Ok((Self::mlp_discriminator(*d, 64, k), Self::mlp_generator(noise_dim, 64, *d))),
            other => Err(Error::config(format!("no preset architecture for instances of shape {other:?}"))),
        }
    }
}
