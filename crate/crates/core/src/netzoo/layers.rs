use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::conv::{col2im, im2col, nchw_to_rows, rows_to_nchw, Geometry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Training mode draws dropout masks and uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    LeakyRelu,
    Tanh,
}

const LEAKY_SLOPE: f64 = 0.2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    fn new(value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    fn fan_in_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        });
        Self::new(value)
    }

    fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    fn filled(shape: &[usize], v: T) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v))
    }
}

fn as2<T: Scalar>(x: ArrayD<T>) -> Result<Array2<T>> {
    let n = x.shape().first().copied().unwrap_or(0);
    let rest: usize = x.shape().iter().skip(1).product();
    let x = x.as_standard_layout().into_owned();
    x.into_shape_with_order((n, rest)).map_err(|e| Error::shape(e.to_string()))
}

fn as4<T: Scalar>(x: ArrayD<T>, what: &str) -> Result<Array4<T>> {
    x.into_dimensionality::<Ix4>()
        .map_err(|_| Error::shape(format!("{what} expects (batch, channels, height, width) input")))
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<(Array2<T>, Vec<usize>)>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::fan_in_normal(&[inputs, units], inputs, rng),
            bias: Param::zeros(&[units]),
            input: None,
        }
    }

    fn forward(&mut self, x: ArrayD<T>) -> Result<ArrayD<T>> {
        let shape = x.shape().to_vec();
        let x = as2(x)?;
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        if x.ncols() != w.nrows() {
            return Err(Error::shape(format!("dense layer expects {} inputs, got {}", w.nrows(), x.ncols())));
        }
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        let y = x.dot(&w) + &b;
        self.input = Some((x, shape));
        Ok(y.into_dyn())
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        let (x, shape) = self.input.as_ref().expect("forward before backward");
        let g = as2(g).expect("dense gradient is 2-d");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let dw = x.t().dot(&g);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &g.sum_axis(Axis(0)).into_dyn();
        let dx = g.dot(&w.t());
        dx.into_shape_with_order(IxDyn(shape)).expect("same element count")
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `(out_channels, in_channels·k·k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
    geom: Geometry,
    cache: Option<(Array2<T>, (usize, usize, usize, usize), usize, usize)>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: Param::fan_in_normal(&[out_ch, fan_in], fan_in, rng),
            bias: Param::zeros(&[out_ch]),
            geom: Geometry { kernel, stride, pad: kernel / 2 },
            cache: None,
        }
    }

    fn forward(&mut self, x: ArrayD<T>) -> Result<ArrayD<T>> {
        let x = as4(x, "convolution")?;
        let dim = x.dim();
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        if dim.1 * self.geom.kernel * self.geom.kernel != w.ncols() {
            return Err(Error::shape(format!("convolution got {} input channels", dim.1)));
        }
        let (oh, ow) = (self.geom.out_len(dim.2), self.geom.out_len(dim.3));
        let cols = im2col(x.view(), self.geom);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        let rows = cols.dot(&w.t()) + &b;
        self.cache = Some((cols, dim, oh, ow));
        Ok(rows_to_nchw(rows, dim.0, oh, ow).into_dyn())
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        let (cols, dim, _, _) = self.cache.as_ref().expect("forward before backward");
        let g = as4(g, "convolution").expect("4-d gradient");
        let g_rows = nchw_to_rows(g.view());
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        self.weight.grad += &g_rows.t().dot(cols).into_dyn();
        self.bias.grad += &g_rows.sum_axis(Axis(0)).into_dyn();
        let dcols = g_rows.dot(&w);
        col2im(&dcols, *dim, self.geom).into_dyn()
    }
}

/// Transposed convolution that exactly multiplies spatial size by `stride`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    /// `(in_channels, out_channels·k·k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
    geom: Geometry,
    out_ch: usize,
    cache: Option<(Array2<T>, (usize, usize, usize, usize))>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * kernel * kernel / (stride * stride);
        Self {
            weight: Param::fan_in_normal(&[in_ch, out_ch * kernel * kernel], fan_in, rng),
            bias: Param::zeros(&[out_ch]),
            geom: Geometry { kernel, stride, pad: kernel / 2 },
            out_ch,
            cache: None,
        }
    }

    pub(crate) fn out_len(&self, len: usize) -> usize {
        len * self.geom.stride
    }

    fn forward(&mut self, x: ArrayD<T>) -> Result<ArrayD<T>> {
        let x = as4(x, "transposed convolution")?;
        let (n, c, h, w) = x.dim();
        let wt = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        if c != wt.nrows() {
            return Err(Error::shape(format!("transposed convolution got {c} input channels")));
        }
        let rows = nchw_to_rows(x.view());
        let cols = rows.dot(&wt);
        let out_shape = (n, self.out_ch, self.out_len(h), self.out_len(w));
        debug_assert_eq!(self.geom.out_len(out_shape.2), h);
        let mut y = col2im(&cols, out_shape, self.geom);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        for (ch, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            plane += b[ch];
        }
        self.cache = Some((rows, (n, c, h, w)));
        Ok(y.into_dyn())
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        let (rows, (n, _, h, w)) = self.cache.as_ref().expect("forward before backward");
        let g = as4(g, "transposed convolution").expect("4-d gradient");
        let gcols = im2col(g.view(), self.geom);
        let wt = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        self.weight.grad += &rows.t().dot(&gcols).into_dyn();
        self.bias.grad += &g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn();
        let drows = gcols.dot(&wt.t());
        rows_to_nchw(drows, *n, *h, *w).into_dyn()
    }
}

/// Per-feature (2-d input) or per-channel (4-d input) batch normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    spatial: Option<(usize, usize, usize)>,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::filled(&[features], T::one()),
            beta: Param::zeros(&[features]),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            cache: None,
        }
    }

    fn to_rows(x: ArrayD<T>) -> Result<(Array2<T>, Option<(usize, usize, usize)>)> {
        match x.ndim() {
            2 => Ok((x.into_dimensionality::<Ix2>().expect("2-d"), None)),
            4 => {
                let x = x.into_dimensionality::<Ix4>().expect("4-d");
                let (n, _, h, w) = x.dim();
                Ok((nchw_to_rows(x.view()), Some((n, h, w))))
            }
            d => Err(Error::shape(format!("batch norm expects 2-d or 4-d input, got {d}-d"))),
        }
    }

    fn from_rows(rows: Array2<T>, spatial: Option<(usize, usize, usize)>) -> ArrayD<T> {
        match spatial {
            None => rows.into_dyn(),
            Some((n, h, w)) => rows_to_nchw(rows, n, h, w).into_dyn(),
        }
    }

    fn forward(&mut self, x: ArrayD<T>, mode: Mode) -> Result<ArrayD<T>> {
        let (rows, spatial) = Self::to_rows(x)?;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d");
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d");
        if rows.ncols() != gamma.len() {
            return Err(Error::shape(format!("batch norm over {} features got {}", gamma.len(), rows.ncols())));
        }
        let eps = T::lit(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = rows.mean_axis(Axis(0)).expect("non-empty batch");
                let var = rows.var_axis(Axis(0), T::zero());
                let mom = T::lit(BN_MOMENTUM);
                self.running_mean = &self.running_mean * (T::one() - mom) + &mean * mom;
                self.running_var = &self.running_var * (T::one() - mom) + &var * mom;
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (&rows - &mean) * &inv_std;
        let y = &xhat * &gamma + &beta;
        self.cache = Some(BnCache { xhat, inv_std, spatial, train: mode == Mode::Train });
        Ok(Self::from_rows(y, spatial))
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (g, _) = Self::to_rows(g).expect("gradient shape matches forward");
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d");
        self.gamma.grad += &(&g * &cache.xhat).sum_axis(Axis(0)).into_dyn();
        self.beta.grad += &g.sum_axis(Axis(0)).into_dyn();
        let dxhat = &g * &gamma;
        let dx = if cache.train {
            let m = T::from_usize_lossy(g.nrows());
            let sum_d = dxhat.sum_axis(Axis(0));
            let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            ((&dxhat * m - &sum_d - &(&cache.xhat * &sum_dx)) * &cache.inv_std) / m
        } else {
            dxhat * &cache.inv_std
        };
        Self::from_rows(dx, cache.spatial)
    }
}

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<ArrayD<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    fn forward(&mut self, x: ArrayD<T>, mode: Mode, rng: &mut ChaCha8Rng) -> ArrayD<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let mask = ArrayD::from_shape_simple_fn(x.raw_dim(), || if rng.random::<f64>() < keep { scale } else { T::zero() });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        match &self.mask {
            Some(mask) => g * mask,
            None => g,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActivationLayer<T> {
    pub kind: Activation,
    cache: Option<ArrayD<T>>,
}

impl<T: Scalar> ActivationLayer<T> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    fn forward(&mut self, x: ArrayD<T>) -> ArrayD<T> {
        let slope = T::lit(LEAKY_SLOPE);
        let y = match self.kind {
            Activation::None => x.clone(),
            Activation::Relu => x.mapv(|v| if v < T::zero() { T::zero() } else { v }),
            Activation::LeakyRelu => x.mapv(|v| if v > T::zero() { v } else { v * slope }),
            Activation::Tanh => x.mapv(T::tanh),
        };
        // tanh differentiates from its output, the rest from the input
        self.cache = Some(if self.kind == Activation::Tanh { y.clone() } else { x });
        y
    }

    fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        let c = self.cache.as_ref().expect("forward before backward");
        let slope = T::lit(LEAKY_SLOPE);
        match self.kind {
            Activation::None => g,
            Activation::Relu => ndarray::Zip::from(&g).and(c).map_collect(|&g, &x| if x > T::zero() { g } else { T::zero() }),
            Activation::LeakyRelu => ndarray::Zip::from(&g).and(c).map_collect(|&g, &x| if x > T::zero() { g } else { g * slope }),
            Activation::Tanh => ndarray::Zip::from(&g).and(c).map_collect(|&g, &y| g * (T::one() - y * y)),
        }
    }
}

/// Runtime layer. Each spec-level layer expands into one or more of these.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    Activation(ActivationLayer<T>),
    GlobalMeanPool { hw: Option<(usize, usize)> },
    MaxPool { size: usize, argmax: Option<(Vec<usize>, Vec<usize>)> },
    Reshape { shape: Vec<usize>, input_shape: Option<Vec<usize>> },
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: ArrayD<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<ArrayD<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv(l) => l.forward(x),
            Layer::ConvTranspose(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dropout(l) => Ok(l.forward(x, mode, rng)),
            Layer::Activation(l) => Ok(l.forward(x)),
            Layer::GlobalMeanPool { hw } => {
                let x = as4(x, "global mean pooling")?;
                let (_, _, h, w) = x.dim();
                *hw = Some((h, w));
                let s = x.sum_axis(Axis(3)).sum_axis(Axis(2));
                Ok((s / T::from_usize_lossy(h * w)).into_dyn())
            }
            Layer::MaxPool { size, argmax } => {
                let x = as4(x, "max pooling")?;
                let (n, c, h, w) = x.dim();
                let (oh, ow) = (h / *size, w / *size);
                let mut y = Array4::zeros((n, c, oh, ow));
                let mut idx = Vec::with_capacity(n * c * oh * ow);
                let xs = x.as_standard_layout();
                let flat = xs.as_slice().expect("standard layout");
                for (o, v) in y.iter_mut().enumerate() {
                    let (ox, rest) = (o % ow, o / ow);
                    let (oy, nc) = (rest % oh, rest / oh);
                    let mut best = (T::neg_infinity(), 0);
                    for dy in 0..*size {
                        for dx in 0..*size {
                            let i = nc * h * w + (oy * *size + dy) * w + ox * *size + dx;
                            if flat[i] > best.0 {
                                best = (flat[i], i);
                            }
                        }
                    }
                    *v = best.0;
                    idx.push(best.1);
                }
                *argmax = Some((idx, vec![n, c, h, w]));
                Ok(y.into_dyn())
            }
            Layer::Reshape { shape, input_shape } => {
                let n = x.shape()[0];
                *input_shape = Some(x.shape().to_vec());
                let mut full = vec![n];
                full.extend_from_slice(shape);
                let x = x.as_standard_layout().into_owned();
                x.into_shape_with_order(IxDyn(&full)).map_err(|e| Error::shape(format!("reshape to {shape:?}: {e}")))
            }
        }
    }

    pub fn backward(&mut self, g: ArrayD<T>) -> ArrayD<T> {
        match self {
            Layer::Dense(l) => l.backward(g),
            Layer::Conv(l) => l.backward(g),
            Layer::ConvTranspose(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::Activation(l) => l.backward(g),
            Layer::GlobalMeanPool { hw } => {
                let (h, w) = hw.expect("forward before backward");
                let g = g.into_dimensionality::<Ix2>().expect("pooled gradient is 2-d");
                let (n, c) = g.dim();
                let scale = T::one() / T::from_usize_lossy(h * w);
                Array4::from_shape_fn((n, c, h, w), |(b, ch, _, _)| g[[b, ch]] * scale).into_dyn()
            }
            Layer::MaxPool { argmax, .. } => {
                let (idx, shape) = argmax.as_ref().expect("forward before backward");
                let mut dx = ArrayD::zeros(IxDyn(shape));
                let gs = g.as_standard_layout();
                let dflat = dx.as_slice_mut().expect("fresh array");
                for (gv, &i) in gs.iter().zip(idx) {
                    dflat[i] += *gv;
                }
                dx
            }
            Layer::Reshape { input_shape, .. } => {
                let shape = input_shape.as_ref().expect("forward before backward");
                g.as_standard_layout().into_owned().into_shape_with_order(IxDyn(shape)).expect("same element count")
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Array1<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Array1<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }
}
