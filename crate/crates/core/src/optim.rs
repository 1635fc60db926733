use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netzoo::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam moments for one network, in parameter order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    t: u64,
}

/// Serializable Adam state (moments as flat `f64` arrays).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, net: &Network<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = net.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update that descends along the accumulated gradients.
    pub fn step(&mut self, net: &mut Network<T>) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((p, m), v) in net.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }

    pub fn state(&self) -> AdamState {
        let flat = |xs: &[ArrayD<T>]| xs.iter().map(|a| a.iter().map(|v| v.as_f64()).collect()).collect();
        AdamState { config: self.config, m: flat(&self.m), v: flat(&self.v), t: self.t }
    }

    pub fn from_state(state: &AdamState, net: &Network<T>) -> Result<Self> {
        let mut adam = Self::new(state.config, net);
        if adam.m.len() != state.m.len() || adam.v.len() != state.v.len() {
            return Err(Error::Incompatible("optimizer state does not match the network".into()));
        }
        for (dst, src) in adam.m.iter_mut().chain(adam.v.iter_mut()).zip(state.m.iter().chain(&state.v)) {
            if dst.len() != src.len() {
                return Err(Error::Incompatible("optimizer moment size mismatch".into()));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = T::lit(*s));
        }
        adam.t = state.t;
        Ok(adam)
    }
}
