use super::{Network, Parameters, Real};
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v - lr * g; w <- w + v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Option<Parameters<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd { momentum, velocity: None })
    }

    pub fn reset(&mut self) {
        self.velocity = None;
    }

    /// Apply one update. A non-finite gradient aborts without touching the
    /// parameters.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Parameters<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some((layer, idx)) = first_non_finite(grads) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at layer {layer}, element {idx}"
            )));
        }
        let velocity = self.velocity.get_or_insert_with(|| grads.zeros_like());
        let (mu, lr) = (T::of(self.momentum), T::of(lr));
        let params = net.params_mut();
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter()) {
            *v = mu * *v - lr * *g;
            *p = *p + *v;
        }
        Ok(())
    }
}

fn first_non_finite<T: Real>(grads: &Parameters<T>) -> Option<(usize, usize)> {
    for (i, l) in grads.layers.iter().enumerate() {
        if let Some(j) = l.weights.iter().chain(&l.bias).position(|v| !v.is_finite()) {
            return Some((i, j));
        }
    }
    None
}
