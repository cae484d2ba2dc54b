use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter in store order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.second[i]
    }

    /// Applies one bias-corrected update and clears the gradients.
    ///
    /// A missing gradient buffer counts as zero. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in params.iter() {
            if let Some(g) = &t.grad {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let bias1 = lit::<T>(1.0 - c.beta1.powi(self.step as i32));
        let bias2 = lit::<T>(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (lit::<T>(c.lr), lit::<T>(c.eps));
        let one = T::one();

        for (i, (_, t)) in params.iter_mut().enumerate() {
            let grad = t.grad.take();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
