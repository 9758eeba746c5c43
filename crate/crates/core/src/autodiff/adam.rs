//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tape::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .ids()
            .map(|id| Matrix::zeros(params.get(id).dim()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// First and second moment estimates, aligned with `params.ids()`.
    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first, &self.second)
    }

    /// Rebuild a saved state, checking every moment against `params`.
    pub fn from_parts(
        params: &ParamSet,
        config: AdamConfig,
        step: u64,
        first: Vec<Matrix>,
        second: Vec<Matrix>,
    ) -> Result<Self> {
        if first.len() != params.len() || second.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer state has {}/{} moments for {} parameters",
                first.len(),
                second.len(),
                params.len()
            )));
        }
        for ((id, m), v) in params.ids().zip(&first).zip(&second) {
            let want = params.get(id).dim();
            for got in [m.dim(), v.dim()] {
                if got != want {
                    return Err(Error::Shape {
                        op: "adam_from_parts",
                        lhs: want,
                        rhs: got,
                    });
                }
            }
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    /// One update. `grads` is aligned with `params.ids()`; `None` means the
    /// parameter received no gradient this step and is treated as zero.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Matrix>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.dim() != params.get(id).dim() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: params.get(id).dim(),
                        rhs: g.dim(),
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        name: params.name(id).to_string(),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, id) in params.ids().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = params.get_mut(id);
            match &grads[i] {
                Some(g) => ndarray::Zip::from(&mut *m)
                    .and(&mut *v)
                    .and(g)
                    .for_each(|m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                    }),
                None => {
                    *m *= beta1;
                    *v *= beta2;
                }
            }
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= learning_rate * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
