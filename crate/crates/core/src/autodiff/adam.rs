use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Moment accumulators for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// left untouched and their moments are not decayed.
    pub fn update(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::dim("adam_step", "parameter/gradient/state count mismatch"));
        }
        for (i, g) in grads.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params.get(ParamId(i)).shape() || self.first[i].shape() != g.shape() {
                    return Err(Error::dim(
                        "adam_step",
                        format!("gradient {:?} for `{}`", g.shape(), params.name(ParamId(i))),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::NumericGradient(params.name(ParamId(i)).to_string()));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get_mut(ParamId(i)).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j].to_acc();
                let mj = beta1 * m[j].to_acc() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].to_acc() + (1.0 - beta2) * gj * gj;
                m[j] = F::from_acc(mj);
                v[j] = F::from_acc(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                p[j] = F::from_acc(p[j].to_acc() - update);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent step `p ← p − lr·g`.
pub fn sgd_step<F: Scalar>(params: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
    for (i, g) in grads.grads.iter().enumerate() {
        let Some(g) = g else { continue };
        if !g.is_finite() {
            return Err(Error::NumericGradient(params.name(ParamId(i)).to_string()));
        }
        for (p, d) in params.get_mut(ParamId(i)).data_mut().iter_mut().zip(g.data()) {
            *p = F::from_acc(p.to_acc() - lr * d.to_acc());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_on_fresh_state_leaves_params() {
        let mut s = one_param(&[0.5, -1.5, 2.0]);
        let before = s.clone();
        let mut st = AdamState::new(&s, AdamConfig::default());
        let zeros = Gradients::zeros_for(&s);
        st.update(&mut s, &zeros).unwrap();
        assert_eq!(s, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g|+ε) ≈ lr·sign(g).
        for g in [0.3f32, -2.0, 17.0] {
            let mut s = one_param(&[1.0]);
            let mut st = AdamState::new(&s, AdamConfig::with_lr(0.01));
            let mut grads = Gradients::empty_for(&s);
            grads.set(ParamId(0), Tensor::new(vec![1], vec![g]).unwrap());
            st.update(&mut s, &grads).unwrap();
            let delta = s.get(ParamId(0)).data()[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = one_param(&[1.0]);
        let mut st = AdamState::new(&s, AdamConfig::default());
        let mut grads = Gradients::empty_for(&s);
        grads.set(ParamId(0), Tensor::new(vec![1], vec![f32::NAN]).unwrap());
        match st.update(&mut s, &grads) {
            Err(Error::NumericGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut s = one_param(&[0.1, 0.2, 0.3]);
            let mut st = AdamState::new(&s, AdamConfig::default());
            for k in 0..5 {
                let mut grads = Gradients::empty_for(&s);
                let g = vec![0.1 * k as f32, -0.3, 0.7];
                grads.set(ParamId(0), Tensor::new(vec![3], g).unwrap());
                st.update(&mut s, &grads).unwrap();
            }
            s.flatten_values()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
