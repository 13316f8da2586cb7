use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::{GradPair, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Volumes per optimization step (`N`).
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient `lambda` on weights (biases are never decayed).
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    /// Batch 4, Adam `(0.9, 0.999)`, `lambda = 5e-4`, learning rate `1e-4`,
    /// 80 epochs.
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
            epochs: 80,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments, one pair of accumulators per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn for_params(params: &ModelParams<T>) -> Self {
        let groups = params.groups();
        Self::new(groups.iter().map(|(_, _, t)| t.shape()))
    }

    /// One update over named tensors. All gradients are checked for finite
    /// values before anything is modified.
    pub fn update(
        &mut self,
        params: Vec<(&str, &mut Tensor<T>)>,
        grads: &[&Tensor<T>],
        config: &TrainingConfig,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} accumulators",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            p.expect_same_shape(g, "adam_step")?;
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { group: name.to_string() });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = config.beta1;
        let b2 = config.beta2;
        let c1 = T::from_f64_lossy(1.0 - b1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - b2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let lr = T::from_f64_lossy(config.learning_rate);
        let eps = T::from_f64_lossy(config.epsilon);
        let one = T::one();

        for (((_, p), g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in iter {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Adam step over every group of a model.
    pub fn step_model(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, config: &TrainingConfig) -> Result<()> {
        let grad_groups = grads.groups();
        let grad_refs: Vec<&Tensor<T>> = grad_groups.iter().map(|(_, _, t)| *t).collect();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, _, t) in params.groups_mut() {
            names.push(name);
            tensors.push(t);
        }
        let named = names.iter().map(String::as_str).zip(tensors).collect();
        self.update(named, &grad_refs, config)
    }

    /// Adam step over free-standing parameter/gradient pairs.
    pub fn step_pairs(&mut self, pairs: &mut [GradPair<T>], config: &TrainingConfig) -> Result<()> {
        let names: Vec<String> = (0..pairs.len()).map(|i| format!("param{i}")).collect();
        let (values, grads): (Vec<_>, Vec<_>) = pairs.iter_mut().map(|p| (&mut p.value, &p.grad)).unzip();
        self.update(names.iter().map(String::as_str).zip(values).collect(), &grads, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_pair(value: f64, grad: f64) -> GradPair<f64> {
        GradPair::new(Tensor::scalar(value), Tensor::scalar(grad)).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut pairs = [scalar_pair(0.3, 0.0)];
        let mut adam = AdamState::new([pairs[0].value.shape()]);
        adam.step_pairs(&mut pairs, &TrainingConfig::default()).unwrap();
        assert_eq!(pairs[0].value.data(), &[0.3]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut pairs = [scalar_pair(1.0, 1.0)];
        let mut adam = AdamState::new([pairs[0].value.shape()]);
        let cfg = TrainingConfig::default();
        adam.step_pairs(&mut pairs, &cfg).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((pairs[0].value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let cfg = TrainingConfig {
            learning_rate: 1e-2,
            ..TrainingConfig::default()
        };
        let mut pairs = [scalar_pair(1.0, 0.0)];
        let mut adam = AdamState::new([pairs[0].value.shape()]);
        for _ in 0..500 {
            let w = pairs[0].value.data()[0];
            pairs[0].grad = Tensor::scalar(2.0 * w);
            adam.step_pairs(&mut pairs, &cfg).unwrap();
        }
        assert!(pairs[0].value.data()[0].abs() < 0.1);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut pairs = [scalar_pair(1.0, 1.0), scalar_pair(2.0, f64::NAN)];
        let mut adam = AdamState::new(pairs.iter().map(|p| p.value.shape()).collect::<Vec<_>>());
        let err = adam.step_pairs(&mut pairs, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref group } if group == "param1"));
        assert_eq!(pairs[0].value.data(), &[1.0]);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig {
            beta2: 1.0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
