use super::{ParamStore, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily and follow
/// the parameter order of the store they are stepped against.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        if self.first.is_empty() {
            self.first = store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.second = self.first.clone();
        }
        assert_eq!(
            self.first.len(),
            store.len(),
            "optimizer bound to another store"
        );
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store
            .params_mut()
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let g = p.grad.as_ref().expect("checked above").data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g[i] * g[i];
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p)).unwrap();
        (s, id)
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut s, _) = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        assert_eq!(adam.step(&mut s), Err(TensorError::MissingGrad("p".into())));
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = scalar_store(0.25);
        s.zero_grad();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(id).item(), 0.25);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // m = 0.5, v = 0.01; m_hat = 1, v_hat = 1 -> p = 1 - 1e-4 / (1 + 1e-8)
        let (mut s, id) = scalar_store(1.0);
        s.accumulate_grad(id, &[1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s).unwrap();
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
        assert!((s.value(id).item() - 0.9999).abs() < 1e-9);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        });
        let mut steps = 0;
        while (s.value(id).item() - 3.0).abs() >= 1e-2 {
            s.zero_grad();
            let p = s.value(id).item();
            s.accumulate_grad(id, &[2.0 * (p - 3.0)]);
            adam.step(&mut s).unwrap();
            steps += 1;
            assert!(steps < 10_000, "did not converge, p = {p}");
        }
    }
}
