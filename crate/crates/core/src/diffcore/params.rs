use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
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

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    first: Tensor,
    second: Tensor,
}

/// Named parameter tensors plus Adam state.
///
/// Iteration order is the lexicographic order of names, which keeps every
/// traversal (init, serialization, updates) deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step_count: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.moments.remove(name);
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.moments.remove(name);
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn total_sq_norm(&self) -> f64 {
        self.entries.values().map(Tensor::sq_norm).sum()
    }

    /// Parameters only; optimizer state is dropped.
    pub fn without_state(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            moments: BTreeMap::new(),
            step_count: 0,
        }
    }

    /// Glorot-uniform weight `[fan_in, fan_out]` and zero bias `[fan_out]`.
    pub fn init_linear<R: Rng>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, zero_weight: bool, rng: &mut R) {
        let weight = if zero_weight {
            Tensor::zeros(&[fan_in, fan_out])
        } else {
            glorot_uniform(fan_in, fan_out, rng)
        };
        self.insert(&format!("{prefix}.w"), weight);
        self.insert(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
    }

    /// One Adam step. `grads` must have an entry for every parameter.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<(), DiffError> {
        for (name, value) in &self.entries {
            let g = grads
                .get(name)
                .ok_or_else(|| DiffError::MissingGradient(name.clone()))?;
            if g.shape() != value.shape() {
                return Err(DiffError::ShapeMismatch {
                    node: 0,
                    op: "adam_step",
                    shapes: vec![value.shape().to_vec(), g.shape().to_vec()],
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, value) in self.entries.iter_mut() {
            let g = &grads[name];
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: Tensor::zeros(value.shape()),
                second: Tensor::zeros(value.shape()),
            });
            let params = value.data_mut();
            let first = m.first.data_mut();
            let second = m.second.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * gi;
                second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = first[i] / bc1;
                let v_hat = second[i] / bc2;
                params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut p = scalar_set(0.0);
        p.adam_step(&grads(2.0), &AdamConfig::with_lr(1e-3)).unwrap();
        let w = p.get("w").unwrap().item();
        assert!((w + 1e-3).abs() < 1e-10, "{w}");
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_set(0.7);
        for _ in 0..5 {
            p.adam_step(&grads(0.0), &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn missing_gradient_is_error() {
        let mut p = scalar_set(1.0);
        let err = p.adam_step(&BTreeMap::new(), &AdamConfig::default());
        assert!(matches!(err, Err(DiffError::MissingGradient(_))));
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn repeated_gradient_steps_do_not_grow() {
        // Closed-form Adam recurrence for a constant gradient g:
        // m_t = (1-b1^t) g, v_t = (1-b2^t) g^2, so m_hat = g, v_hat = g^2 and
        // every step equals lr * |g| / (|g| + eps).
        let (lr, eps, g) = (1e-3, 1e-8, 0.37);
        let closed = lr * g / (g + eps);
        let mut p = scalar_set(0.0);
        let cfg = AdamConfig::with_lr(lr);
        p.adam_step(&grads(g), &cfg).unwrap();
        let d1 = p.get("w").unwrap().item();
        p.adam_step(&grads(g), &cfg).unwrap();
        let d2 = p.get("w").unwrap().item() - d1;
        assert!((d1.abs() - closed).abs() < 1e-15);
        assert!(d2.abs() <= d1.abs() * 1.05);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = glorot_uniform(10, 6, &mut rng);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        let mut p = ParamSet::new();
        p.init_linear("l", 10, 6, false, &mut rng);
        assert!(p.get("l.b").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
