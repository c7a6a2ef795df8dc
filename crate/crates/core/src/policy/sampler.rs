use std::collections::VecDeque;

use rand::Rng as _;

use super::PolicyError;
use crate::rng::Rng;

pub const DEFAULT_BUFFER_CAPACITY: usize = 10_000;

/// FIFO of recently visited observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBuffer {
    capacity: usize,
    items: VecDeque<Vec<f64>>,
}

impl ObsBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, obs: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(obs);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl Default for ObsBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

/// Where the inputs `x_k` of a partial function come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSampler {
    /// I.i.d. uniform over an enumerated input space.
    Uniform(Vec<Vec<f64>>),
    /// Every input in order, cycling when `K` exceeds the list.
    Enumerate(Vec<Vec<f64>>),
    /// I.i.d. uniform over buffered observations.
    Buffer(ObsBuffer),
}

impl InputSampler {
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, PolicyError> {
        match self {
            Self::Uniform(items) => pick(items.len(), k, rng, |i| items[i].clone()),
            Self::Enumerate(items) => {
                if items.is_empty() {
                    return Err(PolicyError::EmptySampler);
                }
                Ok((0..k).map(|i| items[i % items.len()].clone()).collect())
            }
            Self::Buffer(buf) => pick(buf.items.len(), k, rng, |i| buf.items[i].clone()),
        }
    }

    /// Records visited observations; only the buffer variant keeps them.
    pub fn observe(&mut self, obs: &[f64]) {
        if let Self::Buffer(buf) = self {
            buf.push(obs.to_vec());
        }
    }
}

fn pick(n: usize, k: usize, rng: &mut Rng, get: impl Fn(usize) -> Vec<f64>) -> Result<Vec<Vec<f64>>, PolicyError> {
    if n == 0 {
        return Err(PolicyError::EmptySampler);
    }
    Ok((0..k).map(|_| get(rng.random_range(0..n))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn buffer_is_fifo() {
        let mut s = InputSampler::Buffer(ObsBuffer::new(2));
        for v in 0..3 {
            s.observe(&[v as f64]);
        }
        let InputSampler::Buffer(buf) = &s else { unreachable!() };
        assert_eq!(buf.items, VecDeque::from([vec![1.0], vec![2.0]]));
    }

    #[test]
    fn empty_sampler_errors() {
        let mut rng = Rng::seed_from_u64(0);
        let s = InputSampler::Buffer(ObsBuffer::default());
        assert_eq!(s.sample(3, &mut rng), Err(PolicyError::EmptySampler));
    }

    #[test]
    fn enumerate_cycles() {
        let mut rng = Rng::seed_from_u64(0);
        let s = InputSampler::Enumerate(vec![vec![0.0], vec![1.0]]);
        let xs = s.sample(3, &mut rng).unwrap();
        assert_eq!(xs, vec![vec![0.0], vec![1.0], vec![0.0]]);
    }
}
