use rand::seq::index;
use rand::Rng;

use super::{Batch, JointLayout};
use crate::error::{input_err, Result};
use crate::game::Transition;

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return input_err("replay buffer capacity must be positive");
        }
        Ok(Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Distinct uniformly drawn slot indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if size == 0 || size > self.items.len() {
            return input_err(format!("cannot draw {size} distinct samples from {} stored", self.items.len()));
        }
        Ok(index::sample(rng, self.items.len(), size).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, layout: &JointLayout, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(size, rng)?;
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked, layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            obs: vec![vec![r]],
            actions: vec![vec![0.0]],
            rewards: vec![r],
            costs: vec![0.0],
            next_obs: vec![vec![r]],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for k in 0..5 {
            b.push(tr(k as f64));
        }
        assert_eq!(b.len(), 3);
        let mut r: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().rewards[0]).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn samples_are_distinct_and_bounded() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for k in 0..10 {
            b.push(tr(k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = b.sample_indices(10, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(b.sample_indices(11, &mut rng).is_err());
        let lay = JointLayout::new(vec![1], vec![1]).unwrap();
        assert_eq!(b.sample(4, &lay, &mut rng).unwrap().len(), 4);
    }
}
