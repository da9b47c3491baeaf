use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

/// Fixed-capacity experience store that evicts the oldest entry first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> Default for ReplayBuffer<T> {
    fn default() -> Self {
        Self::new(1)
    }
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::new() }
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

    /// Appends `item`, returning the evicted oldest entry when full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity { self.items.pop_front() } else { None };
        self.items.push_back(item);
        evicted
    }

    /// `n` distinct entries drawn uniformly, or `None` if fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&T>> {
        if n == 0 || self.items.len() < n {
            return None;
        }
        Some(index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_needs_enough_items() {
        let mut b = ReplayBuffer::new(10);
        b.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(2, &mut rng).is_none());
        b.push(2);
        let mut s: Vec<i32> = b.sample(2, &mut rng).unwrap().into_iter().copied().collect();
        s.sort();
        assert_eq!(s, vec![1, 2]);
    }

    proptest! {
        #[test]
        fn eviction_is_fifo(cap in 1usize..20, n in 0usize..100) {
            let mut b = ReplayBuffer::new(cap);
            let mut evicted = Vec::new();
            for i in 0..n {
                if let Some(e) = b.push(i) {
                    evicted.push(e);
                }
            }
            prop_assert!(b.len() <= cap);
            let expect: Vec<usize> = (0..n.saturating_sub(cap)).collect();
            prop_assert_eq!(evicted, expect);
            let kept: Vec<usize> = b.iter().copied().collect();
            prop_assert_eq!(kept, (n.saturating_sub(cap)..n).collect::<Vec<_>>());
        }
    }
}
