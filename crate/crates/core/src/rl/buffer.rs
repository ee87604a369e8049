use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Transition;

/// Fixed-capacity FIFO replay storage.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            head: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Transitions oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// The most recent `n` transitions, oldest first.
    pub fn recent(&self, n: usize) -> Vec<Transition> {
        let all: Vec<_> = self.iter().copied().collect();
        all[all.len().saturating_sub(n)..].to_vec()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: f64) -> Transition {
        Transition {
            state: [x, 0.0],
            action: 0.0,
            reward: 0.0,
            next_state: [0.0, 0.0],
            done: false,
            terminal: false,
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i as f64));
            assert!(b.len() <= 3);
        }
        let xs: Vec<f64> = b.iter().map(|x| x.state[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.recent(2).iter().map(|x| x.state[0]).collect::<Vec<_>>(), vec![3.0, 4.0]);
    }
}
