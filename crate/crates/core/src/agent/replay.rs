use rand::Rng;

/// One transition with fixed-length history windows (`H * input` values each).
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next: Vec<f64>,
    pub done: bool,
}

/// Ring buffer; pushing past capacity overwrites the oldest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Experience>,
    /// slot the next push writes once full
    head: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            head: 0,
        }
    }

    pub(crate) fn from_parts(capacity: usize, items: Vec<Experience>, head: usize) -> Self {
        ReplayMemory { capacity, items, head }
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

    pub(crate) fn head(&self) -> usize {
        self.head
    }

    pub(crate) fn raw(&self) -> &[Experience] {
        &self.items
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let (new, old) = self.items.split_at(self.head);
        old.iter().chain(new.iter())
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    /// `n` distinct indices drawn uniformly.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        rand::seq::index::sample(rng, self.items.len(), n.min(self.items.len())).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(i: usize) -> Experience {
        Experience {
            state: vec![i as f64],
            action: i,
            reward: 0.0,
            next: vec![],
            done: false,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut m = ReplayMemory::new(3);
        for i in 0..5 {
            m.push(exp(i));
        }
        assert_eq!(m.len(), 3);
        let order: Vec<usize> = m.iter().map(|e| e.action).collect();
        assert_eq!(order, vec![2, 3, 4]);
    }
}
