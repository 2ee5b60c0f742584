use rand::Rng;

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

/// Column-stacked mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Mat,
    pub actions: Mat,
    /// `n x 1`
    pub rewards: Mat,
    pub next_states: Mat,
    /// `n x 1`, 1.0 where the transition ended at the goal.
    pub dones: Mat,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let n = items.len();
        let mut b = Batch {
            states: Mat::zeros((n, sd)),
            actions: Mat::zeros((n, ad)),
            rewards: Mat::zeros((n, 1)),
            next_states: Mat::zeros((n, sd)),
            dones: Mat::zeros((n, 1)),
        };
        for (i, t) in items.iter().enumerate() {
            if t.s.len() != sd || t.s_next.len() != sd || t.a.len() != ad {
                return Err(Error::shape("batch transition", format!("{sd}/{ad}"), format!("{}/{}", t.s.len(), t.a.len())));
            }
            for j in 0..sd {
                b.states[[i, j]] = t.s[j];
                b.next_states[[i, j]] = t.s_next[j];
            }
            for j in 0..ad {
                b.actions[[i, j]] = t.a[j];
            }
            b.rewards[[i, 0]] = t.r;
            b.dones[[i, 0]] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(b)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.storage.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        if n == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let idx = self.sample_indices(n, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.storage[i]).collect();
        Batch::from_transitions(&items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn tr(r: f64) -> Transition {
        Transition {
            s: vec![r, 0.0],
            a: vec![0.0],
            r,
            s_next: vec![0.0, 0.0],
            done: false,
            truncated: false,
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        let kept: Vec<f64> = b.iter().map(|t| t.r).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn size_never_exceeds_capacity() {
        let mut b = ReplayBuffer::new(7).unwrap();
        for i in 0..100 {
            b.push(tr(i as f64));
            assert!(b.len() <= 7);
        }
    }

    #[test]
    fn empty_buffer_cannot_be_sampled() {
        let b = ReplayBuffer::new(4).unwrap();
        assert!(b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn batch_columns_match_transitions() {
        let mut b = ReplayBuffer::new(2).unwrap();
        let mut t = tr(1.5);
        t.done = true;
        b.push(t);
        let batch = b.sample(3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch.len(), 3);
        assert!(batch.rewards.iter().all(|&r| r == 1.5));
        assert!(batch.dones.iter().all(|&d| d == 1.0));
        assert_eq!(batch.states[[0, 0]], 1.5);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut b = ReplayBuffer::new(n).unwrap();
        for i in 0..2 * n {
            b.push(tr(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 50_000;
        let mut counts = vec![0usize; n];
        for i in b.sample_indices(draws, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let e = draws as f64 / n as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat} p {p}");
    }
}
