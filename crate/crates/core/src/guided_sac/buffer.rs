use ndarray::Array2;
use rand::Rng as _;

use crate::nn::Real;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward_env: f64,
    /// Guiding reward, fixed when the transition was collected.
    pub reward_guide: f64,
    pub next_state: Vec<f64>,
    /// True only for genuine terminal states, not step-limit truncation.
    pub done: bool,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F> {
    pub states: Array2<F>,
    pub actions: Array2<F>,
    pub reward_env: Array2<F>,
    pub reward_guide: Array2<F>,
    pub next_states: Array2<F>,
    pub done: Array2<F>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let sd = items.first().map_or(0, |t| t.state.len());
        let ad = items.first().map_or(0, |t| t.action.len());
        let col = |f: &dyn Fn(&Transition) -> f64| Array2::from_shape_fn((n, 1), |(i, _)| F::of(f(items[i])));
        Self {
            states: Array2::from_shape_fn((n, sd), |(i, j)| F::of(items[i].state[j])),
            actions: Array2::from_shape_fn((n, ad), |(i, j)| F::of(items[i].action[j])),
            reward_env: col(&|t| t.reward_env),
            reward_guide: col(&|t| t.reward_guide),
            next_states: Array2::from_shape_fn((n, sd), |(i, j)| F::of(items[i].next_state[j])),
            done: col(&|t| if t.done { 1.0 } else { 0.0 }),
        }
    }
}

/// Fixed-capacity FIFO replay memory with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
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

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<F: Real>(&self, batch: usize, rng: &mut Rng) -> Batch<F> {
        assert!(!self.items.is_empty(), "sampling an empty replay buffer");
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.items.len())).collect();
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f64, 0.5],
            action: vec![-0.25],
            reward_env: i as f64,
            reward_guide: -(i as f64),
            next_state: vec![i as f64 + 1.0, 0.5],
            done: i % 2 == 0,
        }
    }

    #[test]
    fn oldest_entries_are_overwritten() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = b.iter().map(|x| x.reward_env).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_leaves_contents_untouched() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(t(i));
        }
        let before: Vec<Transition> = b.iter().cloned().collect();
        let mut rng = stream_rng(0, 0);
        let batch: Batch<f64> = b.sample(64, &mut rng);
        assert_eq!(batch.len(), 64);
        for r in 0..64 {
            let i = batch.reward_env[[r, 0]] as usize;
            assert_eq!(batch.reward_guide[[r, 0]], -(i as f64));
            assert_eq!(batch.states[[r, 0]], i as f64);
            assert_eq!(batch.done[[r, 0]], if i % 2 == 0 { 1.0 } else { 0.0 });
        }
        assert_eq!(b.iter().cloned().collect::<Vec<_>>(), before);
    }
}
