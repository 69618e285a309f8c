use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BufferKind;
use crate::error::{Error, Result};

/// One stored experience. Observations are flat vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Environment-space action.
    pub action: Vec<f64>,
    /// Single reward, or the accumulated discounted reward for n-step entries.
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The episode ended at `next_state`, by any outcome.
    pub done: bool,
    /// The episode ended in a true terminal (goal or collision); no bootstrap.
    pub terminal: bool,
    /// Bootstrap with `γ^bootstrap_steps`.
    pub bootstrap_steps: u32,
}

impl Transition {
    pub fn single(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>, done: bool, terminal: bool) -> Self {
        Self {
            state,
            action,
            reward,
            next_state,
            done,
            terminal,
            bootstrap_steps: 1,
        }
    }
}

/// A sampled minibatch, rows aligned across fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
    pub bootstrap_steps: Vec<u32>,
    /// Importance-sampling weights; all ones for uniform sampling.
    pub weights: Array1<f64>,
    /// Storage slots, for priority updates.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition], weights: Array1<f64>, indices: Vec<usize>) -> Self {
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            let width = items.first().map_or(0, |t| f(t).len());
            let mut a = Array2::zeros((items.len(), width));
            for (mut row, t) in a.rows_mut().into_iter().zip(items) {
                row.assign(&ndarray::ArrayView1::from(f(t)));
            }
            a
        };
        Self {
            states: rows(&|t| &t.state),
            actions: rows(&|t| &t.action),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: rows(&|t| &t.next_state),
            terminal: items.iter().map(|t| t.terminal).collect(),
            bootstrap_steps: items.iter().map(|t| t.bootstrap_steps).collect(),
            weights,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

fn check_available(available: usize, requested: usize) -> Result<()> {
    if available < requested || requested == 0 {
        return Err(Error::InsufficientData { available, requested });
    }
    Ok(())
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl UniformBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
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

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `t`, returning the slot it occupies.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// Transitions in slot order.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// I.i.d. uniform indices, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        check_available(self.len(), batch_size)?;
        let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        let items: Vec<&Transition> = indices.iter().map(|&i| &self.items[i]).collect();
        Ok(Batch::from_transitions(&items, Array1::ones(batch_size), indices))
    }
}

/// Binary sum tree over `capacity` leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass ∈ [0, total)`; never a zero-weight leaf.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            if mass < left || right <= 0.0 {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}

/// Proportional prioritized replay: `P(i) = p_i^α / Σ p^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedBuffer {
    store: UniformBuffer,
    tree: SumTree,
    alpha: f64,
    beta_start: f64,
    beta_end: f64,
    beta_anneal_samples: u64,
    samples_drawn: u64,
    max_priority: f64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64, beta_start: f64, beta_end: f64, beta_anneal_samples: u64) -> Self {
        Self {
            store: UniformBuffer::new(capacity),
            tree: SumTree::new(capacity),
            alpha,
            beta_start,
            beta_end,
            beta_anneal_samples,
            samples_drawn: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn storage(&self) -> &UniformBuffer {
        &self.store
    }

    /// β for the next sample call.
    pub fn beta(&self) -> f64 {
        if self.beta_anneal_samples == 0 {
            return self.beta_end;
        }
        let frac = (self.samples_drawn as f64 / self.beta_anneal_samples as f64).min(1.0);
        self.beta_start + frac * (self.beta_end - self.beta_start)
    }

    /// New transitions enter with the largest priority seen so far.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.store.push(t);
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        slot
    }

    /// Sets the raw priority `p_i` (before exponentiation).
    pub fn set_priority(&mut self, slot: usize, priority: f64) {
        debug_assert!(slot < self.store.len());
        debug_assert!(priority >= 0.0 && priority.is_finite());
        self.tree.set(slot, priority.powf(self.alpha));
        if priority > self.max_priority {
            self.max_priority = priority;
        }
    }

    /// Current sampling probability of `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        self.tree.get(slot) / self.tree.total()
    }

    pub fn update_priorities(&mut self, slots: &[usize], td_errors: &[f64]) {
        for (&slot, &td) in slots.iter().zip(td_errors) {
            self.set_priority(slot, td.abs() + 1e-6);
        }
    }

    /// I.i.d. proportional draws; weights `(N·P(i))^{-β}` divided by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(&mut self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        check_available(self.len(), batch_size)?;
        let total = self.tree.total();
        let n = self.len() as f64;
        let beta = self.beta();
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Array1::zeros(batch_size);
        for w in weights.iter_mut() {
            let slot = self.tree.find(rng.random::<f64>() * total).min(self.len() - 1);
            *w = (n * self.tree.get(slot) / total).powf(-beta);
            indices.push(slot);
        }
        let max = weights.fold(0.0f64, |m, &w| m.max(w));
        if max > 0.0 && max.is_finite() {
            weights /= max;
        }
        self.samples_drawn += 1;
        let items: Vec<&Transition> = indices.iter().map(|&i| self.store.get(i).expect("slot")).collect();
        Ok(Batch::from_transitions(&items, weights, indices))
    }
}

/// Accumulates `n` raw steps into one transition before storing; windows are
/// truncated at episode end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NStepBuffer {
    store: UniformBuffer,
    n: usize,
    gamma: f64,
    pending: VecDeque<Transition>,
}

impl NStepBuffer {
    pub fn new(capacity: usize, n: usize, gamma: f64) -> Self {
        assert!(n >= 1, "n must be at least 1");
        Self {
            store: UniformBuffer::new(capacity),
            n,
            gamma,
            pending: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn storage(&self) -> &UniformBuffer {
        &self.store
    }

    /// Combines consecutive raw steps: `R = Σ_k γ^k r_k`, next state and
    /// termination from the last step.
    fn aggregate(&self, window: impl Iterator<Item = Transition>) -> Transition {
        let mut out: Option<Transition> = None;
        let mut k = 0i32;
        for t in window {
            match &mut out {
                None => out = Some(t),
                Some(acc) => {
                    acc.reward += self.gamma.powi(k) * t.reward;
                    acc.next_state = t.next_state;
                    acc.done = t.done;
                    acc.terminal = t.terminal;
                }
            }
            k += 1;
        }
        let mut out = out.expect("non-empty window");
        out.bootstrap_steps = k as u32;
        out
    }

    /// Takes a single-step transition; stores every completed window.
    pub fn push(&mut self, t: Transition) {
        let done = t.done;
        self.pending.push_back(t);
        if done {
            while !self.pending.is_empty() {
                let agg = self.aggregate(self.pending.iter().cloned());
                self.store.push(agg);
                self.pending.pop_front();
            }
        } else if self.pending.len() == self.n {
            let agg = self.aggregate(self.pending.iter().cloned());
            self.store.push(agg);
            self.pending.pop_front();
        }
    }

    /// Drops partial windows, e.g. when a run stops mid-episode.
    pub fn clear_pending(&mut self) {
        self.pending.clear();
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        self.store.sample(batch_size, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReplayBuffer {
    Uniform(UniformBuffer),
    Prioritized(PrioritizedBuffer),
    NStep(NStepBuffer),
}

impl ReplayBuffer {
    pub fn new(kind: &BufferKind, capacity: usize, gamma: f64) -> Self {
        match *kind {
            BufferKind::Uniform => ReplayBuffer::Uniform(UniformBuffer::new(capacity)),
            BufferKind::Prioritized {
                alpha,
                beta_start,
                beta_end,
                beta_anneal_samples,
            } => ReplayBuffer::Prioritized(PrioritizedBuffer::new(
                capacity,
                alpha,
                beta_start,
                beta_end,
                beta_anneal_samples,
            )),
            BufferKind::NStep { n } => ReplayBuffer::NStep(NStepBuffer::new(capacity, n, gamma)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ReplayBuffer::Uniform(b) => b.len(),
            ReplayBuffer::Prioritized(b) => b.len(),
            ReplayBuffer::NStep(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, t: Transition) {
        match self {
            ReplayBuffer::Uniform(b) => {
                b.push(t);
            }
            ReplayBuffer::Prioritized(b) => {
                b.push(t);
            }
            ReplayBuffer::NStep(b) => b.push(t),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        match self {
            ReplayBuffer::Uniform(b) => b.sample(batch_size, rng),
            ReplayBuffer::Prioritized(b) => b.sample(batch_size, rng),
            ReplayBuffer::NStep(b) => b.sample(batch_size, rng),
        }
    }

    /// No-op unless prioritized.
    pub fn update_priorities(&mut self, slots: &[usize], td_errors: &[f64]) {
        if let ReplayBuffer::Prioritized(b) = self {
            b.update_priorities(slots, td_errors);
        }
    }
}
