use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::AgentObs;
use crate::env::ActionCommand;
use crate::error::{Error, Result};
use crate::pointcloud::Vec2;

/// Action in whichever representation the agent uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    /// Contact location on the observed object plus motion parameters.
    Contact(ActionCommand),
    /// Raw location in `[-1, 1]²` (mapped into the object bounding box) plus motion.
    Regress { location: Vec2, motion: Vec2 },
    /// Gripper delta motion from its previous position.
    Delta(Vec2),
}

impl AgentAction {
    /// Continuous part as a flat vector, in network order.
    pub fn continuous(&self) -> Vec<f64> {
        match *self {
            AgentAction::Contact(a) => vec![a.motion_params.x, a.motion_params.y],
            AgentAction::Regress { location, motion } => vec![location.x, location.y, motion.x, motion.y],
            AgentAction::Delta(m) => vec![m.x, m.y],
        }
    }

    pub fn contact_index(&self) -> Option<usize> {
        match self {
            AgentAction::Contact(a) => Some(a.contact_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Arc<AgentObs>,
    pub action: AgentAction,
    pub reward: f64,
    pub next_observation: Arc<AgentObs>,
    pub terminal: bool,
}

/// Bounded FIFO of transitions with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.len() < batch_size || batch_size == 0 {
            return Err(Error::BufferTooSmall {
                have: self.items.len(),
                need: batch_size.max(1),
            });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hacman::features::StateObs;
    use crate::pointcloud::{PointCloud, Seg};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(reward: f64) -> Transition {
        let cloud = PointCloud::new(vec![Vec2::new(reward, 0.0)], vec![Vec2::ZERO], vec![Seg::Object]).unwrap();
        let obs = Arc::new(AgentObs {
            cloud,
            state: StateObs { object: [0.0; 3], goal: [0.0; 3], gripper: Vec2::ZERO },
        });
        Transition {
            observation: obs.clone(),
            action: AgentAction::Contact(ActionCommand { contact_index: 0, motion_params: Vec2::new(0.5, -0.5) }),
            reward,
            next_observation: obs,
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2);
        for r in [-1.0, -2.0, -3.0] {
            buf.push(transition(r));
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(0).unwrap().reward, -2.0);
        assert_eq!(buf.get(1).unwrap().reward, -3.0);
    }

    #[test]
    fn sampled_transitions_are_identical() {
        let mut buf = ReplayBuffer::new(10);
        let t = transition(-0.5);
        buf.push(t.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = buf.sample(1, &mut rng).unwrap();
        assert_eq!(*s[0], t);
    }

    #[test]
    fn sampling_is_seeded_and_checks_size() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..50 {
            buf.push(transition(-(i as f64)));
        }
        let a = buf.sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_indices(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            buf.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(9)),
            Err(Error::BufferTooSmall { have: 50, need: 64 })
        ));
    }
}
