//! Tabular Q-learning baseline over (current, destination, action).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const QRLSN_VERSION: u32 = 1;

/// K x K x K action-value table with epsilon-greedy masked exploration.
#[derive(Debug, Clone)]
pub struct QrlsnAgent {
    k: usize,
    q: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct QrlsnFile {
    version: u32,
    k: usize,
    q: Vec<f64>,
}

impl QrlsnAgent {
    pub fn new(k: usize) -> Self {
        QrlsnAgent {
            k,
            q: vec![0.0; k * k * k],
            alpha: 0.1,
            gamma: 0.95,
        }
    }

    fn idx(&self, current: usize, dst: usize, action: usize) -> usize {
        (current * self.k + dst) * self.k + action
    }

    pub fn q_value(&self, current: usize, dst: usize, action: usize) -> f64 {
        self.q[self.idx(current, dst, action)]
    }

    pub fn set_q(&mut self, current: usize, dst: usize, action: usize, v: f64) {
        let i = self.idx(current, dst, action);
        self.q[i] = v;
    }

    /// Greedy admitted action; ties break to the smallest action id.
    pub fn greedy(&self, current: usize, dst: usize, mask: &[bool]) -> Result<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (a, &admitted) in mask.iter().enumerate() {
            if !admitted {
                continue;
            }
            let v = self.q_value(current, dst, a);
            if best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, a));
            }
        }
        best.map(|(_, a)| a).ok_or(Error::EmptyMask)
    }

    /// Epsilon-greedy over admitted actions; disallowed actions are never
    /// explored.
    pub fn act(
        &self,
        current: usize,
        dst: usize,
        mask: &[bool],
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let admitted: Vec<usize> = (0..self.k).filter(|&a| mask[a]).collect();
        if admitted.is_empty() {
            return Err(Error::EmptyMask);
        }
        if rng.gen::<f64>() < epsilon {
            Ok(admitted[rng.gen_range(0..admitted.len())])
        } else {
            self.greedy(current, dst, mask)
        }
    }

    /// One Bellman backup. `next_mask` restricts the bootstrap max to the
    /// actions admissible at the next state; terminal transitions use the
    /// raw reward.
    pub fn learn(
        &mut self,
        current: usize,
        dst: usize,
        action: usize,
        reward: f64,
        next_current: usize,
        next_mask: Option<&[bool]>,
        done: bool,
    ) {
        let bootstrap = if done {
            0.0
        } else {
            match next_mask {
                Some(mask) => (0..self.k)
                    .filter(|&a| mask[a])
                    .map(|a| self.q_value(next_current, dst, a))
                    .fold(f64::NEG_INFINITY, f64::max),
                None => 0.0,
            }
        };
        // An all-false next mask leaves no admitted action to bootstrap on.
        let bootstrap = if bootstrap.is_finite() { bootstrap } else { 0.0 };
        let target = reward + self.gamma * bootstrap;
        let i = self.idx(current, dst, action);
        self.q[i] += self.alpha * (target - self.q[i]);
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = QrlsnFile {
            version: QRLSN_VERSION,
            k: self.k,
            q: self.q.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, k: usize) -> Result<Self> {
        let file: QrlsnFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.version != QRLSN_VERSION {
            return Err(Error::BadCheckpoint("qrlsn version".into()));
        }
        if file.k != k || file.q.len() != k * k * k {
            return Err(Error::BadCheckpoint(format!(
                "qrlsn table built for k={}, expected {}",
                file.k, k
            )));
        }
        Ok(QrlsnAgent {
            k,
            q: file.q,
            ..QrlsnAgent::new(k)
        })
    }
}
