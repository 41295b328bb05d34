use std::sync::Arc;

use super::sim::{StepOutcome, TactilePivot, World};
use super::state::{Mode, Observation};
use crate::error::Result;
use crate::nn::Matrix;

/// A batch of independent environments. Each environment owns its RNG
/// stream, so the worker layout never changes results.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<TactilePivot>,
    pub workers: usize,
}

impl VecEnv {
    pub fn new(world: Arc<World>, n: usize, seed: u64, mode: Mode, workers: usize) -> Self {
        let envs = (0..n).map(|i| TactilePivot::new(Arc::clone(&world), i, seed, mode)).collect();
        VecEnv { envs, workers: workers.max(1) }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn reset_all(&mut self) -> Vec<Observation> {
        self.envs.iter_mut().map(TactilePivot::reset).collect()
    }

    /// Steps every environment with the matching action row.
    pub fn step(&mut self, actions: &Matrix) -> Vec<Result<StepOutcome>> {
        assert_eq!(actions.rows, self.envs.len(), "one action row per environment");
        if self.workers <= 1 || self.envs.len() < 2 {
            return self.envs.iter_mut().enumerate().map(|(i, e)| e.step(actions.row(i))).collect();
        }
        let chunk = self.envs.len().div_ceil(self.workers);
        let mut out: Vec<Vec<Result<StepOutcome>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .envs
                .chunks_mut(chunk)
                .enumerate()
                .map(|(c, envs)| {
                    scope.spawn(move || {
                        envs.iter_mut()
                            .enumerate()
                            .map(|(k, e)| e.step(actions.row(c * chunk + k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            out = handles.into_iter().map(|h| h.join().expect("environment worker panicked")).collect();
        });
        out.into_iter().flatten().collect()
    }
}
