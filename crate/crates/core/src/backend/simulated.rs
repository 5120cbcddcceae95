use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, ChatBackend, ModelRequest, ModelResponse};

/// Worker stand-in that finishes each subtask in one turn, succeeding with
/// probability `p`. One draw per call from a seeded stream.
#[derive(Debug)]
pub struct BernoulliWorkerBackend {
    p: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl BernoulliWorkerBackend {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p: p.clamp(0.0, 1.0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl ChatBackend for BernoulliWorkerBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let draw: f64 = self.rng.lock().expect("rng poisoned").random();
        Ok(if draw < self.p {
            ModelResponse::text("simulated subtask result")
        } else {
            ModelResponse::text("TASK_FAILED: simulated failure")
        })
    }

    fn describe(&self) -> String {
        format!("bernoulli-worker(p={})", self.p)
    }
}
