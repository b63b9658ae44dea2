use crate::error::Result;
use crate::mesh::{run_estimator, RunEstimate};
use crate::model::MarkovModel;
use crate::scalar::Scalar;
use crate::stream::run_seed;
use rayon::prelude::*;

/// Runs `runs` independent estimators in parallel. Run `i` uses seed
/// `run_seed(batch_seed, i)`; the output is in run order.
pub fn run_batch<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    n_particles: usize,
    batch_seed: u64,
    runs: usize,
    x: &M::State,
) -> Result<Vec<RunEstimate<T>>> {
    (0..runs as u64).into_par_iter().map(|i| run_estimator(model, n_particles, run_seed(batch_seed, i), x)).collect()
}
