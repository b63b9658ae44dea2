//! Stochastic-mesh backward recursion.
//!
//! With `eta^N_k` the occupation measure of the post-mutation cloud at time
//! `k`, the envelope estimate is
//!
//! ```text
//! v^_n     = f_n
//! v^_k(x)  = f_k(x) max (1/N) sum_j w_k(x, xi^j_{k+1}) v^_{k+1}(xi^j_{k+1})
//! w_k(x,y) = G_k(x) H_{k+1}(x, y) eta^N_k(G_k) / eta^N_k(G_k H_{k+1}(., y))
//! ```
//!
//! `w_k(x, .)` is the density of `Q_{k+1}(x, .)` against `Phi_{k+1}(eta^N_k)`,
//! the conditional law of the next cloud. The recursion is defined for every
//! `x`, not only at mesh points, so [`evaluate_envelope`] works off-mesh.
//!
//! Coincident particles (always the case on finite spaces) are merged into
//! weighted atoms before the O(N^2) loop. The result is the same empirical
//! measure, so the estimator is unchanged; only the cost drops to
//! O(|atoms_k| |atoms_{k+1}|).

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::MarkovModel;
use crate::particle::{occupation_measure, run_particle_system, ParticleCloud, ParticleTrajectory};
use crate::scalar::Scalar;

/// Radon-Nikodym mesh weight `w_k(x, y)` against the cloud at time `k`.
pub fn mesh_weight<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    k: usize,
    cloud: &ParticleCloud<M::State, T>,
    x: &M::State,
    y: &M::State,
) -> Result<T> {
    let eta = occupation_measure(cloud);
    let mass = cloud.criteria_mass().ok_or_else(|| Error::Contract(format!("no criteria at k={k}")))?;
    if !(mass > T::zero()) {
        return Err(Error::Extinct { k });
    }
    let g = model.criterion(k, x);
    if g == T::zero() {
        return Ok(T::zero());
    }
    let denom = eta.integrate(|i, xi| cloud.criteria()[i] * model.density(k + 1, xi, y));
    let numer = g * model.density(k + 1, x, y) * mass;
    assert!(denom > T::zero() || numer == T::zero(), "mesh denominator vanished with positive numerator");
    Ok(if numer == T::zero() { T::zero() } else { numer / denom })
}

/// `Q^_{k+1}(values)(x) = (1/N) sum_j w_k(x, xi^j_{k+1}) values[j]`.
///
/// Evaluated particle by particle without any merging; O(N^2).
pub fn qhat_apply<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    k: usize,
    cloud: &ParticleCloud<M::State, T>,
    next: &ParticleCloud<M::State, T>,
    values: &[T],
    x: &M::State,
) -> Result<T> {
    if values.len() != next.len() {
        return Err(Error::Contract(format!("{} values for a cloud of {}", values.len(), next.len())));
    }
    if next.time() != k + 1 || cloud.time() != k {
        return Err(Error::Contract("clouds are not at consecutive times k, k+1".into()));
    }
    let eta_next = occupation_measure(next);
    let mut failure = None;
    let total = eta_next.integrate(|j, y| match mesh_weight(model, k, cloud, x, y) {
        Ok(w) => w * values[j],
        Err(e) => {
            failure.get_or_insert(e);
            T::zero()
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// Distinct mesh points of one cloud with their empirical masses.
#[derive(Debug, Clone, PartialEq)]
struct MeshLevel<S, T> {
    atoms: Vec<S>,
    mass: Vec<T>,
    /// `G_k` at each atom, empty at `k = n`.
    criteria: Vec<T>,
    /// Atom index of each particle.
    particle_atom: Vec<usize>,
}

impl<S: Clone, T: Scalar> MeshLevel<S, T> {
    fn build<M: MarkovModel<T, State = S>>(model: &M, cloud: &ParticleCloud<S, T>) -> Self {
        let k = cloud.time();
        let n = cloud.len();
        let mut atoms = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut criteria = Vec::new();
        let mut particle_atom = Vec::with_capacity(n);
        let mut index: HashMap<usize, usize> = HashMap::new();
        for (i, x) in cloud.particles().iter().enumerate() {
            let slot = match model.atom(k, x) {
                Some(key) => *index.entry(key).or_insert(atoms.len()),
                None => atoms.len(),
            };
            if slot == atoms.len() {
                atoms.push(x.clone());
                counts.push(0);
                if !cloud.criteria().is_empty() {
                    criteria.push(cloud.criteria()[i]);
                }
            }
            counts[slot] += 1;
            particle_atom.push(slot);
        }
        let total = T::from_count(n);
        let mass = counts.into_iter().map(|c| T::from_count(c) / total).collect();
        MeshLevel { atoms, mass, criteria, particle_atom }
    }
}

/// Envelope estimates at every mesh point of one particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshEstimate<S, T> {
    horizon: usize,
    levels: Vec<MeshLevel<S, T>>,
    /// `values[k][a]` is `v^_k` at atom `a` of level `k`.
    values: Vec<Vec<T>>,
    /// `eta^N_k(G_k)`, `k < n`.
    criteria_mass: Vec<T>,
    /// `denominators[k][b] = eta^N_k(G_k H_{k+1}(., atom b of level k+1))`.
    denominators: Vec<Vec<T>>,
    extinction: Option<usize>,
    seed: u64,
    n_particles: usize,
}

impl<S: Clone + Send + Sync, T: Scalar> MeshEstimate<S, T> {
    /// False when the particle system went extinct; such estimates hold no values.
    pub fn is_valid(&self) -> bool {
        self.extinction.is_none()
    }

    pub fn extinction(&self) -> Option<usize> {
        self.extinction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `v^_k(xi^i_k)` for each particle `i`, or `None` if invalid.
    pub fn values_at_particles(&self, k: usize) -> Option<Vec<T>> {
        let level = self.levels.get(k)?;
        Some(level.particle_atom.iter().map(|&a| self.values[k][a]).collect())
    }

    /// Mesh points of level `k`, one per particle.
    pub fn particles(&self, k: usize) -> Option<Vec<S>> {
        let level = self.levels.get(k)?;
        Some(level.particle_atom.iter().map(|&a| level.atoms[a].clone()).collect())
    }

    /// `eta^N_0(v^_0)`: the time-0 estimate averaged over the initial cloud.
    pub fn initial_average(&self) -> Option<T> {
        let level = self.levels.first()?;
        Some(level.mass.iter().zip(&self.values[0]).fold(T::zero(), |acc, (&m, &v)| acc + m * v))
    }

    /// `(1/N) sum_j w_k(x, xi^j_{k+1}) v^_{k+1}(xi^j_{k+1})`, `k < n`.
    fn continuation<M: MarkovModel<T, State = S>>(&self, model: &M, k: usize, x: &S) -> T {
        let g = model.criterion(k, x);
        if g == T::zero() {
            return T::zero();
        }
        let next = &self.levels[k + 1];
        let scale = g * self.criteria_mass[k];
        let denominators = &self.denominators[k];
        let values = &self.values[k + 1];
        next.atoms.iter().enumerate().fold(T::zero(), |acc, (b, y)| {
            let numer = scale * model.density(k + 1, x, y);
            let d = denominators[b];
            assert!(d > T::zero() || numer == T::zero(), "mesh denominator vanished with positive numerator");
            if numer == T::zero() {
                acc
            } else {
                acc + next.mass[b] * (numer / d) * values[b]
            }
        })
    }
}

/// Backward recursion over the mesh of `trajectory`.
///
/// Extinct trajectories produce an invalid estimate with no value arrays.
pub fn backward_mesh<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    trajectory: &ParticleTrajectory<M::State, T>,
) -> MeshEstimate<M::State, T> {
    let n = model.horizon();
    let mut estimate = MeshEstimate {
        horizon: n,
        levels: Vec::new(),
        values: Vec::new(),
        criteria_mass: Vec::new(),
        denominators: Vec::new(),
        extinction: trajectory.extinction,
        seed: trajectory.seed,
        n_particles: trajectory.n_particles,
    };
    if trajectory.extinction.is_some() {
        return estimate;
    }
    estimate.levels = trajectory.mutated.iter().map(|c| MeshLevel::build(model, c)).collect();
    estimate.criteria_mass = trajectory.masses.clone();
    estimate.denominators = (0..n)
        .map(|k| {
            let here = &estimate.levels[k];
            estimate.levels[k + 1]
                .atoms
                .par_iter()
                .map(|y| {
                    here.atoms.iter().enumerate().fold(T::zero(), |acc, (a, x)| {
                        acc + here.mass[a] * here.criteria[a] * model.density(k + 1, x, y)
                    })
                })
                .collect()
        })
        .collect();

    estimate.values = vec![Vec::new(); n + 1];
    estimate.values[n] = estimate.levels[n].atoms.iter().map(|x| model.payoff(n, x)).collect();
    for k in (0..n).rev() {
        let row: Vec<T> = estimate.levels[k]
            .atoms
            .par_iter()
            .map(|x| model.payoff(k, x).max(estimate.continuation(model, k, x)))
            .collect();
        estimate.values[k] = row;
    }
    estimate
}

/// `v^_k(x)` at an arbitrary state, reusing the stored mesh.
pub fn evaluate_envelope<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    estimate: &MeshEstimate<M::State, T>,
    k: usize,
    x: &M::State,
) -> Result<T> {
    if let Some(tau) = estimate.extinction {
        return Err(Error::Extinct { k: tau });
    }
    if k > estimate.horizon {
        return Err(Error::Contract(format!("time {k} beyond horizon {}", estimate.horizon)));
    }
    if k == estimate.horizon {
        return Ok(model.payoff(k, x));
    }
    Ok(model.payoff(k, x).max(estimate.continuation(model, k, x)))
}

/// Outcome of one particle run followed by the mesh recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunEstimate<T> {
    pub n_particles: usize,
    pub seed: u64,
    /// `v^_0(x)` at the query point; `None` if the run went extinct.
    pub point: Option<T>,
    /// `eta^N_0(v^_0)`; `None` if extinct.
    pub initial_average: Option<T>,
    pub extinction: Option<usize>,
    /// Normalizer estimate `prod eta^N_k(G_k)`.
    pub normalizer: T,
}

impl<T: Scalar> RunEstimate<T> {
    /// `v^_0(x) 1_{no extinction}`: extinct runs count as zero.
    pub fn reported(&self) -> T {
        self.point.unwrap_or_else(T::zero)
    }
}

/// Simulates, builds the mesh and evaluates `v^_0` at `x`.
pub fn run_estimator<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    n_particles: usize,
    seed: u64,
    x: &M::State,
) -> Result<RunEstimate<T>> {
    let trajectory = run_particle_system(model, n_particles, seed)?;
    let estimate = backward_mesh(model, &trajectory);
    let point = if estimate.is_valid() { Some(evaluate_envelope(model, &estimate, 0, x)?) } else { None };
    Ok(RunEstimate {
        n_particles,
        seed,
        point,
        initial_average: estimate.initial_average(),
        extinction: trajectory.extinction,
        normalizer: trajectory.normalizer,
    })
}
