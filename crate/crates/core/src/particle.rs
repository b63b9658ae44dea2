//! Interacting particle approximation of the criteria-weighted flow.
//!
//! Starting from `N` i.i.d. draws of `X_0`, each step applies
//!
//! * selection: particle `i` is kept with probability `epsilon_k G_k(xi^i)`,
//!   otherwise replaced by a multinomial draw from the cloud with weights
//!   proportional to `G_k`;
//! * mutation: every selected particle moves through `M_{k+1}`.
//!
//! The occupation measure of the cloud at time `k` approximates `eta_k`, and
//! the product of the per-step masses `eta^N_k(G_k)` is an unbiased estimate
//! of the normalizer `Z_n`. If all weights vanish the system is extinct; the
//! trajectory records the step and stops there.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::MarkovModel;
use crate::scalar::Scalar;
use crate::stream::{step_stream, Phase};

/// Whether a cloud is the output of a mutation or of a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudKind {
    Mutated,
    Selected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<S, T> {
    k: usize,
    kind: CloudKind,
    particles: Vec<S>,
    /// `G_k` at each particle; empty at the final time.
    criteria: Vec<T>,
}

impl<S: Clone, T: Scalar> ParticleCloud<S, T> {
    /// Cloud of `particles` at time `k`, caching `G_k` when `k < n`.
    pub fn new<M: MarkovModel<T, State = S>>(model: &M, k: usize, kind: CloudKind, particles: Vec<S>) -> Self {
        let criteria =
            if k < model.horizon() { particles.iter().map(|x| model.criterion(k, x)).collect() } else { Vec::new() };
        ParticleCloud { k, kind, particles, criteria }
    }

    pub fn time(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> CloudKind {
        self.kind
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Cached `G_k(xi^i)`.
    pub fn criteria(&self) -> &[T] {
        &self.criteria
    }

    /// `eta^N_k(G_k)`, or `None` at the final time.
    pub fn criteria_mass(&self) -> Option<T> {
        if self.criteria.is_empty() {
            None
        } else {
            Some(occupation_measure(self).integrate(|i, _| self.criteria[i]))
        }
    }

    /// Re-evaluates `G_k` and compares against the cache.
    pub fn criteria_cache_is_consistent<M: MarkovModel<T, State = S>>(&self, model: &M) -> bool {
        self.criteria.is_empty() && self.k == model.horizon()
            || self.particles.iter().zip(&self.criteria).all(|(x, &g)| model.criterion(self.k, x) == g)
    }
}

/// Empirical measure `(1/N) sum_i delta_{xi^i}` of a cloud.
#[derive(Debug, Clone, Copy)]
pub struct OccupationMeasure<'a, S, T> {
    cloud: &'a ParticleCloud<S, T>,
}

impl<S, T: Scalar> OccupationMeasure<'_, S, T> {
    /// `(1/N) sum_i f(i, xi^i)`, summed in particle order.
    pub fn integrate<F: FnMut(usize, &S) -> T>(&self, mut f: F) -> T {
        let n = self.cloud.particles.len();
        let total = self.cloud.particles.iter().enumerate().fold(T::zero(), |acc, (i, x)| acc + f(i, x));
        total / T::from_count(n)
    }

    pub fn size(&self) -> usize {
        self.cloud.particles.len()
    }
}

pub fn occupation_measure<S, T>(cloud: &ParticleCloud<S, T>) -> OccupationMeasure<'_, S, T> {
    OccupationMeasure { cloud }
}

/// `N` i.i.d. draws from `eta_0`.
pub fn init_particles<T: Scalar, M: MarkovModel<T>, R: Rng + ?Sized>(
    model: &M,
    n_particles: usize,
    rng: &mut R,
) -> Result<ParticleCloud<M::State, T>> {
    if n_particles == 0 {
        return Err(Error::Contract("particle count must be at least 1".into()));
    }
    let particles = (0..n_particles).map(|_| model.sample_initial(rng)).collect();
    Ok(ParticleCloud::new(model, 0, CloudKind::Mutated, particles))
}

/// Result of a selection step.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionOutcome<S, T> {
    Selected(ParticleCloud<S, T>),
    /// `sum_i G_k(xi^i) = 0`; the extinction time is `k`.
    Extinct {
        k: usize,
    },
}

/// Selection kernel `S_{k, eta^N_k}` applied particle by particle.
///
/// Draws are consumed in particle order: one uniform for the keep decision,
/// then one multinomial draw if the particle is not kept.
pub fn selection_step<T: Scalar, M: MarkovModel<T>, R: Rng + ?Sized>(
    model: &M,
    cloud: &ParticleCloud<M::State, T>,
    rng: &mut R,
) -> Result<SelectionOutcome<M::State, T>> {
    let k = cloud.k;
    if cloud.kind != CloudKind::Mutated || k >= model.horizon() {
        return Err(Error::Contract(format!(
            "selection needs a mutated cloud at k < n, got {:?} at k={k}",
            cloud.kind
        )));
    }
    let eps = model.epsilon(k);
    if eps < T::zero() || eps * model.criterion_bound(k) > T::one() + T::lit(1e-12) {
        return Err(Error::Contract(format!("epsilon_{k} = {eps} violates epsilon * ||G_{k}|| <= 1")));
    }
    let weights: Vec<f64> = cloud.criteria.iter().map(|g| g.as_f64()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok(SelectionOutcome::Extinct { k });
    }
    let multinomial = WeightedIndex::new(&weights)
        .map_err(|e| Error::ModelContract { k, detail: format!("selection weights: {e}") })?;

    let n = cloud.particles.len();
    let mut particles = Vec::with_capacity(n);
    let mut criteria = Vec::with_capacity(n);
    for i in 0..n {
        let keep_probability = (eps * cloud.criteria[i]).as_f64();
        let u: f64 = rng.random();
        let j = if u < keep_probability { i } else { multinomial.sample(rng) };
        particles.push(cloud.particles[j].clone());
        criteria.push(cloud.criteria[j]);
    }
    Ok(SelectionOutcome::Selected(ParticleCloud { k, kind: CloudKind::Selected, particles, criteria }))
}

/// Moves every selected particle independently through `M_{k+1}`.
pub fn mutation_step<T: Scalar, M: MarkovModel<T>, R: Rng + ?Sized>(
    model: &M,
    cloud: &ParticleCloud<M::State, T>,
    rng: &mut R,
) -> Result<ParticleCloud<M::State, T>> {
    let k = cloud.k;
    if cloud.kind != CloudKind::Selected || k >= model.horizon() {
        return Err(Error::Contract(format!(
            "mutation needs a selected cloud at k < n, got {:?} at k={k}",
            cloud.kind
        )));
    }
    let particles = cloud.particles.iter().map(|x| model.sample_next(k + 1, x, rng)).collect();
    Ok(ParticleCloud::new(model, k + 1, CloudKind::Mutated, particles))
}

/// One full run of the particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory<S, T> {
    /// Post-mutation clouds `xi_0 .. xi_n` (truncated at extinction).
    pub mutated: Vec<ParticleCloud<S, T>>,
    /// Post-selection clouds `xi^_0 .. xi^_{n-1}` (truncated at extinction).
    pub selected: Vec<ParticleCloud<S, T>>,
    /// First `k` with `eta^N_k(G_k) = 0`, if any.
    pub extinction: Option<usize>,
    /// `eta^N_k(G_k)` for each step reached.
    pub masses: Vec<T>,
    /// `prod_{k<n} eta^N_k(G_k)`; zero after extinction.
    pub normalizer: T,
    pub seed: u64,
    pub n_particles: usize,
}

impl<S, T> ParticleTrajectory<S, T> {
    pub fn is_extinct(&self) -> bool {
        self.extinction.is_some()
    }
}

/// Alternates selection and mutation from `k = 0` to `n`, with one random
/// stream per (step, phase) derived from `seed`.
pub fn run_particle_system<T: Scalar, M: MarkovModel<T>>(
    model: &M,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleTrajectory<M::State, T>> {
    let n = model.horizon();
    let initial = init_particles(model, n_particles, &mut step_stream(seed, 0, Phase::Init))?;
    let mut mutated = vec![initial];
    let mut selected = Vec::with_capacity(n);
    let mut masses = Vec::with_capacity(n);
    let mut extinction = None;
    for k in 0..n {
        let cloud = &mutated[k];
        masses.push(cloud.criteria_mass().expect("k < n"));
        let outcome = selection_step(model, cloud, &mut step_stream(seed, k, Phase::Selection))?;
        let chosen = match outcome {
            SelectionOutcome::Selected(c) => c,
            SelectionOutcome::Extinct { k } => {
                extinction = Some(k);
                break;
            }
        };
        let next = mutation_step(model, &chosen, &mut step_stream(seed, k + 1, Phase::Mutation))?;
        selected.push(chosen);
        mutated.push(next);
    }
    let normalizer = if extinction.is_some() { T::zero() } else { masses.iter().fold(T::one(), |acc, &m| acc * m) };
    Ok(ParticleTrajectory { mutated, selected, extinction, masses, normalizer, seed, n_particles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_chain, Ar1Criteria, Ar1Initial, Ar1Payoff, FiniteChain, GaussianAr1, Matrix};
    use crate::oracle::phi_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud_at(model: &FiniteChain<f64>, k: usize, states: &[usize]) -> ParticleCloud<usize, f64> {
        ParticleCloud::new(model, k, CloudKind::Mutated, states.to_vec())
    }

    #[test]
    fn point_mass_initial_cloud() {
        let m = toy_chain::<f64>();
        let cloud = init_particles(&m, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(cloud.particles(), &[0, 0, 0, 0]);
        assert_eq!(cloud.kind(), CloudKind::Mutated);
        let single = init_particles(&m, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(single.len(), 1);
        assert!(init_particles(&m, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn normal_initial_cloud_is_centred() {
        let m = GaussianAr1::new(
            2,
            0.5,
            1.0,
            Ar1Initial::Normal { mean: 0.0, std: 1.0 },
            Ar1Payoff::Constant(0.0),
            Ar1Criteria::Constant(1.0),
        )
        .unwrap();
        let cloud = init_particles(&m, 100_000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mean: f64 = occupation_measure(&cloud).integrate(|_, x| *x);
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn full_keep_skips_selection() {
        let mut m = toy_chain::<f64>().with_constant_criteria(0.5);
        m.set_epsilon(2.0);
        let cloud = cloud_at(&m, 0, &[0, 1, 1, 0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match selection_step(&m, &cloud, &mut rng).unwrap() {
            SelectionOutcome::Selected(s) => assert_eq!(s.particles(), cloud.particles()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resampling_favours_heavy_particles() {
        let m = toy_chain::<f64>();
        let cloud = cloud_at(&m, 0, &[0, 0, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 10_000;
        let mut ones = 0usize;
        for _ in 0..reps {
            if let SelectionOutcome::Selected(s) = selection_step(&m, &cloud, &mut rng).unwrap() {
                ones += s.particles().iter().filter(|&&x| x == 1).count();
            }
        }
        let frac = ones as f64 / (4 * reps) as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.02, "{frac}");
    }

    #[test]
    fn zero_weights_signal_extinction() {
        let m = toy_chain::<f64>().with_constant_criteria(0.0);
        let cloud = cloud_at(&m, 1, &[0, 1, 1]);
        let out = selection_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, SelectionOutcome::Extinct { k: 1 });
    }

    #[test]
    fn invalid_epsilon_is_a_contract_error() {
        let mut m = toy_chain::<f64>();
        m.set_epsilon(3.0);
        let cloud = cloud_at(&m, 0, &[0, 1]);
        assert!(matches!(selection_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn mutation_from_origin_is_fair_coin() {
        let m = toy_chain::<f64>();
        let cloud = ParticleCloud::new(&m, 0, CloudKind::Selected, vec![0usize; 10_000]);
        let next = mutation_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(next.time(), 1);
        let frac = occupation_measure(&next).integrate(|_, &x| x as f64);
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn identity_chain_does_not_move() {
        let m =
            FiniteChain::homogeneous(2, vec![0.5, 0.5], Matrix::identity(2), vec![vec![0.0, 0.0]; 3], vec![1.0, 1.0])
                .unwrap();
        let cloud = ParticleCloud::new(&m, 0, CloudKind::Selected, vec![0usize, 1, 1, 0]);
        let next = mutation_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(next.particles(), cloud.particles());
    }

    #[test]
    fn mutation_is_reproducible() {
        let m = toy_chain::<f64>();
        let cloud = ParticleCloud::new(&m, 0, CloudKind::Selected, vec![0usize, 1, 0, 1, 1]);
        let a = mutation_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let b = mutation_step(&m, &cloud, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_cloud_kind_is_rejected() {
        let m = toy_chain::<f64>();
        let mutated = cloud_at(&m, 0, &[0, 1]);
        assert!(mutation_step(&m, &mutated, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn occupation_measure_averages() {
        let m = toy_chain::<f64>();
        let cloud = cloud_at(&m, 0, &[0, 0, 1, 1]);
        let eta = occupation_measure(&cloud);
        assert_eq!(eta.integrate(|_, x| m.criterion(0, x)), 0.75);
        assert_eq!(eta.integrate(|_, _| 1.0), 1.0);
        assert_eq!(eta.integrate(|_, &x| if x == 1 { 1.0 } else { 0.0 }), 0.5);
        assert_eq!(cloud.criteria_mass(), Some(0.75));
        assert!(cloud.criteria_cache_is_consistent(&m));
    }

    #[test]
    fn trajectories_are_reproducible() {
        let m = toy_chain::<f64>();
        let a = run_particle_system(&m, 500, 99).unwrap();
        let b = run_particle_system(&m, 500, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mutated.len(), 3);
        assert_eq!(a.selected.len(), 2);
        assert!(a.extinction.is_none());
        let c = run_particle_system(&m, 500, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_criteria_never_go_extinct() {
        let m = toy_chain::<f64>().with_constant_criteria(1.0);
        for seed in 0..20 {
            let t = run_particle_system(&m, 50, seed).unwrap();
            assert!(t.extinction.is_none());
            assert_eq!(t.normalizer, 1.0);
        }
    }

    #[test]
    fn zero_initial_criteria_go_extinct_at_zero() {
        let mut parts = toy_chain::<f64>().into_parts();
        parts.criteria[0] = vec![0.0, 0.0];
        let m = FiniteChain::from_parts(parts).unwrap();
        for seed in 0..20 {
            let t = run_particle_system(&m, 50, seed).unwrap();
            assert_eq!(t.extinction, Some(0));
            assert_eq!(t.normalizer, 0.0);
            assert_eq!(t.mutated.len(), 1);
            assert!(t.selected.is_empty());
        }
    }

    #[test]
    fn one_step_conditional_mean_matches_phi() {
        let m = toy_chain::<f64>();
        let cloud = cloud_at(&m, 1, &[0, 0, 1, 1]);
        let eta: Vec<f64> = vec![0.5, 0.5];
        let exact = phi_step(&m, 2, &eta).unwrap()[1];
        let reps = 10_000;
        let mut sel = ChaCha8Rng::seed_from_u64(31);
        let mut mutation = ChaCha8Rng::seed_from_u64(32);
        let samples: Vec<f64> = (0..reps)
            .map(|_| match selection_step(&m, &cloud, &mut sel).unwrap() {
                SelectionOutcome::Selected(s) => {
                    let next = mutation_step(&m, &s, &mut mutation).unwrap();
                    occupation_measure(&next).integrate(|_, &x| x as f64)
                }
                SelectionOutcome::Extinct { .. } => unreachable!(),
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / reps as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - exact).abs() <= 4.0 * se, "mean {mean} exact {exact} se {se}");
    }
}
