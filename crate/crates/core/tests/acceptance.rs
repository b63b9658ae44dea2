//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use snell_mesh::analysis::{
    bias_check, concentration_check, empirical_error_stats, khintchine_constant, random_perturbation,
    robustness_bound_check, run_batch, theoretical_lp_bound,
};
use snell_mesh::mesh::{backward_mesh, evaluate_envelope};
use snell_mesh::model::{
    build_gaussian_ar1, toy_chain, Ar1Criteria, Ar1Payoff, FiniteChain, FiniteChainParts, MarkovModel, Matrix,
    RandomChainSpec,
};
use snell_mesh::oracle::{
    check_path_equivalence, compute_eta_flow, phi_step, snell_standard, snell_with_criteria, verify_optimality,
    EnumerationCaps,
};
use snell_mesh::particle::{
    mutation_step, run_particle_system, selection_step, CloudKind, ParticleCloud, SelectionOutcome,
};
use snell_mesh::stream::{step_stream, Phase};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn random_models(count: usize, seed: u64) -> Vec<FiniteChain<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| FiniteChain::random(&RandomChainSpec::default(), &mut rng)).collect()
}

fn oracle_identities() -> Outcome {
    let caps = EnumerationCaps::default();
    let mut worst_path = 0.0f64;
    let mut worst_gap = 0.0f64;
    for m in random_models(100, 0xacce_0001) {
        worst_path = worst_path.max(check_path_equivalence(&m, &caps).map_err(|e| e.to_string())?);
        worst_gap = worst_gap.max(verify_optimality(&m, &caps).map_err(|e| e.to_string())?.gap);
    }
    ensure(worst_path <= 1e-12, || format!("path discrepancy {worst_path:e}"))?;
    ensure(worst_gap <= 1e-10, || format!("optimality gap {worst_gap:e}"))?;
    Ok(format!("max path discrepancy {worst_path:.2e}, max optimality gap {worst_gap:.2e}"))
}

/// Mesh estimator with constant criteria written out directly: all particles
/// survive selection, and the weight is `c H(x, y) / ((1/N) sum_i H(xi^i, y))`.
fn reference_mesh<M: MarkovModel<f64>>(model: &M, c: f64, n_particles: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = model.horizon();
    let mut init = step_stream(seed, 0, Phase::Init);
    let mut clouds: Vec<Vec<M::State>> = vec![(0..n_particles).map(|_| model.sample_initial(&mut init)).collect()];
    for k in 0..n {
        let mut rng = step_stream(seed, k + 1, Phase::Mutation);
        let next = clouds[k].iter().map(|x| model.sample_next(k + 1, x, &mut rng)).collect();
        clouds.push(next);
    }
    let mut values = vec![Vec::new(); n + 1];
    values[n] = clouds[n].iter().map(|x| model.payoff(n, x)).collect();
    for k in (0..n).rev() {
        let denominators: Vec<f64> = clouds[k + 1]
            .iter()
            .map(|y| clouds[k].iter().map(|x| model.density(k + 1, x, y)).sum::<f64>() / n_particles as f64)
            .collect();
        values[k] = clouds[k]
            .iter()
            .map(|x| {
                let cont = clouds[k + 1]
                    .iter()
                    .zip(&denominators)
                    .zip(&values[k + 1])
                    .map(|((y, d), v)| c * model.density(k + 1, x, y) / d * v)
                    .sum::<f64>()
                    / n_particles as f64;
                model.payoff(k, x).max(cont)
            })
            .collect();
    }
    values
}

fn compare_with_reference<M: MarkovModel<f64>>(
    model: &M,
    c: f64,
    n_particles: usize,
    seeds: &[u64],
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for &seed in seeds {
        let expected = reference_mesh(model, c, n_particles, seed);
        let t = run_particle_system(model, n_particles, seed).map_err(|e| e.to_string())?;
        let est = backward_mesh(model, &t);
        ensure(est.is_valid(), || "constant criteria went extinct".into())?;
        for (k, row) in expected.iter().enumerate() {
            let got = est.values_at_particles(k).ok_or("missing level")?;
            for (a, b) in got.iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
            for (x, b) in est.particles(k).ok_or("missing level")?.iter().zip(row) {
                let e = evaluate_envelope(model, &est, k, x).map_err(|e| e.to_string())?;
                worst = worst.max((e - b).abs());
            }
        }
    }
    Ok(worst)
}

fn equivalence_reduction() -> Outcome {
    for m in random_models(50, 0xacce_0002).into_iter().chain([toy_chain()]) {
        let unit = m.with_constant_criteria(1.0);
        ensure(snell_with_criteria(&unit) == snell_standard(&unit), || "G = 1 envelopes differ".into())?;
    }
    let seeds: Vec<u64> = (0..5).map(|i| 0xb6 + i).collect();
    let c = 0.5;
    let mut toy = toy_chain::<f64>().with_constant_criteria(c);
    toy.set_epsilon(1.0 / c);
    let d_toy = compare_with_reference(&toy, c, 200, &seeds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0003);
    let mut d_random = 0.0f64;
    for _ in 0..5 {
        let base =
            FiniteChain::random(&RandomChainSpec { max_horizon: 4, max_states: 4, ..Default::default() }, &mut rng);
        let c = 0.3 + 0.7 * rng.random::<f64>();
        let mut m = base.with_constant_criteria(c);
        m.set_epsilon(1.0 / c);
        d_random = d_random.max(compare_with_reference(&m, c, 100, &seeds)?);
    }
    let g = (-0.05f64).exp();
    let mut ar1 = build_gaussian_ar1(3, 0.5, 1.0, Ar1Payoff::Put { strike: 1.0 }, Ar1Criteria::Discount { rate: 0.05 })
        .map_err(|e| e.to_string())?;
    ar1.set_epsilon(1.0 / g);
    let d_ar1 = compare_with_reference(&ar1, g, 150, &seeds)?;
    let worst = d_toy.max(d_random).max(d_ar1);
    ensure(worst <= 1e-12, || format!("reference mismatch {worst:e}"))?;
    Ok(format!("G = 1 identical; reference mismatch toy {d_toy:.1e}, random {d_random:.1e}, ar1 {d_ar1:.1e}"))
}

fn one_step_unbiasedness() -> Outcome {
    let base = toy_chain::<f64>();
    let frozen = [0usize, 0, 1, 1];
    let eta_n = [0.5, 0.5];
    let targets: [(&str, Vec<f64>); 3] =
        [("1_{1}", vec![0.0, 1.0]), ("G_1", base.criteria_vector(1).to_vec()), ("f_2", base.payoff_vector(2).to_vec())];
    let exact = phi_step(&base, 2, &eta_n).map_err(|e| e.to_string())?;
    let mut worst_z = 0.0f64;
    for (ie, &eps) in [0.0, 0.5, 1.0].iter().enumerate() {
        let mut m = base.clone();
        m.set_epsilon(eps);
        let cloud = ParticleCloud::new(&m, 1, CloudKind::Mutated, frozen.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(0x1e3 + ie as u64);
        let mut samples = vec![Vec::with_capacity(10_000); targets.len()];
        for _ in 0..10_000 {
            let selected = match selection_step(&m, &cloud, &mut rng).map_err(|e| e.to_string())? {
                SelectionOutcome::Selected(c) => c,
                SelectionOutcome::Extinct { .. } => return Err("frozen cloud went extinct".into()),
            };
            let next = mutation_step(&m, &selected, &mut rng).map_err(|e| e.to_string())?;
            for (s, (_, f)) in samples.iter_mut().zip(&targets) {
                s.push(next.particles().iter().map(|&y| f[y]).sum::<f64>() / frozen.len() as f64);
            }
        }
        for (s, (name, f)) in samples.iter().zip(&targets) {
            let want: f64 = exact.iter().zip(f).map(|(a, b)| a * b).sum();
            let (got, se) = mean_se(s);
            let z = (got - want).abs() / se;
            worst_z = worst_z.max(z);
            ensure(z <= 4.0, || format!("eps={eps} f={name}: mean {got:.5} vs {want:.5} ({z:.2} SE)"))?;
        }
    }
    Ok(format!("9 cases, max deviation {worst_z:.2} SE"))
}

fn normalizer_unbiasedness() -> Outcome {
    let m = toy_chain::<f64>();
    let z = compute_eta_flow(&m).map_err(|e| e.to_string())?.normalizer;
    let runs = run_batch(&m, 10_000, 0xacce_0004, 200, &0).map_err(|e| e.to_string())?;
    let zs: Vec<f64> = runs.iter().map(|r| r.normalizer).collect();
    let (mean, se) = mean_se(&zs);
    ensure((mean - z).abs() <= 3.0 * se, || format!("mean {mean:.6} vs {z} (SE {se:.2e})"))?;
    Ok(format!("mean Z^ {mean:.6} vs {z} (SE {se:.2e})"))
}

fn convergence_rate() -> Outcome {
    let m = toy_chain::<f64>();
    let values = snell_with_criteria(&m);
    let oracle = values[0][0];
    let mut runs = Vec::new();
    for (i, &n) in [250usize, 1000, 4000, 16000].iter().enumerate() {
        runs.extend(run_batch(&m, n, 0xacce_0005 + i as u64, 200, &0).map_err(|e| e.to_string())?);
    }
    let report = empirical_error_stats(&runs, oracle, &[2], 30).map_err(|e| e.to_string())?;
    let fit = report.slope.ok_or("slope undefined")?;
    let mut detail = format!("slope {:.3} [{:.3}, {:.3}]", fit.slope, fit.lo, fit.hi);
    for row in &report.rows {
        let bound = theoretical_lp_bound(&m, &values, 2, row.n_particles, 0, 0).map_err(|e| e.to_string())?.bound;
        ensure(bound >= row.l2, || format!("N={}: bound {bound:.4} < L2 {:.4}", row.n_particles, row.l2))?;
        detail += &format!("; N={} L2 {:.4} <= bound {:.4}", row.n_particles, row.l2, bound);
    }
    ensure((-0.65..=-0.35).contains(&fit.slope), || format!("slope {:.3} outside [-0.65, -0.35]", fit.slope))?;
    Ok(detail)
}

fn high_bias() -> Outcome {
    let m = toy_chain::<f64>();
    let oracle = snell_with_criteria(&m)[0][0];
    let runs = run_batch(&m, 250, 0xacce_0006, 500, &0).map_err(|e| e.to_string())?;
    let values: Vec<f64> = runs.iter().map(|r| r.reported()).collect();
    let report = bias_check(&values, oracle, 2.0, 100).map_err(|e| e.to_string())?;
    ensure(report.pass, || format!("mean {:.5} below {:.5}", report.mean, report.threshold))?;
    Ok(format!("mean {:.5} >= {:.5} (oracle {oracle}, SE {:.2e})", report.mean, report.threshold, report.se))
}

fn concentration() -> Outcome {
    let m = toy_chain::<f64>();
    let values = snell_with_criteria(&m);
    let n = 1000;
    let c = theoretical_lp_bound(&m, &values, 2, n, 0, 0).map_err(|e| e.to_string())?.concentration_constant;
    let runs = run_batch(&m, n, 0xacce_0007, 2000, &0).map_err(|e| e.to_string())?;
    let estimates: Vec<f64> = runs.iter().map(|r| r.reported()).collect();
    let report =
        concentration_check(&estimates, values[0][0], n, c, &[0.05, 0.1, 0.2], 3.0, 1000).map_err(|e| e.to_string())?;
    ensure(report.skipped.is_none(), || report.skipped.clone().unwrap_or_default())?;
    let rows: Vec<String> =
        report.rows.iter().map(|r| format!("eps={} freq {:.4} <= {:.4}", r.epsilon, r.frequency, r.bound)).collect();
    ensure(report.pass, || rows.join("; "))?;
    Ok(format!("c = {c:.3}; {}", rows.join("; ")))
}

fn robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0008);
    let mut worst = f64::NEG_INFINITY;
    let toy = toy_chain::<f64>();
    for _ in 0..100 {
        let scale = 0.05 + 0.5 * rng.random::<f64>();
        let p = random_perturbation(&toy, &mut rng, scale);
        worst = worst.max(robustness_bound_check(&toy, &p).map_err(|e| e.to_string())?.max_excess);
    }
    for _ in 0..100 {
        let m = FiniteChain::random(&RandomChainSpec::default(), &mut rng);
        let scale = 0.05 + 0.5 * rng.random::<f64>();
        let p = random_perturbation(&m, &mut rng, scale);
        worst = worst.max(robustness_bound_check(&m, &p).map_err(|e| e.to_string())?.max_excess);
    }
    ensure(worst <= 1e-10, || format!("LHS exceeds RHS by {worst:e}"))?;
    Ok(format!("200 perturbations, max(LHS - RHS) = {worst:.3e}"))
}

/// Uniform i.i.d. moves on five states, `G = 1_{0}`: each step keeps an
/// expected fifth of the cloud.
fn hard_indicator_chain() -> FiniteChain<f64> {
    let n = 5;
    let row = vec![0.2; 5];
    let mut g = vec![0.0; 5];
    g[0] = 1.0;
    FiniteChain::from_parts(FiniteChainParts {
        initial: vec![0.2; 5],
        transitions: vec![Matrix::from_rows(vec![row; 5]).unwrap(); n],
        payoffs: (0..=n).map(|k| vec![if k == n { 1.0 } else { 0.0 }; 5]).collect(),
        criteria: vec![g; n],
        criteria_bounds: None,
        epsilon: None,
    })
    .unwrap()
}

fn extinction_semantics() -> Outcome {
    let m = hard_indicator_chain();
    let oracle = snell_with_criteria(&m)[0][0];
    let mut freqs = Vec::new();
    for &n in &[10usize, 100, 1000] {
        let runs = run_batch(&m, n, 0xacce_0009, 500, &0).map_err(|e| e.to_string())?;
        let extinct: Vec<_> = runs.iter().filter(|r| r.extinction.is_some()).collect();
        for r in &extinct {
            ensure(r.point.is_none() && r.initial_average.is_none() && r.reported() == 0.0, || {
                format!("extinct run (seed {}) carries a value", r.seed)
            })?;
            ensure(r.normalizer == 0.0, || "extinct run with positive normalizer".into())?;
        }
        let report = empirical_error_stats(&runs, oracle, &[1], 30).map_err(|e| e.to_string())?;
        let freq = extinct.len() as f64 / runs.len() as f64;
        ensure((report.rows[0].extinction_rate - freq).abs() < 1e-15, || "report extinction rate mismatch".into())?;
        let manual: f64 = runs.iter().map(|r| (r.point.unwrap_or(0.0) - oracle).abs()).sum::<f64>() / runs.len() as f64;
        ensure((report.rows[0].lp[0].1 - manual).abs() < 1e-12, || "extinct runs not reported as zero".into())?;
        freqs.push(freq);
    }
    ensure(freqs[0] > 0.0, || "no extinction at N = 10".into())?;
    let invalid = (0..200u64)
        .into_par_iter()
        .filter_map(|s| run_particle_system(&m, 10, s).ok().filter(|t| t.is_extinct()))
        .map(|t| backward_mesh(&m, &t))
        .all(|est| !est.is_valid() && evaluate_envelope(&m, &est, 0, &0).is_err());
    ensure(invalid, || "extinct trajectory produced a valid mesh".into())?;
    ensure(freqs[0] > freqs[1] && freqs[1] >= freqs[2], || format!("frequencies {freqs:?} not decreasing"))?;
    Ok(format!("extinction frequency N=10: {:.3}, N=100: {:.3}, N=1000: {:.3}", freqs[0], freqs[1], freqs[2]))
}

/// `a(p)^p` from integer factorials: `(2q)! / q! / 2^q` for even `p`,
/// `(2q+1)! / q! / sqrt(q + 1/2) / 2^(q + 1/2)` for odd `p`.
fn khintchine_by_factorials(p: u32) -> f64 {
    let fact = |m: u32| (1..=m as u128).product::<u128>();
    let q = p / 2;
    let power = if p.is_multiple_of(2) {
        (fact(p) / fact(q)) as f64 / 2f64.powi(q as i32)
    } else {
        let half = q as f64 + 0.5;
        (fact(p) / fact(q)) as f64 / half.sqrt() / 2f64.powf(half)
    };
    (power.ln() / p as f64).exp()
}

fn khintchine() -> Outcome {
    let a = |p| khintchine_constant::<f64>(p).map_err(|e| e.to_string());
    ensure((a(2)? - 1.0).abs() <= 1e-12, || "a(2) != 1".into())?;
    ensure((a(4)? - 3f64.powf(0.25)).abs() <= 1e-12, || "a(4) != 3^(1/4)".into())?;
    let a3 = (6.0 / 1.5f64.sqrt() / 2f64.powf(1.5)).cbrt();
    ensure((a(3)? - a3).abs() <= 1e-12, || format!("a(3) = {} vs {a3}", a(3).unwrap()))?;
    let mut worst = 0.0f64;
    for p in 1..=20 {
        worst = worst.max((a(p)? - khintchine_by_factorials(p)).abs());
    }
    ensure(worst <= 1e-12, || format!("factorial path differs by {worst:e}"))?;
    Ok(format!("a(3) = {:.6}, a(4) = {:.6}; p <= 20 agree to {worst:.1e}", a(3)?, a(4)?))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 oracle identities", Duration::from_secs(60), oracle_identities),
        ("2 equivalence reduction", Duration::from_secs(60), equivalence_reduction),
        ("3 one-step unbiasedness", Duration::from_secs(60), one_step_unbiasedness),
        ("4 normalizer unbiasedness", Duration::from_secs(120), normalizer_unbiasedness),
        ("5 convergence rate", Duration::from_secs(600), convergence_rate),
        ("6 high bias", Duration::from_secs(120), high_bias),
        ("7 concentration", Duration::from_secs(300), concentration),
        ("8 robustness inequality", Duration::from_secs(60), robustness),
        ("9 extinction semantics", Duration::from_secs(60), extinction_semantics),
        ("10 khintchine constants", Duration::from_secs(1), khintchine),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over time budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({:.2}s)", elapsed.as_secs_f64()),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{name}] {detail} ({:.2}s)", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
