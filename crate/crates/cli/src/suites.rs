use crate::config::{RunConfig, Suite};
use crate::error::CliError;
use crate::output::{finite, num, Output, SCHEMA_VERSION};
use serde_json::{json, Value};
use snell_mesh::analysis::{
    bias_check, concentration_check, empirical_error_stats, random_perturbation, robustness_bound_check, run_batch,
    theoretical_lp_bound,
};
use snell_mesh::mesh::{backward_mesh, evaluate_envelope, RunEstimate};
use snell_mesh::model::FiniteChain;
use snell_mesh::oracle::{
    check_path_equivalence, compute_eta_flow, snell_with_criteria, verify_optimality, EnumerationCaps,
};
use snell_mesh::particle::run_particle_system;
use snell_mesh::stream::{run_seed, step_stream, Phase};
use snell_mesh::{AnyModelF64, Error, MarkovModel};
use std::str::FromStr;
use std::time::Instant;

/// Failed verification criteria of one suite, in the order checked.
#[derive(Debug, Default)]
pub struct Verdict {
    pub failures: Vec<String>,
}

impl Verdict {
    fn require(&mut self, ok: bool, criterion: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(criterion());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn json(&self) -> Value {
        json!({ "pass": self.passed(), "failures": self.failures })
    }
}

pub fn run(suite: Suite, cfg: &RunConfig, model: &AnyModelF64, out: &mut Output) -> Result<Verdict, CliError> {
    match (suite, model) {
        (Suite::Simulate, AnyModelF64::Finite(m)) => simulate(cfg, m, out),
        (Suite::Simulate, AnyModelF64::Ar1(m)) => simulate(cfg, m, out),
        (Suite::Price, AnyModelF64::Finite(m)) => price(cfg, m, out),
        (Suite::Price, AnyModelF64::Ar1(m)) => price(cfg, m, out),
        _ => {
            let m = model.as_finite(suite.name())?;
            match suite {
                Suite::Oracle => oracle(cfg, m, out),
                Suite::Convergence => convergence(cfg, m, out),
                Suite::Bias => bias(cfg, m, out),
                Suite::Bound => bound(cfg, m, out),
                Suite::Robustness => robustness(cfg, m, out),
                Suite::Simulate | Suite::Price => unreachable!("handled above"),
            }
        }
    }
}

fn parse_state<S: FromStr>(text: &str) -> Result<S, CliError> {
    text.parse().map_err(|_| CliError::Usage(format!("cannot parse state {text:?} for this model")))
}

fn finite_state(cfg: &RunConfig, m: &FiniteChain<f64>) -> Result<usize, CliError> {
    let x: usize = parse_state(&cfg.state)?;
    if x >= m.size(0) {
        return Err(CliError::Usage(format!("state {x} outside E_0 = {{0..{}}}", m.size(0) - 1)));
    }
    Ok(x)
}

fn oracle(cfg: &RunConfig, m: &FiniteChain<f64>, out: &mut Output) -> Result<Verdict, CliError> {
    let v = snell_with_criteria(m);
    let flow = compute_eta_flow(m)?;
    let rows = (0..=m.horizon())
        .flat_map(|k| (0..m.size(k)).map(move |x| (k, x)))
        .map(|(k, x)| vec![k.to_string(), x.to_string(), num(v[k][x]), num(flow.eta[k][x])]);
    out.csv("oracle.csv", &["k", "state", "v", "eta"], rows)?;

    let caps = EnumerationCaps { paths: cfg.caps.paths, policies: cfg.caps.policies };
    let mut verdict = Verdict::default();
    let mut skipped = Vec::new();
    let discrepancy = match check_path_equivalence(m, &caps) {
        Ok(d) => Some(d),
        Err(e @ Error::EnumerationTooLarge { .. }) => {
            skipped.push(e.to_string());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let optimality = match verify_optimality(m, &caps) {
        Ok(o) => Some(o),
        Err(e @ Error::EnumerationTooLarge { .. }) => {
            skipped.push(e.to_string());
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(d) = discrepancy {
        verdict.require(d <= 1e-12, || format!("path equivalence discrepancy {d:e} > 1e-12"));
    }
    if let Some(o) = optimality {
        verdict.require(o.gap <= 1e-10, || format!("optimality gap {:e} > 1e-10", o.gap));
    }
    let initial: f64 = m.initial_law().iter().zip(&v[0]).map(|(a, b)| a * b).sum();
    out.json(
        "oracle.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "v_0": v[0],
            "eta_0_v_0": initial,
            "normalizer": flow.normalizer,
            "masses": flow.masses,
            "path_equivalence_discrepancy": discrepancy,
            "optimality_best_value": optimality.map(|o| o.best_value),
            "optimality_gap": optimality.map(|o| o.gap),
            "policies": optimality.map(|o| o.policies.to_string()),
            "skipped": skipped,
            "verdict": verdict.json(),
        }),
    )?;
    Ok(verdict)
}

fn simulate<M: MarkovModel<f64>>(cfg: &RunConfig, m: &M, out: &mut Output) -> Result<Verdict, CliError> {
    let t = run_particle_system(m, cfg.n_particles, cfg.seed)?;
    let n = m.horizon();
    let mass = |c: Option<f64>| c.map(num).unwrap_or_default();
    let mut rows = Vec::new();
    for (k, cloud) in t.mutated.iter().enumerate() {
        let phase = if k == 0 { "init" } else { "mutation" };
        let extinct = t.extinction == Some(k);
        rows.push(vec![k.to_string(), phase.into(), mass(cloud.criteria_mass()), extinct.to_string()]);
        if let Some(sel) = t.selected.get(k) {
            rows.push(vec![k.to_string(), "selection".into(), mass(sel.criteria_mass()), "false".into()]);
        }
    }
    out.csv("simulate.csv", &["k", "phase", "eta_G", "extinct"], rows)?;
    if cfg.dump_particles {
        let rows = t.mutated.iter().enumerate().flat_map(|(k, cloud)| {
            cloud.particles().iter().enumerate().map(move |(i, x)| vec![k.to_string(), i.to_string(), m.state_label(x)])
        });
        out.csv("particles.csv", &["k", "i", "state"], rows)?;
    }
    out.json(
        "simulate.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "horizon": n,
            "N": cfg.n_particles,
            "seed": cfg.seed,
            "extinct": t.is_extinct(),
            "extinction_step": t.extinction,
            "masses": t.masses,
            "Z_hat": t.normalizer,
        }),
    )?;
    Ok(Verdict::default())
}

fn price<M: MarkovModel<f64>>(cfg: &RunConfig, m: &M, out: &mut Output) -> Result<Verdict, CliError>
where
    M::State: FromStr,
{
    let x: M::State = parse_state(&cfg.state)?;
    if !m.contains(0, &x) {
        return Err(CliError::Usage(format!("state {} is not in E_0", cfg.state)));
    }
    let start = Instant::now();
    let t = run_particle_system(m, cfg.n_particles, cfg.seed)?;
    let est = backward_mesh(m, &t);
    let point = if est.is_valid() { Some(evaluate_envelope(m, &est, 0, &x)?) } else { None };
    let runtime_ms = start.elapsed().as_millis() as u64;
    if cfg.levels {
        let mut rows = Vec::new();
        if est.is_valid() {
            for k in 0..=m.horizon() {
                let states = est.particles(k).unwrap_or_default();
                let values = est.values_at_particles(k).unwrap_or_default();
                for (i, (s, v)) in states.iter().zip(&values).enumerate() {
                    rows.push(vec![k.to_string(), i.to_string(), m.state_label(s), num(*v)]);
                }
            }
        }
        out.csv("levels.csv", &["k", "i", "state", "v_hat"], rows)?;
    }
    out.json(
        "price.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "state": m.state_label(&x),
            "v_hat_0": point,
            "v_hat_0_eta0_avg": est.initial_average(),
            "N": cfg.n_particles,
            "seed": cfg.seed,
            "extinct": t.is_extinct(),
            "extinction_step": t.extinction,
            "Z_hat": t.normalizer,
            "runtime_ms": runtime_ms,
        }),
    )?;
    Ok(Verdict::default())
}

fn batch(
    cfg: &RunConfig,
    m: &FiniteChain<f64>,
    n: usize,
    batch_seed: u64,
    x: usize,
) -> Result<Vec<RunEstimate<f64>>, CliError> {
    Ok(run_batch(m, n, batch_seed, cfg.runs, &x)?)
}

fn convergence(cfg: &RunConfig, m: &FiniteChain<f64>, out: &mut Output) -> Result<Verdict, CliError> {
    let x = finite_state(cfg, m)?;
    let v = snell_with_criteria(m);
    let oracle = v[0][x];
    let mut runs = Vec::new();
    for (j, &n) in cfg.n_list.iter().enumerate() {
        runs.extend(batch(cfg, m, n, run_seed(cfg.seed, j as u64), x)?);
    }
    let report = empirical_error_stats(&runs, oracle, &cfg.p, 30)?;
    let (lo, hi) = report.slope.map(|s| (num(s.lo), num(s.hi))).unwrap_or_default();
    let mut verdict = Verdict::default();
    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    for row in &report.rows {
        for &(p, err) in &row.lp {
            let b = theoretical_lp_bound(m, &v, p, row.n_particles, 0, x)?.bound;
            verdict.require(b >= err, || format!("N={} p={p}: bound {b} below empirical error {err}", row.n_particles));
            rows.push(vec![row.n_particles.to_string(), p.to_string(), num(err), num(b), lo.clone(), hi.clone()]);
        }
        per_n.push(json!({
            "N": row.n_particles,
            "runs": row.runs,
            "mean": row.mean,
            "se": finite(row.se),
            "extinction_rate": row.extinction_rate,
            "l2": row.l2,
        }));
    }
    let (smin, smax) = (cfg.thresholds.slope_min, cfg.thresholds.slope_max);
    match report.slope {
        Some(s) => verdict.require((smin..=smax).contains(&s.slope), || {
            format!("log-log L2 slope {:.4} outside [{smin}, {smax}]", s.slope)
        }),
        None => verdict.failures.push("log-log L2 slope undefined".into()),
    }
    out.csv("convergence.csv", &["N", "p", "error", "bound", "slope_lo", "slope_hi"], rows)?;
    out.json(
        "convergence.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "oracle": oracle,
            "slope": report.slope.map(|s| s.slope),
            "slope_lo": report.slope.and_then(|s| finite(s.lo)),
            "slope_hi": report.slope.and_then(|s| finite(s.hi)),
            "rows": per_n,
            "verdict": verdict.json(),
        }),
    )?;
    Ok(verdict)
}

fn bias(cfg: &RunConfig, m: &FiniteChain<f64>, out: &mut Output) -> Result<Verdict, CliError> {
    let x = finite_state(cfg, m)?;
    let oracle = snell_with_criteria(m)[0][x];
    if cfg.runs < 100 {
        return Err(Error::InsufficientRuns { got: cfg.runs, min: 100 }.into());
    }
    let runs = batch(cfg, m, cfg.n_particles, cfg.seed, x)?;
    let values: Vec<f64> = runs.iter().map(|r| r.reported()).collect();
    let extinction_rate = runs.iter().filter(|r| r.extinction.is_some()).count() as f64 / runs.len() as f64;
    let r = bias_check(&values, oracle, cfg.thresholds.bias_se_multiplier, 100)?;
    let mut verdict = Verdict::default();
    verdict.require(r.pass, || {
        format!("mean {} below oracle - {} SE = {}", r.mean, cfg.thresholds.bias_se_multiplier, r.threshold)
    });
    out.csv(
        "bias.csv",
        &["N", "runs", "mean", "oracle", "bias", "se", "threshold", "extinction_rate", "pass"],
        [vec![
            cfg.n_particles.to_string(),
            r.runs.to_string(),
            num(r.mean),
            num(r.oracle),
            num(r.bias),
            num(r.se),
            num(r.threshold),
            num(extinction_rate),
            r.pass.to_string(),
        ]],
    )?;
    out.json(
        "bias.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "mean": r.mean,
            "oracle": r.oracle,
            "bias": r.bias,
            "se": r.se,
            "threshold": r.threshold,
            "extinction_rate": extinction_rate,
            "verdict": verdict.json(),
        }),
    )?;
    Ok(verdict)
}

fn bound(cfg: &RunConfig, m: &FiniteChain<f64>, out: &mut Output) -> Result<Verdict, CliError> {
    let x = finite_state(cfg, m)?;
    let v = snell_with_criteria(m);
    let n = cfg.n_particles;
    if cfg.runs < 1000 {
        return Err(Error::InsufficientRuns { got: cfg.runs, min: 1000 }.into());
    }
    let runs = batch(cfg, m, n, cfg.seed, x)?;
    let errors = empirical_error_stats(&runs, v[0][x], &cfg.p, 30)?;
    let mut verdict = Verdict::default();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &(p, err) in &errors.rows[0].lp {
        let r = theoretical_lp_bound(m, &v, p, n, 0, x)?;
        verdict.require(r.bound >= err, || format!("p={p}: bound {} below empirical error {err}", r.bound));
        rows.push(vec![
            "0".into(),
            x.to_string(),
            p.to_string(),
            r.p_prime.to_string(),
            num(r.a_p),
            n.to_string(),
            num(r.bound),
            num(r.concentration_constant),
            num(err),
        ]);
        reports.push(json!({
            "p": p,
            "p_prime": r.p_prime,
            "a_p": r.a_p,
            "q": r.q,
            "b": r.b,
            "terms": r.terms,
            "bound": finite(r.bound),
            "c": finite(r.concentration_constant),
            "empirical_error": err,
            "diagnostic": r.diagnostic,
        }));
    }
    out.csv("bound.csv", &["k", "state", "p", "p_prime", "a_p", "N", "bound", "c", "empirical"], rows)?;

    let c = theoretical_lp_bound(m, &v, 2, n, 0, x)?.concentration_constant;
    let estimates: Vec<f64> = runs.iter().map(|r| r.reported()).collect();
    let tail = concentration_check(
        &estimates,
        v[0][x],
        n,
        c,
        &cfg.eps_grid,
        cfg.thresholds.concentration_se_multiplier,
        1000,
    )?;
    for row in tail.rows.iter().filter(|r| !r.pass) {
        verdict.failures.push(format!(
            "tail at epsilon={}: frequency {} above bound {} + {} SE",
            row.epsilon, row.frequency, row.bound, cfg.thresholds.concentration_se_multiplier
        ));
    }
    let tail_rows = tail
        .rows
        .iter()
        .map(|r| vec![num(r.epsilon), num(r.threshold), num(r.frequency), num(r.bound), num(r.se), r.pass.to_string()]);
    out.csv("tail.csv", &["epsilon", "threshold", "frequency", "bound", "se", "pass"], tail_rows)?;
    out.json(
        "bound.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "oracle": v[0][x],
            "bounds": reports,
            "concentration_constant": finite(c),
            "tail_skipped": tail.skipped,
            "verdict": verdict.json(),
        }),
    )?;
    Ok(verdict)
}

fn robustness(cfg: &RunConfig, m: &FiniteChain<f64>, out: &mut Output) -> Result<Verdict, CliError> {
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..cfg.perturbations {
        let mut rng = step_stream(run_seed(cfg.seed, trial as u64), 0, Phase::Init);
        let perturbed = random_perturbation(m, &mut rng, cfg.perturbation_scale);
        let report = robustness_bound_check(m, &perturbed)?;
        worst = worst.max(report.max_excess);
        for r in &report.rows {
            rows.push(vec![trial.to_string(), r.k.to_string(), r.state.to_string(), num(r.lhs), num(r.rhs)]);
        }
    }
    let tol = cfg.thresholds.robustness_tolerance;
    let mut verdict = Verdict::default();
    verdict.require(worst <= tol, || format!("perturbation inequality violated by {worst:e} > {tol:e}"));
    out.csv("robustness.csv", &["trial", "k", "state", "lhs", "rhs"], rows)?;
    out.json(
        "robustness.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "perturbations": cfg.perturbations,
            "max_excess": finite(worst),
            "verdict": verdict.json(),
        }),
    )?;
    Ok(verdict)
}
