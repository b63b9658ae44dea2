use crate::error::{Error, Result};
use crate::mesh::RunEstimate;
use crate::scalar::Scalar;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Monte-Carlo error statistics at one particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub n_particles: usize,
    pub runs: usize,
    pub mean: f64,
    /// Standard error of the mean of the reported values.
    pub se: f64,
    pub extinction_rate: f64,
    /// `(p, (mean |v^ - v|^p)^(1/p))` with extinct runs reported as zero.
    pub lp: Vec<(u32, f64)>,
    /// `L_2` error, used for the slope whatever `p_list` holds.
    pub l2: f64,
}

impl ErrorRow {
    pub fn lp_error(&self, p: u32) -> Option<f64> {
        self.lp.iter().find(|(q, _)| *q == p).map(|&(_, e)| e)
    }
}

/// Least-squares fit of `log error` against `log N` with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub oracle: f64,
    /// Rows sorted by increasing `N`.
    pub rows: Vec<ErrorRow>,
    /// Slope of the `L_2` error; `None` with fewer than two positive points.
    pub slope: Option<SlopeFit>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn require_runs(got: usize, min: usize) -> Result<()> {
    if got < min {
        return Err(Error::InsufficientRuns { got, min });
    }
    Ok(())
}

/// Fits `y = intercept + slope * x`; the interval uses Student-t with
/// `len - 2` degrees of freedom and is infinite for two points.
pub(crate) fn fit_slope(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let m = points.len();
    if m < 2 {
        return None;
    }
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let (lo, hi) = if m > 2 {
        let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let se = (rss / (m - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (m - 2) as f64).ok()?.inverse_cdf(0.975);
        (slope - t * se, slope + t * se)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    Some(SlopeFit { slope, intercept, lo, hi })
}

/// Groups runs by particle count and measures `L_p` errors against `oracle`.
///
/// Every group needs at least `min_runs` runs.
pub fn empirical_error_stats<T: Scalar>(
    runs: &[RunEstimate<T>],
    oracle: T,
    p_list: &[u32],
    min_runs: usize,
) -> Result<ErrorReport> {
    if p_list.contains(&0) {
        return Err(Error::Contract("error order p must be >= 1".into()));
    }
    let oracle = oracle.as_f64();
    let mut counts: Vec<usize> = runs.iter().map(|r| r.n_particles).collect();
    counts.sort_unstable();
    counts.dedup();
    if counts.is_empty() {
        return Err(Error::InsufficientRuns { got: 0, min: min_runs.max(1) });
    }
    let mut rows = Vec::with_capacity(counts.len());
    for n in counts {
        let group: Vec<&RunEstimate<T>> = runs.iter().filter(|r| r.n_particles == n).collect();
        require_runs(group.len(), min_runs)?;
        let values: Vec<f64> = group.iter().map(|r| r.reported().as_f64()).collect();
        let extinct = group.iter().filter(|r| r.extinction.is_some()).count();
        let lp_error = |p: u32| {
            let moment = values.iter().map(|v| (v - oracle).abs().powi(p as i32)).sum::<f64>() / values.len() as f64;
            moment.powf(1.0 / p as f64)
        };
        let lp = p_list.iter().map(|&p| (p, lp_error(p))).collect();
        let l2 = lp_error(2);
        rows.push(ErrorRow {
            n_particles: n,
            runs: group.len(),
            mean: mean(&values),
            se: standard_error(&values),
            extinction_rate: extinct as f64 / group.len() as f64,
            lp,
            l2,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let e = r.l2;
            (e > 0.0 && e.is_finite()).then(|| ((r.n_particles as f64).ln(), e.ln()))
        })
        .collect();
    let slope = if points.len() == rows.len() { fit_slope(&points) } else { None };
    Ok(ErrorReport { oracle, rows, slope })
}

/// One-sided bias verdict: the estimator should not sit below the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    pub runs: usize,
    pub mean: f64,
    pub oracle: f64,
    pub bias: f64,
    pub se: f64,
    /// `oracle - se_multiplier * se`.
    pub threshold: f64,
    pub pass: bool,
}

/// Passes when `mean >= oracle - se_multiplier * se`.
pub fn bias_check<T: Scalar>(estimates: &[T], oracle: T, se_multiplier: f64, min_runs: usize) -> Result<BiasReport> {
    require_runs(estimates.len(), min_runs)?;
    let values: Vec<f64> = estimates.iter().map(|v| v.as_f64()).collect();
    let oracle = oracle.as_f64();
    let m = mean(&values);
    let se = standard_error(&values);
    let threshold = oracle - se_multiplier * se;
    Ok(BiasReport { runs: values.len(), mean: m, oracle, bias: m - oracle, se, threshold, pass: m >= threshold })
}

/// Tail frequency at one deviation level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub epsilon: f64,
    /// `c / sqrt(N) + epsilon`.
    pub threshold: f64,
    pub frequency: f64,
    /// `exp(-N epsilon^2 / c^2)`.
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub runs: usize,
    pub n_particles: usize,
    pub constant: f64,
    pub rows: Vec<TailRow>,
    /// Reason the check was not carried out.
    pub skipped: Option<String>,
    pub pass: bool,
}

/// Compares `P(|v^ - v| > c / sqrt(N) + epsilon)` with `exp(-N epsilon^2 / c^2)`.
///
/// A row passes when the empirical frequency is at most
/// `bound + se_multiplier * sqrt(bound (1 - bound) / runs)`.
pub fn concentration_check<T: Scalar>(
    estimates: &[T],
    oracle: T,
    n_particles: usize,
    constant: T,
    eps_grid: &[f64],
    se_multiplier: f64,
    min_runs: usize,
) -> Result<ConcentrationReport> {
    require_runs(estimates.len(), min_runs)?;
    let c = constant.as_f64();
    let runs = estimates.len();
    let mut report =
        ConcentrationReport { runs, n_particles, constant: c, rows: Vec::new(), skipped: None, pass: true };
    if !c.is_finite() {
        report.skipped = Some("concentration constant is infinite".into());
        return Ok(report);
    }
    if c <= 0.0 {
        report.skipped = Some("concentration constant is zero".into());
        return Ok(report);
    }
    let oracle = oracle.as_f64();
    let n = n_particles as f64;
    for &eps in eps_grid {
        let threshold = c / n.sqrt() + eps;
        let hits = estimates.iter().filter(|v| (v.as_f64() - oracle).abs() > threshold).count();
        let frequency = hits as f64 / runs as f64;
        let bound = (-n * eps * eps / (c * c)).exp();
        let se = (bound * (1.0 - bound) / runs as f64).sqrt();
        let pass = frequency <= bound + se_multiplier * se;
        report.pass &= pass;
        report.rows.push(TailRow { epsilon: eps, threshold, frequency, bound, se, pass });
    }
    Ok(report)
}
