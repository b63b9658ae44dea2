//! Quantitative checks of the estimator against exact oracles.

mod batch;
mod bound;
mod khintchine;
mod robustness;
mod stats;

pub use batch::run_batch;
pub use bound::{sup_ratio_h, theoretical_lp_bound, BoundReport};
pub use khintchine::{falling_factorial, khintchine_constant, smallest_even_at_least};
pub use robustness::{random_perturbation, robustness_bound_check, RobustnessReport, RobustnessRow};
pub use stats::{
    bias_check, concentration_check, empirical_error_stats, BiasReport, ConcentrationReport, ErrorReport, ErrorRow,
    SlopeFit, TailRow,
};
