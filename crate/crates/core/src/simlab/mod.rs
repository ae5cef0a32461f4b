//! Synthetic score generators and the Monte-Carlo experiment runner.

pub mod density;
pub mod experiment;

pub use density::{gap_filtered_pair, gen_polynomial_density, PolynomialDensity};
pub use experiment::{
    default_bernoulli_grid, redraw_rng, run_experiment, run_redraw, Alternative, BernoulliPair,
    ExperimentResult, ExperimentSpec, RedrawOutcome,
};
