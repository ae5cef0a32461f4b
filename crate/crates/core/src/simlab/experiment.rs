//! Seeded Monte-Carlo runner for time-to-decision and power.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{gap_filtered_pair, PolynomialDensity};
use crate::error::{Error, Result};
use crate::evidence::Verdict;
use crate::metrics::{ProgressScore, TrialPair};
use crate::sequential::{Method, PairTest};

/// Success probabilities of the baseline (`p0`) and candidate (`p1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliPair {
    pub p0: f64,
    pub p1: f64,
}

impl BernoulliPair {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1)) {
            return Err(Error::Config(format!(
                "Bernoulli rates must lie in [0, 1], got ({p0}, {p1})"
            )));
        }
        Ok(Self { p0, p1 })
    }

    pub fn gap(&self) -> f64 {
        self.p1 - self.p0
    }
}

/// Distribution pair the paired scores are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Alternative {
    Bernoulli(BernoulliPair),
    Densities {
        baseline: PolynomialDensity,
        candidate: PolynomialDensity,
    },
    /// A fresh gap-filtered random density pair for every redraw.
    RandomPolynomial {
        min_gap: f64,
    },
}

impl Alternative {
    /// Draws the per-redraw score sampler. Only `RandomPolynomial` consumes
    /// randomness here.
    fn sampler<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sampler> {
        Ok(match self {
            Alternative::Bernoulli(b) => Sampler::Bernoulli(*b),
            Alternative::Densities {
                baseline,
                candidate,
            } => Sampler::Densities(Box::new((baseline.clone(), candidate.clone()))),
            Alternative::RandomPolynomial { min_gap } => {
                Sampler::Densities(Box::new(gap_filtered_pair(rng, *min_gap)?))
            }
        })
    }
}

enum Sampler {
    Bernoulli(BernoulliPair),
    Densities(Box<(PolynomialDensity, PolynomialDensity)>),
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, index: u64, rng: &mut R) -> TrialPair {
        let (r0, r1) = match self {
            Sampler::Bernoulli(b) => (bernoulli(b.p0, rng), bernoulli(b.p1, rng)),
            Sampler::Densities(pair) => (pair.0.sample(rng), pair.1.sample(rng)),
        };
        TrialPair { index, r0, r1 }
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> ProgressScore {
    if rng.random::<f64>() < p {
        ProgressScore::ONE
    } else {
        ProgressScore::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub method: Method,
    pub alternative: Alternative,
    /// Batch limit N.
    pub n: u64,
    pub redraws: u64,
    pub alpha: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.redraws == 0 {
            return Err(Error::Config("redraws must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("batch limit must be at least 1".into()));
        }
        crate::evidence::validate_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Mean stopping time, with non-decisions counted at N.
    pub mean_ttd: f64,
    /// Fraction of redraws that rejected the null.
    pub power: f64,
    pub rejections: u64,
    pub redraws: u64,
    pub ttd_samples: Vec<u64>,
}

/// Outcome of a single redraw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedrawOutcome {
    pub rejected: bool,
    pub ttd: u64,
}

/// Generator for redraw `r`: seeded with `seed + r`.
pub fn redraw_rng(seed: u64, redraw: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(redraw))
}

pub fn run_redraw(spec: &ExperimentSpec, redraw: u64) -> Result<RedrawOutcome> {
    let mut rng = redraw_rng(spec.seed, redraw);
    let sampler = spec.alternative.sampler(&mut rng)?;
    let mut test = PairTest::new(spec.method, spec.alpha, spec.n)?;
    for index in 1..=spec.n {
        let pair = sampler.draw(index, &mut rng);
        let d = test.step(&pair)?;
        if d.verdict.is_terminal() {
            return Ok(RedrawOutcome {
                rejected: d.verdict == Verdict::RejectNull,
                ttd: d.time_to_decision.unwrap_or(spec.n),
            });
        }
    }
    unreachable!("a test with n_max = N is terminal after N trials")
}

/// Runs every redraw (in parallel) and aggregates in redraw order, so results
/// are identical for identical specs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let outcomes: Vec<RedrawOutcome> = (0..spec.redraws)
        .into_par_iter()
        .map(|r| run_redraw(spec, r))
        .collect::<Result<_>>()?;
    let rejections = outcomes.iter().filter(|o| o.rejected).count() as u64;
    let ttd_samples: Vec<u64> = outcomes.iter().map(|o| o.ttd).collect();
    let total: u64 = ttd_samples.iter().sum();
    Ok(ExperimentResult {
        mean_ttd: total as f64 / spec.redraws as f64,
        power: rejections as f64 / spec.redraws as f64,
        rejections,
        redraws: spec.redraws,
        ttd_samples,
    })
}

/// Default Bernoulli alternatives: gaps 0.1 and 0.2 for `p0 ∈ {0.1, …, 0.8}`
/// and gap 0.3 for `p0 ∈ {0.1, …, 0.7}`.
pub fn default_bernoulli_grid() -> Vec<BernoulliPair> {
    let mut grid = Vec::new();
    for (gap_tenths, max_p0) in [(1u32, 8u32), (2, 8), (3, 7)] {
        for p0_tenths in 1..=max_p0 {
            let p0 = p0_tenths as f64 / 10.0;
            let p1 = (p0_tenths + gap_tenths) as f64 / 10.0;
            grid.push(BernoulliPair { p0, p1 });
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Bins;

    fn spec(method: Method, p0: f64, p1: f64, n: u64, redraws: u64, seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            method,
            alternative: Alternative::Bernoulli(BernoulliPair::new(p0, p1).unwrap()),
            n,
            redraws,
            alpha: 0.05,
            seed,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(Method::NScore(Bins::Fixed(2)), 0.4, 0.6, 300, 40, 99);
        assert_eq!(run_experiment(&s).unwrap(), run_experiment(&s).unwrap());
        let other = ExperimentSpec {
            seed: 100,
            ..s.clone()
        };
        assert_ne!(
            run_experiment(&s).unwrap().ttd_samples,
            run_experiment(&other).unwrap().ttd_samples
        );
    }

    #[test]
    fn easy_alternative_has_full_power() {
        let r =
            run_experiment(&spec(Method::NScore(Bins::Fixed(2)), 0.3, 0.9, 1000, 50, 1)).unwrap();
        assert_eq!(r.power, 1.0);
        assert!(r.mean_ttd < 100.0, "{}", r.mean_ttd);
    }

    #[test]
    fn non_decisions_count_at_n() {
        let r = run_experiment(&spec(Method::NScore(Bins::Fixed(2)), 0.5, 0.5, 50, 30, 3)).unwrap();
        for (i, &t) in r.ttd_samples.iter().enumerate() {
            let o = run_redraw(
                &spec(Method::NScore(Bins::Fixed(2)), 0.5, 0.5, 50, 30, 3),
                i as u64,
            )
            .unwrap();
            if !o.rejected {
                assert_eq!(t, 50);
            }
        }
        let mean = r.ttd_samples.iter().sum::<u64>() as f64 / 30.0;
        assert_eq!(mean, r.mean_ttd);
    }

    #[test]
    fn power_nondecreasing_in_n() {
        let mut prev = 0.0;
        for n in [100, 300, 1000] {
            let r =
                run_experiment(&spec(Method::NScore(Bins::Fixed(2)), 0.4, 0.55, n, 60, 5)).unwrap();
            assert!(r.power >= prev, "n={n}: {} < {prev}", r.power);
            prev = r.power;
        }
    }

    #[test]
    fn validation() {
        let mut s = spec(Method::Wsr, 0.5, 0.5, 10, 0, 0);
        assert!(run_experiment(&s).is_err());
        s.redraws = 1;
        s.alpha = 1.5;
        assert!(run_experiment(&s).is_err());
        assert!(BernoulliPair::new(1.2, 0.1).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_bernoulli_grid();
        assert_eq!(g.len(), 23);
        assert_eq!(g.iter().filter(|b| (b.gap() - 0.1).abs() < 1e-9).count(), 8);
        assert!(g.iter().all(|b| b.p1 <= 1.0 + 1e-12 && b.gap() > 0.0));
    }
}
