//! Betting confidence sequences for a bounded mean (Waudby-Smith & Ramdas),
//! and the comparison test built on the score-difference stream.
//!
//! For every candidate mean `m` on a grid two capital processes bet that the
//! mean is above (`M⁺`) or below (`M⁻`) `m`, with the predictable plug-in bet
//!
//! ```text
//! λ_t = sqrt( 2 log(2/α) / (σ̂²_{t-1} · t · log(t+1)) )
//! ```
//!
//! truncated at `c/m` and `c/(1-m)`. A candidate leaves the confidence set
//! once `½ max(M⁺, M⁻) ≥ 1/α` and never returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{validate_alpha, Decision, Verdict};
use crate::metrics::{normalize, ScoreBounds, TrialPair};

pub const DEFAULT_GRID_POINTS: usize = 1000;
pub const DEFAULT_TRUNCATION: f64 = 0.95;
pub const MIN_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsrConfig {
    pub alpha: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_c() -> f64 {
    DEFAULT_TRUNCATION
}

fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}

impl Default for WsrConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            c: DEFAULT_TRUNCATION,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl WsrConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::Config(format!(
                "c must lie in (0, 1], got {}",
                self.c
            )));
        }
        if self.grid_points < MIN_GRID_POINTS {
            return Err(Error::Config(format!(
                "grid_points must be at least {MIN_GRID_POINTS}, got {}",
                self.grid_points
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSequence {
    pub intervals: Vec<Interval>,
}

impl ConfidenceSequence {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// `[[t, lower, upper], ...]` with `t` starting at 1.
    pub fn to_rows(&self) -> Vec<(u64, f64, f64)> {
        self.intervals
            .iter()
            .enumerate()
            .map(|(i, iv)| (i as u64 + 1, iv.lower, iv.upper))
            .collect()
    }
}

/// Incremental confidence-sequence state over observations already mapped
/// onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsrState {
    config: WsrConfig,
    grid: Vec<f64>,
    capital_up: Vec<f64>,
    capital_down: Vec<f64>,
    /// Running maximum of `½ max(M⁺, M⁻)`; frozen once a candidate is eliminated.
    capital_max: Vec<f64>,
    alive: Vec<bool>,
    t: u64,
    sum: f64,
    sum_sq: f64,
    prev_variance: f64,
    current: Interval,
}

impl WsrState {
    pub fn new(config: WsrConfig) -> Result<Self> {
        config.validate()?;
        let g = config.grid_points;
        let grid = (0..g)
            .map(|j| {
                if j + 1 == g {
                    1.0
                } else {
                    j as f64 / (g - 1) as f64
                }
            })
            .collect();
        Ok(Self {
            config,
            grid,
            capital_up: vec![1.0; g],
            capital_down: vec![1.0; g],
            capital_max: vec![0.5; g],
            alive: vec![true; g],
            t: 0,
            sum: 0.0,
            sum_sq: 0.0,
            prev_variance: 0.25,
            current: Interval {
                lower: 0.0,
                upper: 1.0,
            },
        })
    }

    pub fn config(&self) -> &WsrConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Current interval on the normalized scale.
    pub fn interval(&self) -> Interval {
        self.current
    }

    /// Prior-seeded running mean `(0.5 + Σ Z) / (t + 1)`.
    pub fn mean_estimate(&self) -> f64 {
        (0.5 + self.sum) / (self.t as f64 + 1.0)
    }

    /// Prior-seeded running variance `(0.25 + Σ (Z - μ̂)²) / (t + 1)`.
    pub fn variance_estimate(&self) -> f64 {
        let t = self.t as f64;
        let mu = self.mean_estimate();
        let ss = (self.sum_sq - 2.0 * mu * self.sum + t * mu * mu).max(0.0);
        (0.25 + ss) / (t + 1.0)
    }

    /// Bet size for the next observation.
    pub fn next_lambda(&self) -> f64 {
        let t = (self.t + 1) as f64;
        let num = 2.0 * (2.0 / self.config.alpha).ln();
        let den = self.prev_variance * t * (t + 1.0).ln();
        (num / den).sqrt()
    }

    /// Consumes one normalized observation and returns the new interval.
    pub fn update(&mut self, z: f64) -> Interval {
        debug_assert!((0.0..=1.0).contains(&z));
        let lambda = self.next_lambda();
        let threshold = 1.0 / self.config.alpha;
        let c = self.config.c;
        for (idx, &m) in self.grid.iter().enumerate() {
            if !self.alive[idx] {
                continue;
            }
            let up = if m > 0.0 { lambda.min(c / m) } else { lambda };
            let down = if m < 1.0 {
                lambda.min(c / (1.0 - m))
            } else {
                lambda
            };
            self.capital_up[idx] *= 1.0 + up * (z - m);
            self.capital_down[idx] *= 1.0 - down * (z - m);
            let capital = 0.5 * self.capital_up[idx].max(self.capital_down[idx]);
            self.capital_max[idx] = self.capital_max[idx].max(capital);
            if capital >= threshold {
                self.alive[idx] = false;
            }
        }
        self.t += 1;
        self.sum += z;
        self.sum_sq += z * z;
        self.prev_variance = self.variance_estimate();
        self.current = self.hull();
        self.current
    }

    fn hull(&self) -> Interval {
        let first = self.alive.iter().position(|&a| a);
        let last = self.alive.iter().rposition(|&a| a);
        match (first, last) {
            (Some(lo), Some(hi)) => Interval {
                lower: self.grid[lo].clamp(0.0, 1.0),
                upper: self.grid[hi].clamp(0.0, 1.0),
            },
            // Every candidate eliminated: collapse onto the previous midpoint
            // so the sequence stays nested.
            _ => {
                let mid = 0.5 * (self.current.lower + self.current.upper);
                Interval {
                    lower: mid,
                    upper: mid,
                }
            }
        }
    }

    /// Anytime-valid p-value for "mean ≤ `m0`": the largest `1/max_s M_s(m)`
    /// over candidates `m ≤ m0`, capped at 1.
    pub fn p_value_at_most(&self, m0: f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.capital_max)
            .filter(|(&m, _)| m <= m0)
            .map(|(_, &cap)| if cap <= 1.0 { 1.0 } else { 1.0 / cap })
            .fold(0.0, f64::max)
    }
}

/// Confidence sequence for the mean of `observations` in the units of `bounds`.
pub fn wsr_cs(
    observations: &[f64],
    bounds: ScoreBounds,
    config: &WsrConfig,
) -> Result<ConfidenceSequence> {
    let mut state = WsrState::new(*config)?;
    let mut intervals = Vec::with_capacity(observations.len());
    for (i, &raw) in observations.iter().enumerate() {
        let z = normalize(raw, bounds).map_err(|e| match e {
            Error::OutOfRange {
                value,
                lower,
                upper,
                ..
            } => Error::OutOfRange {
                trial: Some(i as u64 + 1),
                value,
                lower,
                upper,
            },
            other => other,
        })?;
        let iv = state.update(z.value());
        intervals.push(denormalize(iv, bounds));
    }
    Ok(ConfidenceSequence { intervals })
}

fn denormalize(iv: Interval, bounds: ScoreBounds) -> Interval {
    Interval {
        lower: bounds.denormalize(iv.lower),
        upper: bounds.denormalize(iv.upper),
    }
}

/// Sequential comparison driven by the confidence sequence on `r1 - r0`.
/// Rejects the null once the whole interval lies above 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsrTest {
    state: WsrState,
    n_max: u64,
    verdict: Verdict,
    p_trace: Vec<f64>,
    intervals: Vec<Interval>,
    first_negative: Option<u64>,
}

impl WsrTest {
    pub fn new(config: WsrConfig, n_max: u64) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(Self {
            state: WsrState::new(config)?,
            n_max,
            verdict: Verdict::Continue,
            p_trace: Vec::new(),
            intervals: Vec::new(),
            first_negative: None,
        })
    }

    pub fn n(&self) -> u64 {
        self.state.t
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn p_trace(&self) -> &[f64] {
        &self.p_trace
    }

    pub fn anytime_p(&self) -> f64 {
        self.p_trace.last().copied().unwrap_or(1.0)
    }

    /// Current interval on the difference scale `[-1, 1]`.
    pub fn interval(&self) -> Interval {
        denormalize(self.state.interval(), ScoreBounds::DIFF)
    }

    /// First trial at which the interval lay entirely below 0, if any.
    pub fn evidence_for_null(&self) -> Option<u64> {
        self.first_negative
    }

    pub fn confidence_sequence(&self) -> ConfidenceSequence {
        ConfidenceSequence {
            intervals: self.intervals.clone(),
        }
    }

    pub fn decision(&self) -> Decision {
        Decision {
            verdict: self.verdict,
            time_to_decision: self.verdict.is_terminal().then_some(self.n()),
            final_p: self.anytime_p(),
        }
    }

    pub fn step(&mut self, pair: &TrialPair) -> Result<Decision> {
        if self.verdict.is_terminal() {
            return Err(Error::Finished { n: self.n() });
        }
        if pair.index != self.n() + 1 {
            return Err(Error::Ordering {
                expected: self.n() + 1,
                got: pair.index,
            });
        }
        let z = 0.5 * (pair.difference() + 1.0);
        self.state.update(z.clamp(0.0, 1.0));
        let iv = self.interval();
        self.intervals.push(iv);
        let p = self.state.p_value_at_most(0.5);
        let prev = self.p_trace.last().copied().unwrap_or(1.0);
        self.p_trace.push(p.min(prev));
        if iv.upper < 0.0 && self.first_negative.is_none() {
            self.first_negative = Some(self.n());
        }
        self.verdict = if iv.lower > 0.0 {
            Verdict::RejectNull
        } else if self.n() >= self.n_max {
            Verdict::FailToRejectNull
        } else {
            Verdict::Continue
        };
        Ok(self.decision())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsrComparison {
    pub decision: Decision,
    pub sequence: ConfidenceSequence,
    pub evidence_for_null: Option<u64>,
}

/// Runs the difference-stream test over every pair (`n_max = pairs.len()`).
pub fn wsr_compare(pairs: &[TrialPair], config: &WsrConfig) -> Result<WsrComparison> {
    if pairs.is_empty() {
        return Err(Error::Config("cannot run a test on an empty stream".into()));
    }
    let mut test = WsrTest::new(*config, pairs.len() as u64)?;
    for pair in pairs {
        if test.step(pair)?.verdict.is_terminal() {
            break;
        }
    }
    Ok(WsrComparison {
        decision: test.decision(),
        sequence: test.confidence_sequence(),
        evidence_for_null: test.evidence_for_null(),
    })
}
