//! The evidence process and its stopping rule.
//!
//! Starting from `X₀ = 1`, every paired trial multiplies the wealth by
//! `1 + ξ·(r₁ − r₀)`, where ξ was chosen from the trials before it. Under the
//! null (baseline mean ≥ candidate mean) this is a nonnegative supermartingale
//! for any ξ in `[0, 1]`, so by Ville's inequality the running maximum `X̄`
//! exceeds `1/α` with probability at most α. The test rejects the first time
//! it does, and `min(1, 1/X̄)` is an anytime-valid p-value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TrialPair;
use crate::xi_opt::{self, BinnedJointModel, BinningScheme, ADAPTIVE_BINS};

pub const DEFAULT_XI_CAP: f64 = 0.999;

/// Bin count of the betting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bins {
    Fixed(usize),
    /// The large-k variant, realized as [`ADAPTIVE_BINS`] bins.
    Adaptive,
}

impl Bins {
    pub fn count(self) -> usize {
        match self {
            Bins::Fixed(k) => k,
            Bins::Adaptive => ADAPTIVE_BINS,
        }
    }
}

impl fmt::Display for Bins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bins::Fixed(k) => write!(f, "{k}"),
            Bins::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for Bins {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adaptive" | "inf" | "∞" => Ok(Bins::Adaptive),
            other => other.parse::<usize>().map(Bins::Fixed).map_err(|_| {
                Error::Config(format!(
                    "bins must be an integer or `adaptive`, got `{other}`"
                ))
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BinsRepr {
    Count(usize),
    Name(String),
}

impl Serialize for Bins {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bins::Fixed(k) => BinsRepr::Count(*k),
            Bins::Adaptive => BinsRepr::Name("adaptive".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Bins {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match BinsRepr::deserialize(d)? {
            BinsRepr::Count(k) => Ok(Bins::Fixed(k)),
            BinsRepr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parameters of one sequential comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub n_max: u64,
    pub bins: Bins,
    #[serde(default = "default_xi_cap")]
    pub xi_cap: f64,
}

fn default_xi_cap() -> f64 {
    DEFAULT_XI_CAP
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_max: 1000,
            bins: Bins::Fixed(2),
            xi_cap: DEFAULT_XI_CAP,
        }
    }
}

impl TestConfig {
    pub fn new(alpha: f64, n_max: u64, bins: Bins) -> Result<Self> {
        let c = Self {
            alpha,
            n_max,
            bins,
            xi_cap: DEFAULT_XI_CAP,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if let Bins::Fixed(k) = self.bins {
            if k < 2 {
                return Err(Error::Config(format!("bins must be at least 2, got {k}")));
            }
        }
        if !(self.xi_cap > 0.0 && self.xi_cap < 1.0) {
            return Err(Error::Config(format!(
                "xi_cap must lie in (0, 1), got {}",
                self.xi_cap
            )));
        }
        Ok(())
    }

    /// Ville threshold `1/α`.
    pub fn threshold(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn scheme(&self) -> BinningScheme {
        BinningScheme::new(self.bins.count()).expect("validated bin count")
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    RejectNull,
    FailToRejectNull,
    Continue,
}

impl Verdict {
    pub fn is_terminal(self) -> bool {
        self != Verdict::Continue
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::RejectNull => "RejectNull",
            Verdict::FailToRejectNull => "FailToRejectNull",
            Verdict::Continue => "Continue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    /// Trial at which the test stopped; `None` while it continues.
    pub time_to_decision: Option<u64>,
    pub final_p: f64,
}

/// Running state of one test: wealth, its maximum, the next bet and the
/// binned history it was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceState {
    pub n: u64,
    pub x: f64,
    pub x_bar: f64,
    pub xi: f64,
    pub model: BinnedJointModel,
    pub p_trace: Vec<f64>,
    pub verdict: Verdict,
}

/// Serialized view of a state, one per trial in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: u64,
    pub x: f64,
    pub x_bar: f64,
    pub xi: f64,
    pub p: f64,
    pub histograms: Histograms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub k: usize,
    pub counts0: Vec<u64>,
    pub counts1: Vec<u64>,
}

/// Wealth multiplier for one trial. Uses the exact scores, never the bins.
pub fn multiplier(xi: f64, pair: &TrialPair) -> f64 {
    1.0 + xi * (pair.r1.value() - pair.r0.value())
}

impl EvidenceState {
    pub fn init(config: &TestConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            n: 0,
            x: 1.0,
            x_bar: 1.0,
            xi: 0.0,
            model: BinnedJointModel::new(config.scheme()),
            p_trace: Vec::new(),
            verdict: Verdict::Continue,
        })
    }

    pub fn anytime_p(&self) -> f64 {
        anytime_p(self.x_bar)
    }

    pub fn decision(&self) -> Decision {
        Decision {
            verdict: self.verdict,
            time_to_decision: self.verdict.is_terminal().then_some(self.n),
            final_p: self.anytime_p(),
        }
    }

    /// Applies one trial: bet with the ξ fixed before seeing it, then refresh
    /// the model and choose the next ξ.
    pub fn step(&mut self, pair: &TrialPair, config: &TestConfig) -> Result<Decision> {
        if self.verdict.is_terminal() {
            return Err(Error::Finished { n: self.n });
        }
        if pair.index != self.n + 1 {
            return Err(Error::Ordering {
                expected: self.n + 1,
                got: pair.index,
            });
        }
        self.x *= multiplier(self.xi, pair);
        self.x_bar = self.x_bar.max(self.x);
        self.model.update(pair);
        self.xi = xi_opt::optimize_xi(&self.model, config.xi_cap).clamp(0.0, config.xi_cap);
        self.n += 1;
        self.p_trace.push(self.anytime_p());
        self.verdict = if self.x_bar >= config.threshold() {
            Verdict::RejectNull
        } else if self.n >= config.n_max {
            Verdict::FailToRejectNull
        } else {
            Verdict::Continue
        };
        Ok(self.decision())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            n: self.n,
            x: self.x,
            x_bar: self.x_bar,
            xi: self.xi,
            p: self.anytime_p(),
            histograms: Histograms {
                k: self.model.scheme().k(),
                counts0: self.model.counts0().to_vec(),
                counts1: self.model.counts1().to_vec(),
            },
        }
    }
}

/// `min(1, 1/X̄)`.
pub fn anytime_p(x_bar: f64) -> f64 {
    if x_bar <= 1.0 {
        1.0
    } else {
        1.0 / x_bar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub decision: Decision,
    /// Snapshot after each processed trial, starting with the initial state.
    pub trace: Vec<Snapshot>,
}

/// Runs the test over a finished stream, stopping at the first rejection or
/// after `min(len, n_max)` trials. If the data ends before `n_max` without a
/// rejection the verdict stays `Continue`.
pub fn run(pairs: &[TrialPair], config: &TestConfig) -> Result<RunOutcome> {
    if pairs.is_empty() {
        return Err(Error::Config("cannot run a test on an empty stream".into()));
    }
    let mut state = EvidenceState::init(config)?;
    let mut trace = vec![state.snapshot()];
    let mut decision = state.decision();
    for pair in pairs {
        decision = state.step(pair, config)?;
        trace.push(state.snapshot());
        if decision.verdict.is_terminal() {
            break;
        }
    }
    Ok(RunOutcome { decision, trace })
}
