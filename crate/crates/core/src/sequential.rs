//! A single interface over the two sequential tests so that experiments,
//! multi-policy reports and live sessions can be run with either.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{Bins, Decision, EvidenceState, TestConfig, Verdict, DEFAULT_XI_CAP};
use crate::metrics::TrialPair;
use crate::wsr::{Interval, WsrConfig, WsrTest};

/// Which test to run. Written as `nscore:<k>`, `nscore:adaptive` or `wsr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    NScore(Bins),
    Wsr,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::NScore(b) => write!(f, "nscore:{b}"),
            Method::Wsr => f.write_str("wsr"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "wsr" {
            return Ok(Method::Wsr);
        }
        let rest = s.strip_prefix("nscore").ok_or_else(|| {
            Error::Config(format!(
                "unknown method `{s}` (expected nscore:<k>, nscore:adaptive or wsr)"
            ))
        })?;
        let bins = match rest.strip_prefix(':') {
            Some(b) => b.parse()?,
            None if rest.is_empty() => Bins::Fixed(2),
            None => rest.parse()?,
        };
        if let Bins::Fixed(k) = bins {
            if k < 2 {
                return Err(Error::Config(format!("bins must be at least 2, got {k}")));
            }
        }
        Ok(Method::NScore(bins))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Point-in-time summary of a running test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStatus {
    pub n: u64,
    pub verdict: Verdict,
    pub time_to_decision: Option<u64>,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairTest {
    NScore {
        state: EvidenceState,
        config: TestConfig,
    },
    Wsr(WsrTest),
}

impl PairTest {
    pub fn new(method: Method, alpha: f64, n_max: u64) -> Result<Self> {
        Self::with_xi_cap(method, alpha, n_max, DEFAULT_XI_CAP)
    }

    pub fn with_xi_cap(method: Method, alpha: f64, n_max: u64, xi_cap: f64) -> Result<Self> {
        match method {
            Method::NScore(bins) => {
                let config = TestConfig {
                    alpha,
                    n_max,
                    bins,
                    xi_cap,
                };
                Ok(PairTest::NScore {
                    state: EvidenceState::init(&config)?,
                    config,
                })
            }
            Method::Wsr => Ok(PairTest::Wsr(WsrTest::new(
                WsrConfig::with_alpha(alpha),
                n_max,
            )?)),
        }
    }

    pub fn step(&mut self, pair: &TrialPair) -> Result<Decision> {
        match self {
            PairTest::NScore { state, config } => state.step(pair, config),
            PairTest::Wsr(t) => t.step(pair),
        }
    }

    pub fn decision(&self) -> Decision {
        match self {
            PairTest::NScore { state, .. } => state.decision(),
            PairTest::Wsr(t) => t.decision(),
        }
    }

    pub fn n(&self) -> u64 {
        match self {
            PairTest::NScore { state, .. } => state.n,
            PairTest::Wsr(t) => t.n(),
        }
    }

    pub fn p_trace(&self) -> &[f64] {
        match self {
            PairTest::NScore { state, .. } => &state.p_trace,
            PairTest::Wsr(t) => t.p_trace(),
        }
    }

    pub fn status(&self) -> PairStatus {
        let d = self.decision();
        match self {
            PairTest::NScore { state, .. } => PairStatus {
                n: state.n,
                verdict: d.verdict,
                time_to_decision: d.time_to_decision,
                p: d.final_p,
                x: Some(state.x),
                x_bar: Some(state.x_bar),
                xi: Some(state.xi),
                interval: None,
            },
            PairTest::Wsr(t) => PairStatus {
                n: t.n(),
                verdict: d.verdict,
                time_to_decision: d.time_to_decision,
                p: d.final_p,
                x: None,
                x_bar: None,
                xi: None,
                interval: (t.n() > 0).then(|| t.interval()),
            },
        }
    }
}

/// Runs a test over a finished stream; returns the final test object.
pub fn run_pairs(method: Method, alpha: f64, n_max: u64, pairs: &[TrialPair]) -> Result<PairTest> {
    let mut test = PairTest::new(method, alpha, n_max)?;
    for pair in pairs {
        if test.step(pair)?.verdict.is_terminal() {
            break;
        }
    }
    Ok(test)
}
