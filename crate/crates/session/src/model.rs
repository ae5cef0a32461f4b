//! Engine-side session logic, independent of HTTP and storage.
//!
//! A session over K policies runs one pairwise test per unordered pair, the
//! earlier-listed policy as baseline. With K = 2 that single test uses the
//! full α; with more policies each pair gets `α / C(K, 2)`.

use std::collections::{BTreeMap, HashMap};

use nscore::compare::{letter_groups, pair_indices};
use nscore::evidence::{Decision, Verdict, DEFAULT_XI_CAP};
use nscore::metrics::{ScoreBounds, TrialPair};
use nscore::sequential::{Method, PairStatus, PairTest};
use nscore::wsr::Interval;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SessionError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub policies: Vec<String>,
    #[serde(default = "default_method")]
    pub method: Method,
    pub alpha: f64,
    #[serde(default = "default_n_max")]
    pub n_max: u64,
    #[serde(default)]
    pub bounds: ScoreBounds,
    #[serde(default = "default_xi_cap")]
    pub xi_cap: f64,
}

fn default_method() -> Method {
    Method::NScore(nscore::evidence::Bins::Fixed(2))
}

fn default_n_max() -> u64 {
    1000
}

fn default_xi_cap() -> f64 {
    DEFAULT_XI_CAP
}

impl SessionConfig {
    pub fn pair_alpha(&self) -> f64 {
        let k = self.policies.len();
        self.alpha / (k * (k - 1) / 2) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.policies.len() < 2 {
            return Err(SessionError::Validation(format!(
                "a session needs at least 2 policies, got {}",
                self.policies.len()
            )));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.trim().is_empty() {
                return Err(SessionError::Validation(
                    "policy names must be nonempty".into(),
                ));
            }
            if self.policies[..i].contains(p) {
                return Err(SessionError::Validation(format!("duplicate policy `{p}`")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SessionError::Validation(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One point of a pair's evidence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

impl From<PairStatus> for TracePoint {
    fn from(s: PairStatus) -> Self {
        TracePoint {
            n: s.n,
            x: s.x,
            x_bar: s.x_bar,
            xi: s.xi,
            p: s.p,
            interval: s.interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PairSlot {
    baseline: usize,
    candidate: usize,
    test: PairTest,
    trace: Vec<TracePoint>,
}

/// Submitted round of scores, as stored in the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub baseline: String,
    pub candidate: String,
    pub alpha: f64,
    pub n: u64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_to_decision: Option<u64>,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

/// Response to a trial submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendResponse {
    pub v: u32,
    pub id: String,
    pub n: u64,
    pub verdict: Verdict,
    pub terminal: bool,
    /// Headline values of the only pair in a two-policy session.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    pub p: f64,
    pub pairs: Vec<PairSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    #[serde(flatten)]
    pub summary: PairSummary,
    pub trace: Vec<TracePoint>,
}

/// Full state for charting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub v: u32,
    pub id: String,
    pub config: SessionConfig,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub n: u64,
    pub verdict: Verdict,
    pub terminal: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_to_decision: Option<u64>,
    pub p: f64,
    pub pairs: Vec<PairView>,
    /// Compact letter display; only for sessions with more than two policies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub letters: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionListing {
    pub id: String,
    pub policies: Vec<String>,
    pub method: Method,
    pub n: u64,
    pub verdict: Verdict,
    pub terminal: bool,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

/// A validated round, ready to be logged and applied.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    record: TrialRecord,
    normalized: Vec<f64>,
}

impl PreparedTrial {
    pub fn record(&self) -> &TrialRecord {
        &self.record
    }
}

/// Outcome of checking a submission against the session.
#[derive(Debug)]
pub enum Submission {
    /// Same idempotency key seen before with the same scores.
    Replay(AppendResponse),
    New(PreparedTrial),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    config: SessionConfig,
    created_at_ms: u64,
    updated_at_ms: u64,
    pairs: Vec<PairSlot>,
    trials: Vec<TrialRecord>,
    sums: Vec<f64>,
    responses: HashMap<String, AppendResponse>,
}

impl Session {
    pub fn new(id: String, config: SessionConfig, created_at_ms: u64) -> Result<Self> {
        config.validate()?;
        let alpha = config.pair_alpha();
        let pairs = pair_indices(config.policies.len())
            .into_iter()
            .map(|(i, j)| {
                let test =
                    PairTest::with_xi_cap(config.method, alpha, config.n_max, config.xi_cap)?;
                let trace = vec![TracePoint::from(test.status())];
                Ok(PairSlot {
                    baseline: i,
                    candidate: j,
                    test,
                    trace,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sums = vec![0.0; config.policies.len()];
        Ok(Self {
            id,
            config,
            created_at_ms,
            updated_at_ms: created_at_ms,
            pairs,
            trials: Vec::new(),
            sums,
            responses: HashMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn n(&self) -> u64 {
        self.trials.len() as u64
    }

    pub fn is_terminal(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.test.decision().verdict.is_terminal())
    }

    /// Session-level verdict: `Continue` while any pair runs, then
    /// `RejectNull` if any pair rejected.
    pub fn verdict(&self) -> Verdict {
        if !self.is_terminal() {
            Verdict::Continue
        } else if self
            .pairs
            .iter()
            .any(|p| p.test.decision().verdict == Verdict::RejectNull)
        {
            Verdict::RejectNull
        } else {
            Verdict::FailToRejectNull
        }
    }

    /// Validates a submission without changing the session.
    pub fn prepare(
        &self,
        index: Option<u64>,
        scores: BTreeMap<String, f64>,
        idempotency_key: Option<String>,
        at_ms: u64,
    ) -> Result<Submission> {
        if let Some(key) = &idempotency_key {
            if let Some(previous) = self.responses.get(key) {
                let stored = self
                    .trials
                    .iter()
                    .find(|t| t.idempotency_key.as_deref() == Some(key.as_str()))
                    .map(|t| &t.scores);
                if stored == Some(&scores) {
                    return Ok(Submission::Replay(previous.clone()));
                }
                return Err(SessionError::Conflict(format!(
                    "idempotency key `{key}` was already used with different scores"
                )));
            }
        }
        if self.is_terminal() {
            return Err(SessionError::Conflict(format!(
                "session `{}` reached a terminal verdict at trial {}",
                self.id,
                self.n()
            )));
        }
        let next = self.n() + 1;
        if let Some(i) = index {
            if i != next {
                return Err(SessionError::Conflict(format!(
                    "trial index {i} conflicts with the next expected index {next}"
                )));
            }
        }
        if let Some(extra) = scores.keys().find(|k| !self.config.policies.contains(k)) {
            return Err(SessionError::Validation(format!(
                "unknown policy `{extra}`"
            )));
        }
        let normalized = self
            .config
            .policies
            .iter()
            .map(|p| {
                let raw = scores.get(p).ok_or_else(|| {
                    SessionError::Validation(format!("missing score for policy `{p}`"))
                })?;
                Ok(self.config.bounds.normalize(*raw)?.value())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Submission::New(PreparedTrial {
            record: TrialRecord {
                index: next,
                scores,
                idempotency_key,
                at_ms,
            },
            normalized,
        }))
    }

    /// Steps every live pair once. Only valid for a trial prepared against
    /// the current state.
    pub fn apply(&mut self, prepared: PreparedTrial) -> Result<AppendResponse> {
        let PreparedTrial { record, normalized } = prepared;
        for slot in self.pairs.iter_mut() {
            if slot.test.decision().verdict.is_terminal() {
                continue;
            }
            let pair = TrialPair::new(
                slot.test.n() + 1,
                normalized[slot.baseline],
                normalized[slot.candidate],
            )?;
            slot.test.step(&pair)?;
            slot.trace.push(slot.test.status().into());
        }
        for (s, v) in self.sums.iter_mut().zip(&normalized) {
            *s += v;
        }
        self.updated_at_ms = record.at_ms;
        let key = record.idempotency_key.clone();
        self.trials.push(record);
        let response = self.response();
        if let Some(key) = key {
            self.responses.insert(key, response.clone());
        }
        Ok(response)
    }

    /// Validate-then-apply in one call, for replay and in-process use.
    pub fn append(
        &mut self,
        index: Option<u64>,
        scores: BTreeMap<String, f64>,
        idempotency_key: Option<String>,
        at_ms: u64,
    ) -> Result<AppendResponse> {
        match self.prepare(index, scores, idempotency_key, at_ms)? {
            Submission::Replay(r) => Ok(r),
            Submission::New(p) => self.apply(p),
        }
    }

    fn summary(&self, slot: &PairSlot) -> PairSummary {
        let status = slot.test.status();
        let Decision {
            time_to_decision, ..
        } = slot.test.decision();
        PairSummary {
            baseline: self.config.policies[slot.baseline].clone(),
            candidate: self.config.policies[slot.candidate].clone(),
            alpha: self.config.pair_alpha(),
            n: status.n,
            verdict: status.verdict,
            time_to_decision,
            p: status.p,
            x_bar: status.x_bar,
            xi: status.xi,
            interval: status.interval,
        }
    }

    /// Smallest pairwise p-value; the only pair's p for two policies.
    fn headline_p(&self) -> f64 {
        self.pairs
            .iter()
            .map(|s| s.test.decision().final_p)
            .fold(1.0, f64::min)
    }

    fn single_pair(&self) -> Option<&PairSlot> {
        (self.pairs.len() == 1).then(|| &self.pairs[0])
    }

    fn response(&self) -> AppendResponse {
        let single = self.single_pair().map(|s| s.test.status());
        AppendResponse {
            v: SCHEMA_VERSION,
            id: self.id.clone(),
            n: self.n(),
            verdict: self.verdict(),
            terminal: self.is_terminal(),
            x_bar: single.as_ref().and_then(|s| s.x_bar),
            xi: single.as_ref().and_then(|s| s.xi),
            p: self.headline_p(),
            pairs: self.pairs.iter().map(|s| self.summary(s)).collect(),
        }
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        let n = self.n().max(1) as f64;
        self.config
            .policies
            .iter()
            .zip(&self.sums)
            .map(|(p, s)| (p.clone(), s / n))
            .collect()
    }

    pub fn view(&self) -> SessionView {
        let multi = self.config.policies.len() > 2;
        let (letters, means) = if multi {
            let means = self.means();
            let ordered: Vec<(String, f64)> = self
                .config
                .policies
                .iter()
                .map(|p| (p.clone(), means[p]))
                .collect();
            let separated: Vec<(String, String)> = self
                .pairs
                .iter()
                .filter(|s| s.test.decision().verdict == Verdict::RejectNull)
                .map(|s| {
                    (
                        self.config.policies[s.baseline].clone(),
                        self.config.policies[s.candidate].clone(),
                    )
                })
                .collect();
            (Some(letter_groups(&separated, &ordered)), Some(means))
        } else {
            (None, None)
        };
        SessionView {
            v: SCHEMA_VERSION,
            id: self.id.clone(),
            config: self.config.clone(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
            n: self.n(),
            verdict: self.verdict(),
            terminal: self.is_terminal(),
            time_to_decision: self.is_terminal().then_some(self.n()),
            p: self.headline_p(),
            pairs: self
                .pairs
                .iter()
                .map(|s| PairView {
                    summary: self.summary(s),
                    trace: s.trace.clone(),
                })
                .collect(),
            letters,
            means,
        }
    }

    pub fn listing(&self) -> SessionListing {
        SessionListing {
            id: self.id.clone(),
            policies: self.config.policies.clone(),
            method: self.config.method,
            n: self.n(),
            verdict: self.verdict(),
            terminal: self.is_terminal(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
        }
    }
}
