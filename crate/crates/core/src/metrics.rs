//! Progress scores, score normalization and pairing of evaluation streams.
//!
//! A progress score is any per-rollout metric bounded in a known closed
//! interval. Everything downstream works on the unit interval, so raw
//! scores are mapped affinely onto `[0, 1]` before they reach a test.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lower, upper]` that raw scores are guaranteed to lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct ScoreBounds {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBounds {
    lower: f64,
    upper: f64,
}

impl TryFrom<RawBounds> for ScoreBounds {
    type Error = Error;
    fn try_from(raw: RawBounds) -> Result<Self> {
        ScoreBounds::new(raw.lower, raw.upper)
    }
}

impl From<ScoreBounds> for RawBounds {
    fn from(b: ScoreBounds) -> Self {
        RawBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self::UNIT
    }
}

impl ScoreBounds {
    pub const UNIT: ScoreBounds = ScoreBounds {
        lower: 0.0,
        upper: 1.0,
    };

    /// `[-1, 1]`, the range of a score difference.
    pub const DIFF: ScoreBounds = ScoreBounds {
        lower: -1.0,
        upper: 1.0,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, raw: f64) -> bool {
        raw >= self.lower && raw <= self.upper
    }

    /// Maps `raw` onto `[0, 1]`. Endpoints map to exactly 0 and 1.
    pub fn normalize(&self, raw: f64) -> Result<ProgressScore> {
        normalize(raw, *self)
    }

    pub fn denormalize(&self, score: f64) -> f64 {
        if score == 1.0 {
            return self.upper;
        }
        self.lower + score * self.width()
    }
}

/// A score on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProgressScore(f64);

impl ProgressScore {
    pub const ZERO: ProgressScore = ProgressScore(0.0);
    pub const ONE: ProgressScore = ProgressScore(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                trial: None,
                value,
                lower: 0.0,
                upper: 1.0,
            });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ProgressScore {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProgressScore> for f64 {
    fn from(s: ProgressScore) -> f64 {
        s.0
    }
}

/// One evaluation round: the baseline's score `r0` and the candidate's `r1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPair {
    pub index: u64,
    pub r0: ProgressScore,
    pub r1: ProgressScore,
}

impl TrialPair {
    pub fn new(index: u64, r0: f64, r1: f64) -> Result<Self> {
        let wrap = |v: f64| {
            ProgressScore::new(v).map_err(|_| Error::OutOfRange {
                trial: Some(index),
                value: v,
                lower: 0.0,
                upper: 1.0,
            })
        };
        Ok(Self {
            index,
            r0: wrap(r0)?,
            r1: wrap(r1)?,
        })
    }

    /// Score difference `r1 - r0` in `[-1, 1]`.
    pub fn difference(&self) -> f64 {
        self.r1.value() - self.r0.value()
    }

    /// The same round with the roles of the two policies exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            index: self.index,
            r0: self.r1,
            r1: self.r0,
        }
    }
}

/// Raw rollout scores of one policy, keyed by trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationLog {
    pub policy_id: String,
    pub scores: Vec<(u64, f64)>,
    pub bounds: ScoreBounds,
}

impl EvaluationLog {
    pub fn new(policy_id: impl Into<String>, bounds: ScoreBounds) -> Self {
        Self {
            policy_id: policy_id.into(),
            scores: Vec::new(),
            bounds,
        }
    }

    /// Builds a log with contiguous indices `1..=scores.len()`.
    pub fn from_scores(policy_id: impl Into<String>, bounds: ScoreBounds, scores: &[f64]) -> Self {
        Self {
            policy_id: policy_id.into(),
            scores: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (i as u64 + 1, s))
                .collect(),
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Normalized scores sorted by trial index, checked for range, duplicate
    /// indices and gaps. Indices must run contiguously from 1.
    pub fn normalized(&self) -> Result<Vec<ProgressScore>> {
        let mut sorted = self.scores.clone();
        sorted.sort_by_key(|&(i, _)| i);
        let mut out = Vec::with_capacity(sorted.len());
        for (pos, &(index, raw)) in sorted.iter().enumerate() {
            let expected = pos as u64 + 1;
            if index != expected {
                let reason = if pos > 0 && sorted[pos - 1].0 == index {
                    format!("duplicate trial index {index}")
                } else {
                    format!("missing trial {expected} (next present index is {index})")
                };
                return Err(Error::MalformedLog {
                    policy: self.policy_id.clone(),
                    reason,
                });
            }
            let score = normalize(raw, self.bounds).map_err(|e| match e {
                Error::OutOfRange {
                    value,
                    lower,
                    upper,
                    ..
                } => Error::OutOfRange {
                    trial: Some(index),
                    value,
                    lower,
                    upper,
                },
                other => other,
            })?;
            out.push(score);
        }
        Ok(out)
    }

    /// Mean normalized score; `None` for an empty log.
    pub fn mean_normalized(&self) -> Result<Option<f64>> {
        let scores = self.normalized()?;
        if scores.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            scores.iter().map(|s| s.value()).sum::<f64>() / scores.len() as f64,
        ))
    }
}

/// `(raw - lower) / (upper - lower)`, accepting both endpoints.
pub fn normalize(raw: f64, bounds: ScoreBounds) -> Result<ProgressScore> {
    if !bounds.contains(raw) {
        return Err(Error::OutOfRange {
            trial: None,
            value: raw,
            lower: bounds.lower,
            upper: bounds.upper,
        });
    }
    if raw == bounds.upper {
        return Ok(ProgressScore::ONE);
    }
    let v = (raw - bounds.lower) / bounds.width();
    Ok(ProgressScore(v.clamp(0.0, 1.0)))
}

/// Paired rounds plus the number of trailing trials only one log had.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedStreams {
    pub pairs: Vec<TrialPair>,
    pub unmatched: usize,
}

/// Pairs two logs by trial index. Each log is normalized with its own bounds.
pub fn pair_streams(log0: &EvaluationLog, log1: &EvaluationLog) -> Result<PairedStreams> {
    let s0 = log0.normalized()?;
    let s1 = log1.normalized()?;
    let n = s0.len().min(s1.len());
    let pairs = (0..n)
        .map(|i| TrialPair {
            index: i as u64 + 1,
            r0: s0[i],
            r1: s1[i],
        })
        .collect();
    Ok(PairedStreams {
        pairs,
        unmatched: s0.len().max(s1.len()) - n,
    })
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    trial: u64,
    policy: String,
    score: f64,
}

/// Reads `trial,policy,score` rows into one log per policy, in order of first
/// appearance. Every score is checked against `bounds`.
pub fn read_logs_csv<R: Read>(reader: R, bounds: ScoreBounds) -> Result<Vec<EvaluationLog>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
    let expected = ["trial", "policy", "score"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Csv {
            line: 1,
            reason: format!(
                "expected header `trial,policy,score`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut logs: BTreeMap<String, EvaluationLog> = BTreeMap::new();
    let mut seen: BTreeMap<(String, u64), u64> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = record.deserialize(Some(&headers)).map_err(|e| Error::Csv {
            line,
            reason: e.to_string(),
        })?;
        if !row.score.is_finite() {
            return Err(Error::Csv {
                line,
                reason: format!("non-finite score `{}`", row.score),
            });
        }
        if !bounds.contains(row.score) {
            return Err(Error::Csv {
                line,
                reason: Error::OutOfRange {
                    trial: Some(row.trial),
                    value: row.score,
                    lower: bounds.lower,
                    upper: bounds.upper,
                }
                .to_string(),
            });
        }
        if let Some(prev) = seen.insert((row.policy.clone(), row.trial), line) {
            return Err(Error::Csv {
                line,
                reason: format!(
                    "duplicate trial {} for policy `{}` (first seen on line {prev})",
                    row.trial, row.policy
                ),
            });
        }
        let log = logs.entry(row.policy.clone()).or_insert_with(|| {
            order.push(row.policy.clone());
            EvaluationLog::new(row.policy.clone(), bounds)
        });
        log.scores.push((row.trial, row.score));
    }
    Ok(order
        .into_iter()
        .map(|p| logs.remove(&p).expect("policy recorded in order"))
        .collect())
}

/// Writes logs back out in the `trial,policy,score` format.
pub fn write_logs_csv<W: std::io::Write>(writer: W, logs: &[EvaluationLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Csv {
        line: 0,
        reason: e.to_string(),
    };
    wtr.write_record(["trial", "policy", "score"]).map_err(io)?;
    for log in logs {
        for &(trial, score) in &log.scores {
            wtr.write_record([trial.to_string(), log.policy_id.clone(), score.to_string()])
                .map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| Error::Csv {
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(())
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Csv {
        line,
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(0.0, ScoreBounds::UNIT).unwrap().value(), 0.0);
        let pusher = ScoreBounds::new(-60.0, 0.0).unwrap();
        let s = normalize(-35.7, pusher).unwrap().value();
        assert!((s - 0.405).abs() < 1e-12, "{s}");
        assert_eq!(normalize(0.0, pusher).unwrap().value(), 1.0);
        assert_eq!(normalize(-60.0, pusher).unwrap().value(), 0.0);
    }

    #[test]
    fn normalize_rejects_out_of_range_with_trial() {
        assert!(matches!(
            normalize(1.5, ScoreBounds::UNIT),
            Err(Error::OutOfRange { .. })
        ));
        let log = EvaluationLog::from_scores("a", ScoreBounds::UNIT, &[0.2, 1.2]);
        match log.normalized() {
            Err(Error::OutOfRange { trial, .. }) => assert_eq!(trial, Some(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bounds_validation() {
        assert!(ScoreBounds::new(1.0, 1.0).is_err());
        assert!(ScoreBounds::new(2.0, 1.0).is_err());
        assert!(ScoreBounds::new(f64::NAN, 1.0).is_err());
        assert!(ScoreBounds::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn pairing_truncates_and_reports_unmatched() {
        let a = EvaluationLog::from_scores("a", ScoreBounds::UNIT, &[0.1; 5]);
        let b = EvaluationLog::from_scores("b", ScoreBounds::UNIT, &[0.9; 5]);
        let p = pair_streams(&a, &b).unwrap();
        assert_eq!(p.pairs.len(), 5);
        assert_eq!(p.unmatched, 0);

        let c = EvaluationLog::from_scores("c", ScoreBounds::UNIT, &[0.9; 3]);
        let p = pair_streams(&a, &c).unwrap();
        assert_eq!(p.pairs.len(), 3);
        assert_eq!(p.unmatched, 2);
        assert_eq!(
            p.pairs.iter().map(|x| x.index).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );

        let empty = EvaluationLog::new("e", ScoreBounds::UNIT);
        assert!(pair_streams(&empty, &empty).unwrap().pairs.is_empty());
    }

    #[test]
    fn pairing_rejects_duplicates_and_gaps() {
        let mut dup = EvaluationLog::from_scores("d", ScoreBounds::UNIT, &[0.1, 0.2]);
        dup.scores.push((2, 0.3));
        let ok = EvaluationLog::from_scores("o", ScoreBounds::UNIT, &[0.1, 0.2, 0.3]);
        let err = pair_streams(&dup, &ok).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let gap = EvaluationLog {
            policy_id: "g".into(),
            scores: vec![(1, 0.1), (3, 0.2)],
            bounds: ScoreBounds::UNIT,
        };
        let err = pair_streams(&gap, &ok).unwrap_err();
        assert!(err.to_string().contains("missing trial 2"), "{err}");
    }

    #[test]
    fn unsorted_log_pairs_by_index() {
        let a = EvaluationLog {
            policy_id: "a".into(),
            scores: vec![(2, 0.2), (1, 0.1)],
            bounds: ScoreBounds::UNIT,
        };
        let b = EvaluationLog::from_scores("b", ScoreBounds::UNIT, &[0.5, 0.6]);
        let p = pair_streams(&a, &b).unwrap();
        assert_eq!(p.pairs[0].r0.value(), 0.1);
        assert_eq!(p.pairs[1].r0.value(), 0.2);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let text = "trial,policy,score\n1,A,0.1\n1,B,0.9\n2,A,0.2\n2,B,0.8\n";
        let logs = read_logs_csv(text.as_bytes(), ScoreBounds::UNIT).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].policy_id, "A");
        assert_eq!(logs[1].scores, vec![(1, 0.9), (2, 0.8)]);

        let mut buf = Vec::new();
        write_logs_csv(&mut buf, &logs).unwrap();
        let again = read_logs_csv(buf.as_slice(), ScoreBounds::UNIT).unwrap();
        assert_eq!(again, logs);

        let bad = "trial,policy,score\n1,A,0.1\n2,A,abc\n";
        match read_logs_csv(bad.as_bytes(), ScoreBounds::UNIT) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let out = "trial,policy,score\n1,A,0.1\n2,A,7\n";
        match read_logs_csv(out.as_bytes(), ScoreBounds::UNIT) {
            Err(Error::Csv { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("trial 2"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let header = "n,who,value\n1,A,0.1\n";
        assert!(matches!(
            read_logs_csv(header.as_bytes(), ScoreBounds::UNIT),
            Err(Error::Csv { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_is_affine_and_invertible(
            lower in -1e6f64..1e6,
            width in 1e-3f64..1e6,
            t in 0.0f64..=1.0,
        ) {
            let b = ScoreBounds::new(lower, lower + width).unwrap();
            let raw = (lower + t * width).min(b.upper());
            let s = b.normalize(raw).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&s));
            let back = b.denormalize(s);
            let scale = raw.abs().max(width).max(1.0);
            prop_assert!((back - raw).abs() <= 1e-12 * scale);
        }

        #[test]
        fn normalize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let bounds = ScoreBounds::new(-3.0, 7.0).unwrap();
            let (ra, rb) = (-3.0 + 10.0 * a, -3.0 + 10.0 * b);
            let (sa, sb) = (bounds.normalize(ra.min(7.0)).unwrap(), bounds.normalize(rb.min(7.0)).unwrap());
            if ra <= rb { prop_assert!(sa <= sb); } else { prop_assert!(sa >= sb); }
        }

        #[test]
        fn pairing_length_is_min(n0 in 0usize..40, n1 in 0usize..40) {
            let a = EvaluationLog::from_scores("a", ScoreBounds::UNIT, &vec![0.3; n0]);
            let b = EvaluationLog::from_scores("b", ScoreBounds::UNIT, &vec![0.6; n1]);
            let p = pair_streams(&a, &b).unwrap();
            prop_assert_eq!(p.pairs.len(), n0.min(n1));
            prop_assert_eq!(p.unmatched, n0.max(n1) - n0.min(n1));
        }
    }
}
