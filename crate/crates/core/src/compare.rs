//! Comparing more than two policies: Bonferroni-split pairwise tests, a
//! compact letter display of the outcome, and thinning of shared-environment
//! logs into independent per-policy streams.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{validate_alpha, Decision, Verdict};
use crate::metrics::{pair_streams, EvaluationLog};
use crate::sequential::{run_pairs, Method};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiComparisonConfig {
    pub global_alpha: f64,
    pub method: Method,
    pub n_max: u64,
}

impl MultiComparisonConfig {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.global_alpha)?;
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-pair level `global_alpha / C(K, 2)`.
    pub fn pair_alpha(&self, policies: usize) -> f64 {
        self.global_alpha / pair_count(policies) as f64
    }
}

pub fn pair_count(policies: usize) -> usize {
    policies * policies.saturating_sub(1) / 2
}

/// All unordered index pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn pair_indices(policies: usize) -> Vec<(usize, usize)> {
    (0..policies)
        .flat_map(|i| (i + 1..policies).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    /// Lower-index policy, tested as the baseline.
    pub baseline: String,
    /// Higher-index policy; a rejection means it beats the baseline.
    pub candidate: String,
    pub alpha: f64,
    pub decision: Decision,
    pub p_trace: Vec<f64>,
    pub trials: u64,
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub mean: f64,
    pub trials: u64,
    pub letters: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub method: Method,
    pub global_alpha: f64,
    pub pair_alpha: f64,
    pub pairs: Vec<PairResult>,
    pub policies: Vec<PolicySummary>,
    pub letters: BTreeMap<String, String>,
    /// Sum over policies of the rollouts each one needed; a rollout reused by
    /// several pairwise tests counts once.
    pub total_trials: u64,
}

impl ComparisonReport {
    pub fn separated(&self) -> Vec<(String, String)> {
        self.pairs
            .iter()
            .filter(|p| p.decision.verdict == Verdict::RejectNull)
            .map(|p| (p.baseline.clone(), p.candidate.clone()))
            .collect()
    }
}

/// Tests every unordered pair once, oriented by log order (earlier log is the
/// baseline), each at `global_alpha / C(K, 2)`. A pair stops at its first
/// rejection or after `min(n_max, paired trials)`.
pub fn multi_compare(
    logs: &[EvaluationLog],
    config: &MultiComparisonConfig,
) -> Result<ComparisonReport> {
    config.validate()?;
    if logs.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 policies to compare, got {}",
            logs.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for log in logs {
        if !ids.insert(log.policy_id.as_str()) {
            return Err(Error::Config(format!(
                "duplicate policy id `{}`",
                log.policy_id
            )));
        }
    }
    let alpha = config.pair_alpha(logs.len());
    let mut pairs = Vec::new();
    let mut used = vec![0u64; logs.len()];
    for (i, j) in pair_indices(logs.len()) {
        let paired = pair_streams(&logs[i], &logs[j])?;
        if paired.pairs.is_empty() {
            return Err(Error::Config(format!(
                "policies `{}` and `{}` share no trials",
                logs[i].policy_id, logs[j].policy_id
            )));
        }
        let n_max = config.n_max.min(paired.pairs.len() as u64);
        let test = run_pairs(config.method, alpha, n_max, &paired.pairs)?;
        let trials = test.n();
        used[i] = used[i].max(trials);
        used[j] = used[j].max(trials);
        pairs.push(PairResult {
            baseline: logs[i].policy_id.clone(),
            candidate: logs[j].policy_id.clone(),
            alpha,
            decision: test.decision(),
            p_trace: test.p_trace().to_vec(),
            trials,
            unmatched: paired.unmatched,
        });
    }
    let means: Vec<(String, f64)> = logs
        .iter()
        .map(|l| Ok((l.policy_id.clone(), l.mean_normalized()?.unwrap_or(0.0))))
        .collect::<Result<_>>()?;
    let separated: Vec<(String, String)> = pairs
        .iter()
        .filter(|p| p.decision.verdict == Verdict::RejectNull)
        .map(|p| (p.baseline.clone(), p.candidate.clone()))
        .collect();
    let letters = letter_groups(&separated, &means);
    let policies = means
        .iter()
        .zip(&used)
        .map(|((id, mean), &trials)| PolicySummary {
            policy: id.clone(),
            mean: *mean,
            trials,
            letters: letters[id].clone(),
        })
        .collect();
    Ok(ComparisonReport {
        method: config.method,
        global_alpha: config.global_alpha,
        pair_alpha: alpha,
        pairs,
        policies,
        letters,
        total_trials: used.iter().sum(),
    })
}

/// Compact letter display by insert-and-absorb. Policies are ordered by
/// descending mean (ties by id); the first letter goes to the group holding
/// the best policy. Policies sharing a letter were never separated, and every
/// unseparated pair shares at least one letter.
pub fn letter_groups(
    separated: &[(String, String)],
    means: &[(String, f64)],
) -> BTreeMap<String, String> {
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .1
            .total_cmp(&means[a].1)
            .then_with(|| means[a].0.cmp(&means[b].0))
    });
    let rank: BTreeMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(r, &i)| (means[i].0.as_str(), r))
        .collect();
    let mut splits: Vec<(usize, usize)> = separated
        .iter()
        .filter_map(|(a, b)| {
            let (ra, rb) = (*rank.get(a.as_str())?, *rank.get(b.as_str())?);
            (ra != rb).then(|| (ra.min(rb), ra.max(rb)))
        })
        .collect();
    splits.sort_unstable();
    splits.dedup();

    let mut groups: Vec<BTreeSet<usize>> = vec![(0..means.len()).collect()];
    for &(a, b) in &splits {
        let mut next = Vec::with_capacity(groups.len() + 1);
        for g in groups {
            if g.contains(&a) && g.contains(&b) {
                let mut without_a = g.clone();
                without_a.remove(&a);
                let mut without_b = g;
                without_b.remove(&b);
                next.push(without_a);
                next.push(without_b);
            } else {
                next.push(g);
            }
        }
        groups = absorb(next);
    }
    groups.sort_by(|x, y| x.iter().cmp(y.iter()));

    let mut letters: Vec<String> = vec![String::new(); means.len()];
    for (gi, g) in groups.iter().enumerate() {
        let label = letter_label(gi);
        for &r in g {
            letters[r].push_str(&label);
        }
    }
    order
        .iter()
        .enumerate()
        .map(|(r, &i)| (means[i].0.clone(), std::mem::take(&mut letters[r])))
        .collect()
}

/// Drops duplicate groups and groups contained in another group.
fn absorb(groups: Vec<BTreeSet<usize>>) -> Vec<BTreeSet<usize>> {
    let mut kept: Vec<BTreeSet<usize>> = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let dominated = groups
            .iter()
            .enumerate()
            .any(|(j, h)| j != i && g.is_subset(h) && (g.len() < h.len() || j < i));
        if !dominated && !g.is_empty() {
            kept.push(g.clone());
        }
    }
    kept
}

fn letter_label(i: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    if i < 26 {
        (ALPHABET[i] as char).to_string()
    } else {
        format!("{}{}", ALPHABET[i % 26] as char, i / 26)
    }
}

/// Thins logs that share one environment sequence: for each environment
/// index exactly one policy, chosen uniformly at random, keeps its score.
/// Output indices are renumbered contiguously from 1.
pub fn iid_subsample(shared_logs: &[EvaluationLog], seed: u64) -> Result<Vec<EvaluationLog>> {
    let Some(first) = shared_logs.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    let mut sorted = Vec::with_capacity(shared_logs.len());
    for log in shared_logs {
        if log.len() != n {
            return Err(Error::Protocol(format!(
                "log `{}` has {} trials but `{}` has {n}",
                log.policy_id,
                log.len(),
                first.policy_id
            )));
        }
        // validates contiguity and range
        log.normalized()?;
        let mut s = log.scores.clone();
        s.sort_by_key(|&(i, _)| i);
        sorted.push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<EvaluationLog> = shared_logs
        .iter()
        .map(|l| EvaluationLog::new(l.policy_id.clone(), l.bounds))
        .collect();
    let picks: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..shared_logs.len()))
        .collect();
    for (env, pick) in picks.into_iter().enumerate() {
        let next_index = out[pick].len() as u64 + 1;
        let (_, score) = sorted[pick][env];
        out[pick].scores.push((next_index, score));
    }
    Ok(out)
}
