//! Acceptance suite. Runs every criterion in sequence, prints one
//! `[PASS]`/`[FAIL]` line per criterion and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use nscore::compare::{iid_subsample, multi_compare, MultiComparisonConfig};
use nscore::evidence::{multiplier, Bins};
use nscore::metrics::{EvaluationLog, ScoreBounds, TrialPair};
use nscore::sequential::Method;
use nscore::wsr::{wsr_cs, WsrConfig};
use nscore::xi_opt::{
    decompose, empirical_joint, growth_derivative, growth_objective, optimize_xi, BinnedJointModel,
    BinningScheme,
};
use nscore_cli::{calibrate, cmd_simulate, ResultRow, SimulateArgs, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

// 1 ------------------------------------------------------------------------

fn quarter_distributions() -> Vec<[f64; 5]> {
    let mut out = Vec::new();
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            for c in 0..=4 - a - b {
                for d in 0..=4 - a - b - c {
                    out.push([a, b, c, d, 4 - a - b - c - d].map(|w| w as f64 / 4.0));
                }
            }
        }
    }
    out
}

fn supermartingale_exhaustive() -> Outcome {
    const SUPPORT: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
    let dists = quarter_distributions();
    let mean = |d: &[f64; 5]| d.iter().zip(SUPPORT).map(|(w, s)| w * s).sum::<f64>();
    let (mut null_cases, mut worst_null, mut best_alt) =
        (0u64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for d0 in &dists {
        for d1 in &dists {
            let is_null = mean(d0) >= mean(d1);
            for step in 0..=10 {
                let xi = step as f64 / 10.0;
                let mut e = 0.0;
                for (i, &w0) in d0.iter().enumerate() {
                    for (j, &w1) in d1.iter().enumerate() {
                        let pair = TrialPair::new(1, SUPPORT[i], SUPPORT[j]).expect("unit scores");
                        e += w0 * w1 * multiplier(xi, &pair);
                    }
                }
                if is_null {
                    null_cases += 1;
                    worst_null = worst_null.max(e);
                } else {
                    best_alt = best_alt.max(e);
                }
            }
        }
    }
    outcome(
        worst_null <= 1.0 + 1e-12 && best_alt > 1.0,
        format!(
            "{null_cases} null cases, max E = {worst_null:.15}; best alternative E = {best_alt:.3}"
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn type1_calibration() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha, bound) in [(0.05, 0.071), (0.01, 0.0194)] {
        for k in [2usize, 11] {
            let r = calibrate(
                alpha,
                1000,
                "bernoulli:0.5",
                500,
                Method::NScore(Bins::Fixed(k)),
                20_240 + k as u64,
            )
            .expect("valid calibration");
            pass &= r.rate <= bound;
            parts.push(format!("α={alpha} k={k}: {:.4}", r.rate));
        }
    }
    outcome(pass, parts.join(", "))
}

// 3 ------------------------------------------------------------------------

/// Growth objective evaluated from scratch: builds `p̂₀ p̂₁ᵀ` from raw counts
/// and folds every cell pair into per-lag weights.
struct OracleObjective {
    gain: Vec<f64>,
    loss: Vec<f64>,
    floor: Vec<f64>,
    k: usize,
}

impl OracleObjective {
    fn new(c0: &[u64], c1: &[u64]) -> Self {
        let k = c0.len();
        let pc = 1.0 / k as f64;
        let n0: u64 = c0.iter().sum();
        let n1: u64 = c1.iter().sum();
        let p0: Vec<f64> = c0
            .iter()
            .map(|&c| (c as f64 + pc) / (n0 as f64 + k as f64 * pc))
            .collect();
        let p1: Vec<f64> = c1
            .iter()
            .map(|&c| (c as f64 + pc) / (n1 as f64 + k as f64 * pc))
            .collect();
        let (mut gain, mut loss, mut floor) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for i in 0..k {
            for j in i + 1..k {
                let up = p0[i] * p1[j];
                let down = p0[j] * p1[i];
                let d = j - i;
                if up > down {
                    gain[d] += up - down;
                } else {
                    loss[d] += down - up;
                }
                floor[d] += up.min(down);
            }
        }
        Self {
            gain,
            loss,
            floor,
            k,
        }
    }

    fn eval(&self, xi: f64) -> f64 {
        (1..self.k)
            .map(|d| {
                let dc = d as f64 / (self.k - 1) as f64;
                self.gain[d] * (1.0 + xi * dc).ln()
                    + self.loss[d] * (1.0 - xi * dc).ln()
                    + self.floor[d] * (1.0 - xi * xi * dc * dc).ln()
            })
            .sum()
    }
}

fn fuzzed_counts(k: usize, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<u64>) {
    let n = rng.random_range(1..300u64);
    let tilt: f64 = rng.random_range(-1.0..1.0);
    let mut c0 = vec![0u64; k];
    let mut c1 = vec![0u64; k];
    for _ in 0..n {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let a = (u.powf((1.0 + tilt).max(0.2)) * k as f64) as usize;
        let b = (v.powf((1.0 - tilt).max(0.2)) * k as f64) as usize;
        c0[a.min(k - 1)] += 1;
        c1[b.min(k - 1)] += 1;
    }
    (c0, c1)
}

fn xi_oracle() -> Outcome {
    let cap = 0.999;
    let mut rng = ChaCha8Rng::seed_from_u64(31_337);
    let mut worst_gap: f64 = 0.0;
    let mut oracle_mismatch: f64 = 0.0;
    for m in 0..1000 {
        let k = [2usize, 5, 11, 101][m % 4];
        let (c0, c1) = fuzzed_counts(k, &mut rng);
        let oracle = OracleObjective::new(&c0, &c1);
        let model = BinnedJointModel::from_counts(c0, c1).expect("matching lengths");
        if m % 50 == 0 {
            let scheme = BinningScheme::new(k).expect("k >= 2");
            let decomp = decompose(&empirical_joint(&model, 1.0 / k as f64));
            for xi in [0.1, 0.5, 0.9] {
                let lib = growth_objective(xi, &decomp, scheme).expect("ξ in range");
                oracle_mismatch = oracle_mismatch.max((lib - oracle.eval(xi)).abs());
            }
        }
        let xi = optimize_xi(&model, cap);
        let got = oracle.eval(xi);
        let steps = (cap / 1e-4).floor() as usize;
        let best = (0..=steps)
            .map(|s| oracle.eval(s as f64 * 1e-4))
            .fold(f64::NEG_INFINITY, f64::max);
        worst_gap = worst_gap.max(best - got);
    }

    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let k = [2usize, 5, 11, 101][rng.random_range(0..4)];
        let (c0, c1) = fuzzed_counts(k, &mut rng);
        let model = BinnedJointModel::from_counts(c0, c1).expect("matching lengths");
        let scheme = BinningScheme::new(k).expect("k >= 2");
        let decomp = decompose(&empirical_joint(&model, 1.0 / k as f64));
        let xi: f64 = rng.random_range(0.0..0.9);
        let h = 1e-5;
        let f = |x: f64| growth_objective(x, &decomp, scheme).expect("ξ in range");
        let fd = (f(xi + h) - f(xi - h)) / (2.0 * h);
        let an = growth_derivative(xi, &decomp, scheme);
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-12);
        worst_rel = worst_rel.max(rel);
    }
    outcome(
        worst_gap <= 1e-3 && worst_rel <= 1e-6 && oracle_mismatch < 1e-12,
        format!(
            "1000 models: max grid shortfall {worst_gap:.2e}; derivative max rel err {worst_rel:.2e} at 100 points; oracle vs library objective {oracle_mismatch:.1e}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn by_method(rows: &[ResultRow], method: Method) -> (f64, f64) {
    let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
    let k = sel.len() as f64;
    (
        sel.iter().map(|r| r.result.power).sum::<f64>() / k,
        sel.iter().map(|r| r.result.mean_ttd).sum::<f64>() / k,
    )
}

fn bernoulli_power() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let nscore2 = Method::NScore(Bins::Fixed(2));
    let args = SimulateArgs {
        suite: Suite::Bernoulli,
        methods: vec![nscore2, Method::Wsr],
        redraws: 100,
        n: 1000,
        alpha: 0.05,
        seed: 1,
        p0: vec![0.2, 0.45, 0.7],
        gap: vec![0.1],
        min_gap: 0.05,
    };
    let rows = cmd_simulate(&args, dir.path()).expect("simulation runs");
    let (pn, tn) = by_method(&rows, nscore2);
    let (pw, tw) = by_method(&rows, Method::Wsr);
    outcome(
        pn >= 0.85 && pw <= pn - 0.20 && tn < tw,
        format!("N-SCORE₂ power {pn:.3}, TTD {tn:.1}; WSR power {pw:.3}, TTD {tw:.1}"),
    )
}

// 5 ------------------------------------------------------------------------

fn polynomial_ttd() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let large_k = Method::NScore(Bins::Adaptive);
    let args = SimulateArgs {
        suite: Suite::Polynomial,
        methods: vec![large_k, Method::Wsr],
        redraws: 200,
        n: 1000,
        alpha: 0.05,
        seed: 7,
        p0: vec![],
        gap: vec![],
        min_gap: 0.05,
    };
    let rows = cmd_simulate(&args, dir.path()).expect("simulation runs");
    let (pn, tn) = by_method(&rows, large_k);
    let (pw, tw) = by_method(&rows, Method::Wsr);
    let ratio = tn / tw;
    outcome(
        ratio <= 1.0,
        format!(
            "TTD N-SCORE(k=101) {tn:.1} vs WSR {tw:.1}, ratio {ratio:.3} ({:.1}% saved); power {pn:.3} vs {pw:.3}",
            100.0 * (1.0 - ratio)
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn wsr_coverage() -> Outcome {
    let streams = 500;
    let mut covered = 0;
    let mut nested = true;
    for s in 0..streams {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + s as u64);
        let diffs: Vec<f64> = (0..500)
            .map(|_| (rng.random_bool(0.5) as u8 as f64) - (rng.random_bool(0.5) as u8 as f64))
            .collect();
        let cs = wsr_cs(&diffs, ScoreBounds::DIFF, &WsrConfig::default()).expect("valid stream");
        if cs.intervals.iter().all(|iv| iv.contains(0.0)) {
            covered += 1;
        }
        nested &= cs
            .intervals
            .windows(2)
            .all(|w| w[1].width() <= w[0].width() + 1e-12);
    }
    let rate = covered as f64 / streams as f64;
    outcome(
        rate >= 0.93 && nested,
        format!("simultaneous coverage {rate:.3} over {streams} streams of 500; widths nonincreasing: {nested}"),
    )
}

// 7 ------------------------------------------------------------------------

fn letters_sound(
    letters: &BTreeMap<String, String>,
    separated: &[(String, String)],
    ids: &[String],
) -> bool {
    let share = |a: &str, b: &str| letters[a].chars().any(|c| letters[b].contains(c));
    ids.iter().enumerate().all(|(i, a)| {
        ids[i + 1..].iter().all(|b| {
            let sep = separated
                .iter()
                .any(|(x, y)| (x == a && y == b) || (x == b && y == a));
            share(a, b) != sep
        })
    })
}

fn multi_comparison_fwer() -> Outcome {
    let redraws = 500;
    let ids: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
    let config = MultiComparisonConfig {
        global_alpha: 0.05,
        method: Method::NScore(Bins::Fixed(2)),
        n_max: 500,
    };
    let mut false_families = 0;
    let mut sound = true;
    for r in 0..redraws {
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + r);
        let logs: Vec<EvaluationLog> = ids
            .iter()
            .map(|id| {
                let scores: Vec<f64> = (0..500)
                    .map(|_| rng.random_bool(0.5) as u8 as f64)
                    .collect();
                EvaluationLog::from_scores(id.clone(), ScoreBounds::UNIT, &scores)
            })
            .collect();
        let report = multi_compare(&logs, &config).expect("valid comparison");
        let separated = report.separated();
        if !separated.is_empty() {
            false_families += 1;
        }
        sound &= letters_sound(&report.letters, &separated, &ids);
    }
    let rate = false_families as f64 / redraws as f64;
    let bound = 0.05 + 3.0 * se(0.05, redraws as usize);
    outcome(
        rate <= bound && sound,
        format!("family-wise false separation {rate:.3} (bound {bound:.4}); letters sound on every redraw: {sound}"),
    )
}

// 8 ------------------------------------------------------------------------

fn simulate_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut identical = true;
    for suite in [Suite::Bernoulli, Suite::Polynomial] {
        let args = SimulateArgs {
            suite,
            methods: vec![Method::NScore(Bins::Fixed(11)), Method::Wsr],
            redraws: 20,
            n: 200,
            alpha: 0.05,
            seed: 12_345,
            p0: vec![],
            gap: vec![],
            min_gap: 0.05,
        };
        let a = dir.path().join(format!("{suite:?}-a"));
        let b = dir.path().join(format!("{suite:?}-b"));
        cmd_simulate(&args, &a).expect("simulation runs");
        cmd_simulate(&args, &b).expect("simulation runs");
        for f in ["results.csv", "results.json"] {
            identical &= fs::read(a.join(f)).expect("output written")
                == fs::read(b.join(f)).expect("output written");
        }
    }
    outcome(
        identical,
        format!("results.csv and results.json byte-identical for both suites: {identical}"),
    )
}

// 9 ------------------------------------------------------------------------

fn subsample_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logs: Vec<EvaluationLog> = (0..4)
        .map(|p| {
            let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
            EvaluationLog::from_scores(format!("p{p}"), ScoreBounds::UNIT, &scores)
        })
        .collect();
    let thinned = iid_subsample(&logs, 2025).expect("equal lengths");
    let counts: Vec<usize> = thinned.iter().map(|l| l.len()).collect();
    let total: usize = counts.iter().sum();
    let expected = total as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new(3.0).expect("df > 0").inverse_cdf(0.99);
    outcome(
        total == 1000 && chi2 < critical,
        format!("counts {counts:?} sum {total}; χ² = {chi2:.3} (1% critical {critical:.3})"),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "supermartingale exhaustive check",
            Duration::from_secs(60),
            supermartingale_exhaustive,
        ),
        (
            "type-1 calibration",
            Duration::from_secs(120),
            type1_calibration,
        ),
        ("optimal-bet oracle", Duration::from_secs(60), xi_oracle),
        (
            "Bernoulli power and TTD",
            Duration::from_secs(300),
            bernoulli_power,
        ),
        (
            "polynomial-density TTD",
            Duration::from_secs(600),
            polynomial_ttd,
        ),
        ("WSR coverage", Duration::from_secs(180), wsr_coverage),
        (
            "multi-comparison soundness",
            Duration::from_secs(600),
            multi_comparison_fwer,
        ),
        (
            "simulate determinism",
            Duration::from_secs(600),
            simulate_determinism,
        ),
        (
            "subsample partition",
            Duration::from_secs(60),
            subsample_partition,
        ),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "[{}] criterion {}: {name}: {} ({:.1}s{})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            elapsed.as_secs_f64(),
            if in_time {
                String::new()
            } else {
                format!(", over the {}s budget", budget.as_secs())
            }
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
