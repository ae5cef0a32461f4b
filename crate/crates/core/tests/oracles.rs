//! Independent checks of the engine against brute-force and closed-form
//! oracles.

use nscore::evidence::{multiplier, run, Bins, TestConfig, Verdict};
use nscore::metrics::{ScoreBounds, TrialPair};
use nscore::simlab::{gen_polynomial_density, PolynomialDensity};
use nscore::wsr::{wsr_cs, WsrConfig};
use nscore::xi_opt::{
    decompose, empirical_joint, growth_derivative, growth_objective, optimize_xi, BinnedJointModel,
    BinningScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const SUPPORT: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Every weight vector on the support with entries in {0, .25, .5, .75, 1}.
fn quarter_distributions() -> Vec<[f64; 5]> {
    let mut out = Vec::new();
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            for c in 0..=4 - a - b {
                for d in 0..=4 - a - b - c {
                    let e = 4 - a - b - c - d;
                    out.push([a, b, c, d, e].map(|w| w as f64 / 4.0));
                }
            }
        }
    }
    out
}

#[test]
fn null_pairs_never_grow_in_expectation() {
    let dists = quarter_distributions();
    assert_eq!(dists.len(), 70);
    let mut max_alt: f64 = 0.0;
    for d0 in &dists {
        for d1 in &dists {
            let mean = |d: &[f64; 5]| d.iter().zip(SUPPORT).map(|(w, s)| w * s).sum::<f64>();
            let is_null = mean(d0) >= mean(d1);
            for step in 0..=10 {
                let xi = step as f64 / 10.0;
                let mut e = 0.0;
                for (i, &w0) in d0.iter().enumerate() {
                    for (j, &w1) in d1.iter().enumerate() {
                        let pair = TrialPair::new(1, SUPPORT[i], SUPPORT[j]).unwrap();
                        e += w0 * w1 * multiplier(xi, &pair);
                    }
                }
                if is_null {
                    assert!(e <= 1.0 + 1e-12, "E = {e} for {d0:?} vs {d1:?} at ξ={xi}");
                } else {
                    max_alt = max_alt.max(e);
                }
            }
        }
    }
    assert!(max_alt > 1.0);
}

fn random_model(k: usize, rng: &mut ChaCha8Rng) -> BinnedJointModel {
    let n = rng.random_range(1..200u64);
    let skew: f64 = rng.random_range(0.0..1.0);
    let mut c0 = vec![0u64; k];
    let mut c1 = vec![0u64; k];
    for _ in 0..n {
        let a = (rng.random::<f64>().powf(1.0 + skew) * k as f64) as usize;
        let b = (rng.random::<f64>().powf(1.0 / (1.0 + skew)) * k as f64) as usize;
        c0[a.min(k - 1)] += 1;
        c1[b.min(k - 1)] += 1;
    }
    BinnedJointModel::from_counts(c0, c1).unwrap()
}

#[test]
fn optimizer_matches_dense_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (idx, k) in [2usize, 5, 11, 101]
        .into_iter()
        .cycle()
        .take(60)
        .enumerate()
    {
        let model = random_model(k, &mut rng);
        let scheme = BinningScheme::new(k).unwrap();
        let decomp = decompose(&empirical_joint(&model, 1.0 / k as f64));
        let xi = optimize_xi(&model, 0.999);
        let got = growth_objective(xi, &decomp, scheme).unwrap();
        let best = (0..=9990)
            .map(|s| growth_objective(s as f64 * 1e-4, &decomp, scheme).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            got >= best - 1e-3,
            "model {idx} (k={k}): {got} vs grid {best}"
        );
    }
}

#[test]
fn derivative_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let k = [2usize, 5, 11, 101][rng.random_range(0..4)];
        let model = random_model(k, &mut rng);
        let scheme = BinningScheme::new(k).unwrap();
        let decomp = decompose(&empirical_joint(&model, 1.0 / k as f64));
        let xi: f64 = rng.random_range(0.01..0.9);
        let h = 1e-6;
        let fd = (growth_objective(xi + h, &decomp, scheme).unwrap()
            - growth_objective(xi - h, &decomp, scheme).unwrap())
            / (2.0 * h);
        let an = growth_derivative(xi, &decomp, scheme);
        let scale = an.abs().max(1e-3);
        assert!(
            (fd - an).abs() / scale < 1e-6,
            "k={k} ξ={xi}: fd {fd} vs analytic {an}"
        );
    }
}

#[test]
fn null_streams_reject_rarely() {
    let mut rejections = 0;
    let streams = 300;
    for s in 0..streams {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + s);
        let pairs: Vec<TrialPair> = (1..=300)
            .map(|i| {
                TrialPair::new(
                    i,
                    rng.random_bool(0.5) as u8 as f64,
                    rng.random_bool(0.5) as u8 as f64,
                )
                .unwrap()
            })
            .collect();
        let cfg = TestConfig::new(0.05, 300, Bins::Fixed(2)).unwrap();
        if run(&pairs, &cfg).unwrap().decision.verdict == Verdict::RejectNull {
            rejections += 1;
        }
    }
    let bound = 0.05 + 3.0 * (0.05f64 * 0.95 / streams as f64).sqrt();
    assert!(
        (rejections as f64 / streams as f64) <= bound,
        "{rejections} rejections"
    );
}

fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn uniform_density_passes_ks() {
    let d = PolynomialDensity::from_coefficients(vec![1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut xs: Vec<f64> = (0..20_000).map(|_| d.sample(&mut rng).value()).collect();
    let stat = ks_statistic(&mut xs, |x| x);
    // 1% critical value of the one-sample KS statistic
    assert!(stat < 1.628 / (20_000f64).sqrt(), "KS = {stat}");
}

#[test]
fn linear_density_sample_mean() {
    let d = PolynomialDensity::from_coefficients(vec![0.0, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let mean = (0..n).map(|_| d.sample(&mut rng).value()).sum::<f64>() / n as f64;
    let se = (1.0f64 / 18.0 / n as f64).sqrt();
    let z = (mean - 2.0 / 3.0) / se;
    let p = 2.0 * (1.0 - Normal::standard().cdf(z.abs()));
    assert!(p > 0.001, "mean {mean}, z {z}");
    let mut xs: Vec<f64> = (0..20_000).map(|_| d.sample(&mut rng).value()).collect();
    assert!(ks_statistic(&mut xs, |x| x * x) < 1.628 / (20_000f64).sqrt());
}

#[test]
fn sharp_density_samples_match_its_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for order in [6usize, 10] {
        let d = gen_polynomial_density(order, &mut rng).unwrap();
        let mut xs: Vec<f64> = (0..20_000).map(|_| d.sample(&mut rng).value()).collect();
        let stat = ks_statistic(&mut xs, |x| d.cdf(x));
        assert!(
            stat < 1.628 / (20_000f64).sqrt(),
            "order {order}: KS = {stat}"
        );
    }
}

#[test]
fn wsr_covers_the_true_mean() {
    let streams = 200;
    let mut covered = 0;
    for s in 0..streams {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
        let obs: Vec<f64> = (0..300)
            .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        let cs = wsr_cs(&obs, ScoreBounds::UNIT, &WsrConfig::default()).unwrap();
        if cs
            .intervals
            .iter()
            .all(|iv| iv.lower <= 0.3 + 1e-3 && 0.3 - 1e-3 <= iv.upper)
        {
            covered += 1;
        }
        for w in cs.intervals.windows(2) {
            assert!(w[1].lower >= w[0].lower - 1e-12 && w[1].upper <= w[0].upper + 1e-12);
        }
    }
    assert!(
        covered as f64 / streams as f64 >= 0.95 - 3.0 * (0.05f64 * 0.95 / streams as f64).sqrt()
    );
}

#[test]
fn scores_are_used_exactly_not_binned() {
    // two runs whose scores fall in the same bins but differ in value must
    // produce different wealth
    let cfg = TestConfig::new(0.05, 10, Bins::Fixed(11)).unwrap();
    let a: Vec<TrialPair> = (1..=5)
        .map(|i| TrialPair::new(i, 0.1, 0.6).unwrap())
        .collect();
    let b: Vec<TrialPair> = (1..=5)
        .map(|i| TrialPair::new(i, 0.12, 0.65).unwrap())
        .collect();
    let ra = run(&a, &cfg).unwrap();
    let rb = run(&b, &cfg).unwrap();
    assert_eq!(ra.trace[1].xi, rb.trace[1].xi);
    assert!(ra.trace[1].xi > 0.0);
    assert_ne!(ra.trace.last().unwrap().x, rb.trace.last().unwrap().x);
}
