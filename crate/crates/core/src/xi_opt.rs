//! Binned model of the two score distributions and the online choice of the
//! betting coefficient.
//!
//! Scores are compressed onto `k` uniformly spaced bin values `j / (k - 1)`.
//! The joint outcome matrix `P = p0 p1ᵀ` of the two binned marginals splits
//! into an antisymmetric part (signal: outcomes favouring one policy that are
//! not cancelled by the mirrored outcome) and a symmetric floor (hysteresis:
//! mirrored outcome pairs that leave the score gap unchanged but shrink the
//! wealth process). The coefficient maximizes the expected log-growth
//!
//! ```text
//! G(ξ) = Σ_{i<j} |ΔP_ij| log(1 + ξ sgn(ΔP_ij) Δc_ij) + P̲_ij log(1 - ξ² Δc_ij²)
//! ```
//!
//! over `[0, ξ_cap]`. `G` is concave on `[0, 1)`, so the first-order condition
//! is solved by bisection once a sign change is bracketed.
//!
//! Binning only ever drives the choice of ξ. The wealth update itself always
//! uses the exact scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ProgressScore, TrialPair};

/// Bin count used for the large-k ("∞") variant of the test.
pub const ADAPTIVE_BINS: usize = 101;

const BISECTION_MAX_ITER: usize = 80;
const BISECTION_TOL: f64 = 1e-10;
const FALLBACK_GRID_STEP: f64 = 1e-4;
// Relative slack when deciding that (k-1)·score sits exactly on a bin value.
const CENTER_HIT_TOL: f64 = 1e-9;

/// `k` uniformly spaced bin values on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    k: usize,
}

impl BinningScheme {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!(
                "bin count must be at least 2, got {k}"
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn center(&self, j: usize) -> f64 {
        if j + 1 == self.k {
            1.0
        } else {
            j as f64 / (self.k - 1) as f64
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.k).map(|j| self.center(j)).collect()
    }

    /// Left-edge bin of a score: `⌊(k-1)·score⌋`, snapping products that land
    /// on a bin value up to rounding noise (so `0.29` with `k = 101` is bin 29).
    pub fn bin_index(&self, score: ProgressScore) -> usize {
        let x = (self.k - 1) as f64 * score.value();
        let nearest = x.round();
        let idx = if (x - nearest).abs() <= CENTER_HIT_TOL * nearest.max(1.0) {
            nearest
        } else {
            x.floor()
        };
        (idx.max(0.0) as usize).min(self.k - 1)
    }

    /// The bin value a score is compressed to.
    pub fn compress(&self, score: ProgressScore) -> f64 {
        self.center(self.bin_index(score))
    }
}

/// Per-policy bin histograms of every pair seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedJointModel {
    scheme: BinningScheme,
    counts0: Vec<u64>,
    counts1: Vec<u64>,
    n: u64,
}

impl BinnedJointModel {
    pub fn new(scheme: BinningScheme) -> Self {
        Self {
            scheme,
            counts0: vec![0; scheme.k],
            counts1: vec![0; scheme.k],
            n: 0,
        }
    }

    pub fn from_counts(counts0: Vec<u64>, counts1: Vec<u64>) -> Result<Self> {
        let scheme = BinningScheme::new(counts0.len())?;
        if counts1.len() != counts0.len() {
            return Err(Error::Config("histograms differ in length".into()));
        }
        let n0: u64 = counts0.iter().sum();
        let n1: u64 = counts1.iter().sum();
        if n0 != n1 {
            return Err(Error::Config(format!(
                "histogram totals differ ({n0} vs {n1})"
            )));
        }
        Ok(Self {
            scheme,
            counts0,
            counts1,
            n: n0,
        })
    }

    pub fn scheme(&self) -> BinningScheme {
        self.scheme
    }

    pub fn counts0(&self) -> &[u64] {
        &self.counts0
    }

    pub fn counts1(&self) -> &[u64] {
        &self.counts1
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn update(&mut self, pair: &TrialPair) {
        self.counts0[self.scheme.bin_index(pair.r0)] += 1;
        self.counts1[self.scheme.bin_index(pair.r1)] += 1;
        self.n += 1;
    }

    /// Smoothed bin frequencies `(count + pseudocount) / (n + k·pseudocount)`.
    /// With no data and no smoothing the marginals are uniform.
    pub fn marginals(&self, pseudocount: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.scheme.k as f64;
        let total = self.n as f64 + k * pseudocount;
        let freq = |counts: &[u64]| -> Vec<f64> {
            if total <= 0.0 {
                vec![1.0 / k; counts.len()]
            } else {
                counts
                    .iter()
                    .map(|&c| (c as f64 + pseudocount) / total)
                    .collect()
            }
        };
        (freq(&self.counts0), freq(&self.counts1))
    }
}

/// Default smoothing: a pseudocount of `1/k` per bin, i.e. one pseudo-trial
/// spread uniformly.
pub fn default_pseudocount(scheme: BinningScheme) -> f64 {
    1.0 / scheme.k as f64
}

pub fn update_model(mut model: BinnedJointModel, pair: &TrialPair) -> BinnedJointModel {
    model.update(pair);
    model
}

/// Dense row-major `k × k` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    k: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Config("matrix must be square".into()));
        }
        Ok(Self {
            k,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.k + j] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// `P̂ = p̂0 p̂1ᵀ` from the model's smoothed marginals.
pub fn empirical_joint(model: &BinnedJointModel, pseudocount: f64) -> SquareMatrix {
    let (p0, p1) = model.marginals(pseudocount);
    let mut m = SquareMatrix::zeros(p0.len());
    for (i, a) in p0.iter().enumerate() {
        for (j, b) in p1.iter().enumerate() {
            m.set(i, j, a * b);
        }
    }
    m
}

/// Signal (`ΔP`, strictly upper triangular) and hysteresis (`P̲`, symmetric)
/// parts of a joint outcome matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHysteresisDecomposition {
    pub delta_p: SquareMatrix,
    pub p_floor: SquareMatrix,
}

pub fn decompose(p_hat: &SquareMatrix) -> SignalHysteresisDecomposition {
    let k = p_hat.dim();
    let mut delta_p = SquareMatrix::zeros(k);
    let mut p_floor = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (p_hat.get(i, j), p_hat.get(j, i));
            if j > i {
                delta_p.set(i, j, a - b);
            }
            p_floor.set(i, j, a.min(b));
        }
    }
    SignalHysteresisDecomposition { delta_p, p_floor }
}

/// Expected single-step log-growth of the wealth process under the binned model.
pub fn growth_objective(
    xi: f64,
    decomp: &SignalHysteresisDecomposition,
    scheme: BinningScheme,
) -> Result<f64> {
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::Domain(xi));
    }
    let k = scheme.k;
    let mut g = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let dc = scheme.center(j) - scheme.center(i);
            let dp = decomp.delta_p.get(i, j);
            let floor = decomp.p_floor.get(i, j);
            if dp != 0.0 {
                g += dp.abs() * (1.0 + xi * dp.signum() * dc).ln();
            }
            if floor != 0.0 {
                g += floor * (1.0 - xi * xi * dc * dc).ln();
            }
        }
    }
    Ok(g)
}

/// Derivative of [`growth_objective`] in ξ (the first-order-condition residual).
pub fn growth_derivative(
    xi: f64,
    decomp: &SignalHysteresisDecomposition,
    scheme: BinningScheme,
) -> f64 {
    let k = scheme.k;
    let mut d = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let dc = scheme.center(j) - scheme.center(i);
            let dp = decomp.delta_p.get(i, j);
            let floor = decomp.p_floor.get(i, j);
            d += dp * dc / (1.0 + xi * dp.signum() * dc);
            d -= 2.0 * xi * floor * dc * dc / (1.0 - xi * xi * dc * dc);
        }
    }
    d
}

/// The growth objective collapsed onto bin lags `d = j - i`. Every `(i, j)`
/// term depends on its cell only through `Δc = c_j - c_i`, which for uniform
/// bins is `d / (k - 1)`, so summing the weights per lag is exact and turns
/// each evaluation from `O(k²)` into `O(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagProfile {
    dc: Vec<f64>,
    gain: Vec<f64>,
    loss: Vec<f64>,
    hysteresis: Vec<f64>,
}

impl LagProfile {
    pub fn from_decomposition(
        decomp: &SignalHysteresisDecomposition,
        scheme: BinningScheme,
    ) -> Self {
        let k = scheme.k;
        let mut p = Self::empty(scheme);
        for i in 0..k {
            for j in i + 1..k {
                p.accumulate(j - i, decomp.delta_p.get(i, j), decomp.p_floor.get(i, j));
            }
        }
        p
    }

    /// Builds the profile straight from the two marginals, without forming
    /// the `k × k` matrices.
    pub fn from_marginals(p0: &[f64], p1: &[f64], scheme: BinningScheme) -> Self {
        let k = scheme.k;
        let mut p = Self::empty(scheme);
        for i in 0..k {
            for j in i + 1..k {
                let forward = p0[i] * p1[j];
                let backward = p0[j] * p1[i];
                p.accumulate(j - i, forward - backward, forward.min(backward));
            }
        }
        p
    }

    fn empty(scheme: BinningScheme) -> Self {
        let k = scheme.k;
        Self {
            dc: (0..k).map(|d| scheme.center(d)).collect(),
            gain: vec![0.0; k],
            loss: vec![0.0; k],
            hysteresis: vec![0.0; k],
        }
    }

    fn accumulate(&mut self, lag: usize, delta: f64, floor: f64) {
        if delta > 0.0 {
            self.gain[lag] += delta;
        } else {
            self.loss[lag] -= delta;
        }
        self.hysteresis[lag] += floor;
    }

    pub fn objective(&self, xi: f64) -> f64 {
        let mut g = 0.0;
        for d in 1..self.dc.len() {
            let dc = self.dc[d];
            if self.gain[d] != 0.0 {
                g += self.gain[d] * (xi * dc).ln_1p();
            }
            if self.loss[d] != 0.0 {
                g += self.loss[d] * (-xi * dc).ln_1p();
            }
            if self.hysteresis[d] != 0.0 {
                g += self.hysteresis[d] * (-xi * xi * dc * dc).ln_1p();
            }
        }
        g
    }

    pub fn derivative(&self, xi: f64) -> f64 {
        let mut s = 0.0;
        for d in 1..self.dc.len() {
            let dc = self.dc[d];
            s += self.gain[d] * dc / (1.0 + xi * dc);
            s -= self.loss[d] * dc / (1.0 - xi * dc);
            s -= 2.0 * xi * self.hysteresis[d] * dc * dc / (1.0 - xi * xi * dc * dc);
        }
        s
    }

    /// Maximizer of the objective on `[0, xi_cap]`.
    pub fn maximize(&self, xi_cap: f64) -> f64 {
        let slope0 = self.derivative(0.0);
        if !slope0.is_finite() {
            return self.grid_maximize(xi_cap);
        }
        if slope0 <= 0.0 {
            return 0.0;
        }
        let slope_cap = self.derivative(xi_cap);
        if !slope_cap.is_finite() {
            return self.grid_maximize(xi_cap);
        }
        if slope_cap >= 0.0 {
            return xi_cap;
        }
        let (mut lo, mut hi) = (0.0, xi_cap);
        for _ in 0..BISECTION_MAX_ITER {
            if hi - lo < BISECTION_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let s = self.derivative(mid);
            if !s.is_finite() {
                return self.grid_maximize(xi_cap);
            }
            if s > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn grid_maximize(&self, xi_cap: f64) -> f64 {
        let steps = (xi_cap / FALLBACK_GRID_STEP).ceil() as usize;
        let mut best = (0.0, 0.0);
        for s in 1..=steps {
            let xi = (s as f64 * FALLBACK_GRID_STEP).min(xi_cap);
            let g = self.objective(xi);
            if g > best.1 {
                best = (xi, g);
            }
        }
        best.0
    }
}

/// Growth-optimal ξ for a decomposition, clamped to `[0, xi_cap]`.
pub fn optimize_decomposition(
    decomp: &SignalHysteresisDecomposition,
    scheme: BinningScheme,
    xi_cap: f64,
) -> f64 {
    LagProfile::from_decomposition(decomp, scheme).maximize(xi_cap)
}

/// Growth-optimal ξ for the model with explicit smoothing.
pub fn optimize_xi_with(model: &BinnedJointModel, pseudocount: f64, xi_cap: f64) -> f64 {
    if model.n == 0 {
        return 0.0;
    }
    let (p0, p1) = model.marginals(pseudocount);
    LagProfile::from_marginals(&p0, &p1, model.scheme).maximize(xi_cap)
}

/// Growth-optimal ξ with the default `1/k` smoothing.
pub fn optimize_xi(model: &BinnedJointModel, xi_cap: f64) -> f64 {
    optimize_xi_with(model, default_pseudocount(model.scheme), xi_cap)
}
