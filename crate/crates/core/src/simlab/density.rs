//! Random polynomial densities on `[0, 1]` with tabulated inverse-CDF sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ProgressScore;

pub const MAX_ORDER: usize = 10;
pub const GRID_POINTS: usize = 4096;
const FLOOR_MARGIN: f64 = 1e-9;
const MAX_RETRIES: usize = 100;

/// A polynomial shifted to be nonnegative on `[0, 1]` and scaled to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensitySpec", into = "DensitySpec")]
pub struct PolynomialDensity {
    coefficients: Vec<f64>,
    shift: f64,
    scale: f64,
    cdf: Vec<f64>,
    mean: f64,
}

/// Serialized form: the raw coefficients, lowest degree first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySpec {
    pub coefficients: Vec<f64>,
}

impl TryFrom<DensitySpec> for PolynomialDensity {
    type Error = Error;
    fn try_from(spec: DensitySpec) -> Result<Self> {
        PolynomialDensity::from_coefficients(spec.coefficients)
    }
}

impl From<PolynomialDensity> for DensitySpec {
    fn from(d: PolynomialDensity) -> Self {
        DensitySpec {
            coefficients: d.coefficients,
        }
    }
}

fn grid_x(i: usize) -> f64 {
    i as f64 / (GRID_POINTS - 1) as f64
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl PolynomialDensity {
    /// Rectifies `Σ cᵢ xⁱ` into a density. At most eleven coefficients.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() > MAX_ORDER + 1 {
            return Err(Error::Config(format!(
                "need between 1 and {} coefficients, got {}",
                MAX_ORDER + 1,
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Generation("non-finite coefficient".into()));
        }
        let raw: Vec<f64> = (0..GRID_POINTS)
            .map(|i| horner(&coefficients, grid_x(i)))
            .collect();
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = FLOOR_MARGIN - min;
        let h = 1.0 / (GRID_POINTS - 1) as f64;
        let shifted: Vec<f64> = raw.iter().map(|v| v + shift).collect();
        let mass: f64 = shifted.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Generation(format!(
                "degenerate polynomial (mass {mass})"
            )));
        }
        let scale = 1.0 / mass;
        let mut cdf = Vec::with_capacity(GRID_POINTS);
        let mut acc = 0.0;
        let mut first_moment = 0.0;
        cdf.push(0.0);
        for i in 1..GRID_POINTS {
            let (a, b) = (shifted[i - 1] * scale, shifted[i] * scale);
            acc += 0.5 * h * (a + b);
            first_moment += 0.5 * h * (grid_x(i - 1) * a + grid_x(i) * b);
            cdf.push(acc);
        }
        // absorb rounding so the table ends exactly at 1
        let total = *cdf.last().expect("grid nonempty");
        for v in cdf.iter_mut() {
            *v /= total;
        }
        Ok(Self {
            coefficients,
            shift,
            scale,
            cdf,
            mean: first_moment / total,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Density value at `x ∈ [0, 1]`.
    pub fn density(&self, x: f64) -> f64 {
        (horner(&self.coefficients, x) + self.shift) * self.scale
    }

    /// Trapezoid-rule mean over the tabulation grid.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn cdf_table(&self) -> &[f64] {
        &self.cdf
    }

    /// CDF by linear interpolation of the table.
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let pos = x * (GRID_POINTS - 1) as f64;
        let i = (pos.floor() as usize).min(GRID_POINTS - 2);
        let frac = pos - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse-CDF draw through the interpolated table.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ProgressScore {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    pub fn quantile(&self, u: f64) -> ProgressScore {
        let u = u.clamp(0.0, 1.0);
        // first index with cdf > u, so [i-1, i] brackets u
        let hi = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, GRID_POINTS - 1);
        let lo = hi - 1;
        let span = self.cdf[hi] - self.cdf[lo];
        let frac = if span > 0.0 {
            (u - self.cdf[lo]) / span
        } else {
            0.0
        };
        let x = (grid_x(lo) + frac.clamp(0.0, 1.0) * (grid_x(hi) - grid_x(lo))).clamp(0.0, 1.0);
        ProgressScore::new(x).expect("clamped to unit interval")
    }
}

/// Random polynomial of the given order with independent standard-normal
/// coefficients, rectified into a density.
pub fn gen_polynomial_density<R: Rng + ?Sized>(
    order: usize,
    rng: &mut R,
) -> Result<PolynomialDensity> {
    if order > MAX_ORDER {
        return Err(Error::Config(format!(
            "order must be at most {MAX_ORDER}, got {order}"
        )));
    }
    let mut last = None;
    for _ in 0..MAX_RETRIES {
        let coefficients: Vec<f64> = (0..=order).map(|_| StandardNormal.sample(rng)).collect();
        match PolynomialDensity::from_coefficients(coefficients) {
            Ok(d) => return Ok(d),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Generation("no attempts made".into())))
}

/// Draws density pairs of random order (0..=10) until their means differ by
/// at least `min_gap`; the larger-mean density is returned second.
pub fn gap_filtered_pair<R: Rng + ?Sized>(
    rng: &mut R,
    min_gap: f64,
) -> Result<(PolynomialDensity, PolynomialDensity)> {
    const MAX_PAIR_RETRIES: usize = 10_000;
    if !(0.0..1.0).contains(&min_gap) {
        return Err(Error::Config(format!(
            "mean gap must lie in [0, 1), got {min_gap}"
        )));
    }
    for _ in 0..MAX_PAIR_RETRIES {
        let a = gen_polynomial_density(rng.random_range(0..=MAX_ORDER), rng)?;
        let b = gen_polynomial_density(rng.random_range(0..=MAX_ORDER), rng)?;
        if (a.mean() - b.mean()).abs() >= min_gap {
            return Ok(if a.mean() < b.mean() { (a, b) } else { (b, a) });
        }
    }
    Err(Error::Generation(format!(
        "no density pair with mean gap >= {min_gap} after {MAX_PAIR_RETRIES} draws"
    )))
}
