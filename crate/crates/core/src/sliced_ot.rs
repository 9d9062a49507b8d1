//! One-dimensional optimal transport primitives.
//!
//! Everything here works on empirical distributions represented as sorted
//! arrays of projected scalar values. The CDF is estimated by linear
//! interpolation between the empirical distribution function's knots: for a
//! sorted array `z[0..n]` and a query inside the support with bracket
//! `z[i] <= q < z[i+1]`, the estimate is `(i + frac) / n`. The quantile
//! function is the exact piecewise-linear inverse of that map, so
//! `quantile(eval(q)) == q` holds for every `q` strictly inside the support
//! and the composed transport map sends the k-th smallest source value onto
//! the k-th smallest target value when both sides have equal size.
//!
//! Outside the support the CDF clamps to {0, 1} and the quantile clamps to
//! the min/max value, which keeps transport maps bounded by the target's
//! support.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::rng::{self, role};

/// Sorted projected values of an empirical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
}

/// Builds an [`EmpiricalCdf`] by sorting the samples ascending.
///
/// The sort is stable, so ties keep their input order and the result is
/// reproducible regardless of thread count.
pub fn build_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot build a CDF from zero samples"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN sample in CDF input"));
    }
    let mut values = samples.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EmpiricalCdf { values })
}

impl EmpiricalCdf {
    /// Wraps an already-sorted array (used when replaying stored models).
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot build a CDF from zero samples"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN sample in CDF input"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("CDF values are not sorted"));
        }
        Ok(EmpiricalCdf { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Piecewise-linear CDF estimate in [0, 1].
    pub fn eval(&self, z: f64) -> Result<f64> {
        if z.is_nan() {
            return Err(Error::invalid("NaN query in cdf_eval"));
        }
        Ok(self.eval_unchecked(z))
    }

    /// As [`eval`](Self::eval) without the NaN check; used in inner loops
    /// that validate their inputs in bulk.
    #[inline]
    pub fn eval_unchecked(&self, z: f64) -> f64 {
        self.position(z) / self.values.len() as f64
    }

    /// Fractional sorted-index of `z`: `i + frac` in `[0, n]`, where
    /// `values[i] <= z < values[i+1]`. CDF and quantile both reduce to
    /// this, and composing them through the index directly keeps the
    /// equal-size transport map exact at the knots.
    #[inline]
    fn position(&self, z: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        if z <= v[0] {
            return 0.0;
        }
        if z >= v[n - 1] {
            return n as f64;
        }
        // Last index with v[i] <= z; the clamps above guarantee 0 <= i <= n-2.
        let i = v.partition_point(|&x| x <= z) - 1;
        let denom = v[i + 1] - v[i];
        let frac = if denom > 0.0 { (z - v[i]) / denom } else { 0.0 };
        i as f64 + frac
    }

    /// Linear interpolation at fractional sorted-index `t` in `[0, n]`.
    #[inline]
    fn value_at_position(&self, t: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        let i = t as usize;
        if i >= n - 1 {
            // The top segment has no right knot; clamp to the max.
            return v[n - 1];
        }
        v[i] + (t - i as f64) * (v[i + 1] - v[i])
    }

    /// Piecewise-linear quantile function, the inverse of [`eval`](Self::eval).
    pub fn quantile(&self, a: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!(
                "quantile argument {a} outside [0, 1]"
            )));
        }
        Ok(self.quantile_unchecked(a))
    }

    /// As [`quantile`](Self::quantile) assuming `a` is already in [0, 1].
    #[inline]
    pub fn quantile_unchecked(&self, a: f64) -> f64 {
        self.value_at_position(a * self.values.len() as f64)
    }

    /// The 1D transport map `F_self_inverse(F_source(z))` evaluated through
    /// the shared fractional index, so equal-size distributions pair their
    /// k-th smallest values exactly.
    #[inline]
    pub fn transport_from(&self, source: &EmpiricalCdf, z: f64) -> f64 {
        let scale = self.values.len() as f64 / source.values.len() as f64;
        self.value_at_position(source.position(z) * scale)
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// The derivative of the Kantorovich potential between two projected
/// empirical distributions: `psi'(z) = z - F_target^{-1}(F_source(z))`.
#[derive(Debug, Clone)]
pub struct PotentialDerivative<'a> {
    pub source: &'a EmpiricalCdf,
    pub target: &'a EmpiricalCdf,
}

impl<'a> PotentialDerivative<'a> {
    pub fn new(source: &'a EmpiricalCdf, target: &'a EmpiricalCdf) -> Self {
        PotentialDerivative { source, target }
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        if z.is_nan() {
            return Err(Error::invalid("NaN query in potential_derivative"));
        }
        Ok(self.eval_unchecked(z))
    }

    #[inline]
    pub fn eval_unchecked(&self, z: f64) -> f64 {
        z - self.target.transport_from(self.source, z)
    }
}

/// Shorthand for [`PotentialDerivative::eval`].
pub fn potential_derivative(pd: &PotentialDerivative<'_>, z: f64) -> Result<f64> {
    pd.eval(z)
}

/// Closed-form 1D optimal transport map `T = F_q^{-1} o F_p`.
pub fn one_d_transport(p: &EmpiricalCdf, q: &EmpiricalCdf, z: f64) -> Result<f64> {
    let a = p.eval(z)?;
    Ok(q.quantile_unchecked(a))
}

/// Monte-Carlo sliced-Wasserstein distance between two sample sets.
///
/// Directions are standard normals normalized to the unit sphere, seeded so
/// the result is reproducible. The per-direction squared 1D Wasserstein-2
/// distance is a midpoint-rule quantile match over `Q = max(|a|, |b|)` grid
/// points, which reduces to the exact sorted pairing when both sets have the
/// same size.
pub fn sw2_distance(a: &Matrix, b: &Matrix, num_projections: usize, seed: u64) -> Result<f64> {
    let dirs = sample_directions(a.cols(), num_projections, seed)?;
    sw2_with_directions(a, b, &dirs)
}

/// Unit direction vectors for [`sw2_with_directions`], seeded.
pub fn sample_directions(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 {
        return Err(Error::invalid("direction dimension must be positive"));
    }
    if count == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    let mut rng = rng::chacha(rng::derive(seed, role::SW_DIST));
    Ok((0..count)
        .map(|_| crate::projections::unit_normal_vector(dim, &mut rng))
        .collect())
}

/// Sliced-Wasserstein distance with a caller-provided direction set, so
/// several evaluations can share identical directions.
pub fn sw2_with_directions(a: &Matrix, b: &Matrix, dirs: &[Vec<f64>]) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::invalid("empty sample set"));
    }
    if dirs.is_empty() || dirs.iter().any(|d| d.len() != a.cols()) {
        return Err(Error::invalid("direction set empty or wrong dimension"));
    }
    // Per-direction results are collected in direction order and reduced
    // sequentially, so the sum does not depend on thread count.
    let w2s: Vec<f64> = dirs
        .par_iter()
        .map(|dir| {
            let pa = project_sorted(a, dir);
            let pb = project_sorted(b, dir);
            w2_squared_sorted(&pa, &pb)
        })
        .collect();
    let mean = w2s.iter().sum::<f64>() / w2s.len() as f64;
    Ok(mean.sqrt())
}

fn project_sorted(m: &Matrix, dir: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..m.rows())
        .map(|i| crate::mat::dot(m.row(i), dir))
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Squared 1D W2 between two sorted arrays via midpoint quantile matching.
///
/// Uses the step quantile `z[floor(u * n)]`, so equal-size inputs pair the
/// k-th smallest values exactly.
fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let q = a.len().max(b.len());
    let mut acc = 0.0;
    for k in 0..q {
        let u = (k as f64 + 0.5) / q as f64;
        let va = a[((u * a.len() as f64) as usize).min(a.len() - 1)];
        let vb = b[((u * b.len() as f64) as usize).min(b.len() - 1)];
        let d = va - vb;
        acc += d * d;
    }
    acc / q as f64
}
