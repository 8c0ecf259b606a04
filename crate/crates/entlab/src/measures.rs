//! Discrete and Gaussian probability measures: validation, divergences,
//! exact quadratic Wasserstein distances, and seeded sampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::quad;

/// Squared Euclidean distance between two points.
pub fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A finitely supported probability measure: atom rows and positive
/// weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureData", into = "MeasureData")]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Vec<f64>,
}

/// Serialized shape of a discrete measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureData {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureData> for DiscreteMeasure {
    type Error = Error;

    fn try_from(data: MeasureData) -> Result<Self> {
        let n = data.points.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let d = data.points[0].len();
        let mut points = Array2::<f64>::zeros((n, d));
        for (i, row) in data.points.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                points[[i, j]] = v;
            }
        }
        DiscreteMeasure::new(points, data.weights)
    }
}

impl From<DiscreteMeasure> for MeasureData {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureData {
            points: m
                .points
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            weights: m.weights,
        }
    }
}

impl DiscreteMeasure {
    /// Validates atoms and weights; weights are renormalized to machine
    /// precision after passing a 1e-9 mass check.
    pub fn new(points: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidMeasure("zero-dimensional atoms".into()));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("atom coordinates".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(DiscreteMeasure { points, weights })
    }

    /// Uniform weights on the given atoms.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let w = vec![1.0 / n as f64; n];
        DiscreteMeasure::new(points, w)
    }

    /// One-dimensional constructor from coordinates.
    pub fn from_points_1d(xs: &[f64], weights: Vec<f64>) -> Result<Self> {
        let points = Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i]);
        DiscreteMeasure::new(points, weights)
    }

    pub fn num_atoms(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln()).collect()
    }

    /// Radius of the smallest origin-centered ball containing the support.
    pub fn support_radius(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Weight-averaged atom.
    pub fn weighted_mean(&self) -> Array1<f64> {
        let mut mean = Array1::<f64>::zeros(self.dim());
        for (row, &w) in self.points.rows().into_iter().zip(&self.weights) {
            mean.iter_mut().zip(row.iter()).for_each(|(m, &x)| *m += w * x);
        }
        mean
    }

    /// The measure shifted by `-shift` (new atoms are `x - shift`).
    pub fn translated(&self, shift: &Array1<f64>) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: shift.len(),
            });
        }
        let mut points = self.points.clone();
        for mut row in points.rows_mut() {
            row.iter_mut().zip(shift.iter()).for_each(|(x, &s)| *x -= s);
        }
        Ok(DiscreteMeasure {
            points,
            weights: self.weights.clone(),
        })
    }

    /// True when both measures list identical atoms in identical order.
    pub fn same_support(&self, other: &DiscreteMeasure) -> bool {
        self.points == other.points
    }

    /// Relative entropy `sum_i a_i ln(a_i / b_i)`; requires a shared grid.
    pub fn kl_divergence(&self, other: &DiscreteMeasure) -> Result<f64> {
        if !self.same_support(other) {
            return Err(Error::AtomMismatch(
                "relative entropy needs a shared atom grid".into(),
            ));
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| a * (a / b).ln())
            .sum())
    }

    /// Draws `n` atom indices.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.weights).expect("validated weights");
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    /// Draws `n` points (rows).
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let idx = self.sample_indices(rng, n);
        Array2::from_shape_fn((n, self.dim()), |(i, j)| self.points[[idx[i], j]])
    }

    /// Exact quadratic Wasserstein distance. Routes: the quantile coupling
    /// in dimension one; an assignment solve for equal-count uniform
    /// measures; atom expansion plus assignment when all weights are
    /// multiples of a common 1/L with L at most 256. Anything else is
    /// refused rather than approximated.
    pub fn wasserstein2(&self, other: &DiscreteMeasure) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if self.dim() == 1 {
            return Ok(quantile_w2_squared(self, other).sqrt());
        }
        let uniform = |m: &DiscreteMeasure| {
            let w0 = 1.0 / m.num_atoms() as f64;
            m.weights.iter().all(|&w| (w - w0).abs() < 1e-12)
        };
        if self.num_atoms() == other.num_atoms() && uniform(self) && uniform(other) {
            let n = self.num_atoms();
            let cost = Array2::from_shape_fn((n, n), |(i, j)| {
                sq_dist(self.point(i), other.point(j))
            });
            let a = assignment::solve(&cost)?;
            return Ok((a.total_cost / n as f64).max(0.0).sqrt());
        }
        const MAX_DENOMINATOR: usize = 256;
        let la = common_denominator(&self.weights, MAX_DENOMINATOR);
        let lb = common_denominator(&other.weights, MAX_DENOMINATOR);
        if let (Some((l_a, counts_a)), Some((l_b, counts_b))) = (la, lb) {
            // Expand both sides to the least common multiple of unit atoms;
            // splitting atoms preserves the optimal cost, and uniform
            // unit-atom transport is an assignment.
            let l = lcm(l_a, l_b);
            if l <= MAX_DENOMINATOR {
                let scale_a = l / l_a;
                let scale_b = l / l_b;
                let rows: Vec<usize> = counts_a
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &c)| std::iter::repeat(i).take(c * scale_a))
                    .collect();
                let cols: Vec<usize> = counts_b
                    .iter()
                    .enumerate()
                    .flat_map(|(j, &c)| std::iter::repeat(j).take(c * scale_b))
                    .collect();
                let cost = Array2::from_shape_fn((l, l), |(i, j)| {
                    sq_dist(self.point(rows[i]), other.point(cols[j]))
                });
                let a = assignment::solve(&cost)?;
                return Ok((a.total_cost / l as f64).max(0.0).sqrt());
            }
        }
        Err(Error::UnsupportedInstance(
            "no exact Wasserstein route for this weight pattern in dimension >= 2".into(),
        ))
    }
}

/// Exact squared W2 in dimension one via the quantile coupling.
fn quantile_w2_squared(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut ia: Vec<usize> = (0..a.num_atoms()).collect();
    let mut ib: Vec<usize> = (0..b.num_atoms()).collect();
    ia.sort_by(|&p, &q| a.points[[p, 0]].partial_cmp(&a.points[[q, 0]]).expect("finite"));
    ib.sort_by(|&p, &q| b.points[[p, 0]].partial_cmp(&b.points[[q, 0]]).expect("finite"));
    let (mut i, mut j) = (0usize, 0usize);
    let mut rem_a = a.weights[ia[0]];
    let mut rem_b = b.weights[ib[0]];
    let mut cost = 0.0;
    loop {
        let m = rem_a.min(rem_b);
        let gap = a.points[[ia[i], 0]] - b.points[[ib[j], 0]];
        cost += m * gap * gap;
        rem_a -= m;
        rem_b -= m;
        // Advance whichever side ran out; ties advance both.
        let step_a = rem_a <= 1e-15;
        let step_b = rem_b <= 1e-15;
        if step_a {
            i += 1;
            if i == ia.len() {
                break;
            }
            rem_a = a.weights[ia[i]];
        }
        if step_b {
            j += 1;
            if j == ib.len() {
                break;
            }
            rem_b = b.weights[ib[j]];
        }
    }
    cost
}

/// Smallest `L <= max_l` with every weight an integer multiple of 1/L.
fn common_denominator(weights: &[f64], max_l: usize) -> Option<(usize, Vec<usize>)> {
    for l in 1..=max_l {
        let lf = l as f64;
        let mut counts = Vec::with_capacity(weights.len());
        let mut ok = true;
        for &w in weights {
            let k = (w * lf).round();
            if (w * lf - k).abs() > 1e-9 || k < 1.0 {
                ok = false;
                break;
            }
            counts.push(k as usize);
        }
        if ok && counts.iter().sum::<usize>() == l {
            return Some((l, counts));
        }
    }
    None
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Outcome of a transport-entropy comparison `W2^2 <= 2 tau KL`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransportEntropyCheck {
    pub w2_squared: f64,
    pub kl: f64,
    pub tau: f64,
    pub rhs: f64,
    pub passes: bool,
}

/// Checks the transport-entropy inequality at scale `tau` for two measures
/// on a shared grid.
pub fn talagrand_check(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    tau: f64,
) -> Result<TransportEntropyCheck> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tau",
            value: tau,
            reason: "must be positive",
        });
    }
    let w2 = a.wasserstein2(b)?;
    let kl = a.kl_divergence(b)?;
    let w2_squared = w2 * w2;
    let rhs = 2.0 * tau * kl;
    Ok(TransportEntropyCheck {
        w2_squared,
        kl,
        tau,
        rhs,
        passes: w2_squared <= rhs,
    })
}

/// A Gaussian measure with full covariance.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    /// Lower Cholesky factor of the covariance, kept for sampling and KL.
    chol: Array2<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: covariance.nrows(),
            });
        }
        let chol = linalg::cholesky(&covariance)?;
        Ok(GaussianMeasure {
            mean,
            covariance,
            chol,
        })
    }

    pub fn isotropic(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if variance <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "variance",
                value: variance,
                reason: "must be positive",
            });
        }
        let d = mean.len();
        GaussianMeasure::new(mean, Array2::eye(d) * variance)
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `n` points (rows) via the Cholesky factor.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let d = self.dim();
        let normal = rand_distr::StandardNormal;
        let mut out = Array2::<f64>::zeros((n, d));
        for mut row in out.rows_mut() {
            let z: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
            for i in 0..d {
                let mut v = self.mean[i];
                for k in 0..=i {
                    v += self.chol[[i, k]] * z[k];
                }
                row[i] = v;
            }
        }
        out
    }

    /// Closed-form relative entropy between Gaussians.
    pub fn kl_divergence(&self, other: &GaussianMeasure) -> Result<f64> {
        let d = self.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: other.dim(),
            });
        }
        // trace(S1^{-1} S0) column by column through the factor of S1.
        let mut trace = 0.0;
        for j in 0..d {
            let col: Vec<f64> = (0..d).map(|i| self.covariance[[i, j]]).collect();
            let solved = linalg::cholesky_solve(&other.chol, &col)?;
            trace += solved[j];
        }
        let diff: Vec<f64> = (0..d).map(|i| other.mean[i] - self.mean[i]).collect();
        let solved = linalg::cholesky_solve(&other.chol, &diff)?;
        let quad: f64 = diff.iter().zip(&solved).map(|(a, b)| a * b).sum();
        let log_det_ratio = 2.0
            * (0..d)
                .map(|i| (other.chol[[i, i]] / self.chol[[i, i]]).ln())
                .sum::<f64>();
        Ok(0.5 * (trace + quad - d as f64 + log_det_ratio))
    }

    /// Closed-form quadratic Wasserstein distance between Gaussians.
    pub fn wasserstein2(&self, other: &GaussianMeasure) -> Result<f64> {
        let d = self.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: other.dim(),
            });
        }
        let mean_sq: f64 = (0..d)
            .map(|i| (self.mean[i] - other.mean[i]).powi(2))
            .sum();
        let root = linalg::spd_sqrt(&other.covariance)?;
        let inner = root.dot(&self.covariance).dot(&root);
        let cross = linalg::spd_sqrt(&inner)?;
        let trace_term: f64 = (0..d)
            .map(|i| self.covariance[[i, i]] + other.covariance[[i, i]] - 2.0 * cross[[i, i]])
            .sum();
        Ok((mean_sq + trace_term.max(0.0)).sqrt())
    }

    /// Gauss-Hermite discretization: a discrete measure whose atoms are
    /// the rescaled rule nodes. Exact for polynomial moments up to degree
    /// `2n - 1`; only available in dimension one.
    pub fn gauss_hermite_discretization(&self, n: usize) -> Result<DiscreteMeasure> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedInstance(
                "Gauss-Hermite discretization is one-dimensional".into(),
            ));
        }
        let rule = quad::hermite_cached(n)?;
        let sd = self.covariance[[0, 0]].sqrt();
        let scale = std::f64::consts::SQRT_2 * sd;
        let xs: Vec<f64> = rule.nodes.iter().map(|&x| self.mean[0] + scale * x).collect();
        let inv_mu0 = 1.0 / std::f64::consts::PI.sqrt();
        let ws: Vec<f64> = rule.weights.iter().map(|&w| w * inv_mu0).collect();
        DiscreteMeasure::from_points_1d(&xs, ws)
    }
}
