//! Interpolated potentials along the horizon and their spatial
//! derivatives, in closed form through the moments of a softmax atom
//! distribution.
//!
//! A potential is represented by target atoms `y_j` and log masses
//! `l_j = ln(weight_j) + log-dual_j`. At time `s` with `tau = T - s`:
//!
//! * value: `-ln sum_j exp(l_j - |z - y_j|^2 / (2 tau)) + (d/2) ln(2 pi tau)`,
//! * gradient: `(z - m(z)) / tau`,
//! * hessian: `I / tau - C(z) / tau^2`,
//! * third derivative in direction v: `-M3(z) v / tau^3`,
//!
//! where `m`, `C`, `M3` are the first three central moments of the atoms
//! under the softmax weights `w_j(z)`. The `(d/2) ln(2 pi tau)` normalizer
//! makes value differences across times consistent with the backward
//! Hamilton-Jacobi flow; it cancels in same-time differences.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::Serialize;

use crate::eot::{logsumexp, DualVariables, EotProblem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{sq_dist, DiscreteMeasure};

/// Which terminal potential the interpolation continues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// psi-side: atoms are the second-marginal atoms.
    Forward,
    /// phi-side: atoms are the first-marginal atoms.
    Backward,
}

/// Interpolated potential, evaluable for `0 <= s <= T - h_min` with
/// `h_min = 1e-6 T`.
#[derive(Debug, Clone)]
pub struct InterpolatedPotential {
    horizon: f64,
    side: Side,
    atoms: Array2<f64>,
    log_mass: Vec<f64>,
    /// Support radius about the origin, used by the curvature guard.
    radius: f64,
}

/// Softmax weights and the first three central moments of the atoms.
#[derive(Debug, Clone)]
pub struct SoftmaxMoments {
    pub weights: Vec<f64>,
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    /// `third_central[[a, b, c]] = sum_j w_j prod (y_j - m) over a, b, c`.
    pub third_central: Array3<f64>,
}

/// Value and derivatives of a potential at one space-time point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub hessian: Array2<f64>,
    pub s: f64,
    pub z: Array1<f64>,
}

/// Empirical extremes of the hessian over a probe set and time grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HessianExtremes {
    /// Smallest eigenvalue seen (lower curvature estimate).
    pub min_eig: f64,
    /// Largest Hilbert-Schmidt norm seen.
    pub max_hs: f64,
}

impl InterpolatedPotential {
    pub fn new(horizon: f64, side: Side, atoms: Array2<f64>, log_mass: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter {
                name: "horizon",
                value: horizon,
                reason: "must be positive and finite",
            });
        }
        let m = atoms.nrows();
        if m == 0 || atoms.ncols() == 0 {
            return Err(Error::InvalidMeasure("potential needs at least one atom".into()));
        }
        if log_mass.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: log_mass.len(),
            });
        }
        if atoms.iter().any(|v| !v.is_finite()) || log_mass.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential atoms or log masses".into()));
        }
        for i in 0..m {
            for j in 0..i {
                if atoms.row(i) == atoms.row(j) {
                    return Err(Error::InvalidMeasure(format!(
                        "duplicate atoms at rows {j} and {i}"
                    )));
                }
            }
        }
        let radius = atoms
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(InterpolatedPotential {
            horizon,
            side,
            atoms,
            log_mass,
            radius,
        })
    }

    /// psi-side potential of a solved problem: atoms of the second
    /// marginal with `l_j = ln b_j + log_g_j`.
    pub fn forward_from_duals(problem: &EotProblem, duals: &DualVariables) -> Result<Self> {
        let log_mass = problem
            .mu()
            .log_weights()
            .iter()
            .zip(&duals.log_g)
            .map(|(&lb, &lg)| lb + lg)
            .collect();
        InterpolatedPotential::new(
            problem.horizon(),
            Side::Forward,
            problem.mu().points().clone(),
            log_mass,
        )
    }

    /// phi-side potential of a solved problem: atoms of the first
    /// marginal with `l_i = ln a_i + log_f_i`.
    pub fn backward_from_duals(problem: &EotProblem, duals: &DualVariables) -> Result<Self> {
        let log_mass = problem
            .rho()
            .log_weights()
            .iter()
            .zip(&duals.log_f)
            .map(|(&la, &lf)| la + lf)
            .collect();
        InterpolatedPotential::new(
            problem.horizon(),
            Side::Backward,
            problem.rho().points().clone(),
            log_mass,
        )
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    pub fn support_radius(&self) -> f64 {
        self.radius
    }

    /// Remaining horizon `T - s`, guarded by the evaluation cutoff.
    pub fn tau(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "s",
                value: s,
                reason: "must be nonnegative",
            });
        }
        let tau = self.horizon - s;
        let min_tau = 1e-6 * self.horizon;
        if tau < min_tau {
            return Err(Error::HorizonTooClose { tau, min_tau });
        }
        Ok(tau)
    }

    fn ensure_dim(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Log-mixture exponents `l_j - |z - y_j|^2 / (2 tau)` and weights.
    fn softmax_weights(&self, tau: f64, z: ArrayView1<f64>) -> (Vec<f64>, f64) {
        let exponents: Vec<f64> = self
            .atoms
            .rows()
            .into_iter()
            .zip(&self.log_mass)
            .map(|(y, &l)| l - sq_dist(z, y) / (2.0 * tau))
            .collect();
        let lse = logsumexp(&exponents);
        let weights = exponents.iter().map(|&e| (e - lse).exp()).collect();
        (weights, lse)
    }

    /// Softmax weights and first three central moments at `(s, z)`.
    pub fn softmax_moments(&self, s: f64, z: ArrayView1<f64>) -> Result<SoftmaxMoments> {
        let tau = self.tau(s)?;
        self.ensure_dim(z)?;
        let (weights, _) = self.softmax_weights(tau, z);
        let d = self.dim();
        let mut mean = Array1::<f64>::zeros(d);
        for (y, &w) in self.atoms.rows().into_iter().zip(&weights) {
            for a in 0..d {
                mean[a] += w * y[a];
            }
        }
        let mut covariance = Array2::<f64>::zeros((d, d));
        let mut third_central = Array3::<f64>::zeros((d, d, d));
        for (y, &w) in self.atoms.rows().into_iter().zip(&weights) {
            let centered: Vec<f64> = (0..d).map(|a| y[a] - mean[a]).collect();
            for a in 0..d {
                for b in 0..d {
                    covariance[[a, b]] += w * centered[a] * centered[b];
                    for c in 0..d {
                        third_central[[a, b, c]] += w * centered[a] * centered[b] * centered[c];
                    }
                }
            }
        }
        Ok(SoftmaxMoments {
            weights,
            mean,
            covariance,
            third_central,
        })
    }

    /// Gradient `(z - m_s(z)) / tau` alone, skipping the moment work.
    /// Hot path for Euler-Maruyama drift loops.
    pub fn gradient(&self, s: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let tau = self.tau(s)?;
        self.ensure_dim(z)?;
        let (weights, _) = self.softmax_weights(tau, z);
        let d = self.dim();
        let mut mean = Array1::<f64>::zeros(d);
        for (y, &w) in self.atoms.rows().into_iter().zip(&weights) {
            for a in 0..d {
                mean[a] += w * y[a];
            }
        }
        Ok(Array1::from_shape_fn(d, |a| (z[a] - mean[a]) / tau))
    }

    /// Value, gradient, and hessian at `(s, z)`.
    pub fn evaluate(&self, s: f64, z: ArrayView1<f64>) -> Result<Evaluation> {
        let tau = self.tau(s)?;
        self.ensure_dim(z)?;
        let (_, lse) = self.softmax_weights(tau, z);
        let moments = self.softmax_moments(s, z)?;
        let d = self.dim();
        let value = -lse
            + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * tau).ln();
        let gradient = Array1::from_shape_fn(d, |a| (z[a] - moments.mean[a]) / tau);
        let hessian = Array2::from_shape_fn((d, d), |(a, b)| {
            let identity = if a == b { 1.0 / tau } else { 0.0 };
            identity - moments.covariance[[a, b]] / (tau * tau)
        });
        #[cfg(debug_assertions)]
        {
            // Curvature cannot drop below the compact-support schedule.
            let (min_eig, _) = linalg::eigen_bounds(&hessian)?;
            let floor = 1.0 / tau - self.radius * self.radius / (tau * tau);
            debug_assert!(
                min_eig >= floor - 1e-9 * (1.0 + floor.abs()),
                "hessian eigenvalue {min_eig} below curvature floor {floor}"
            );
        }
        Ok(Evaluation {
            value,
            gradient,
            hessian,
            s,
            z: z.to_owned(),
        })
    }

    /// Directional third derivative `(grad^3 psi_s(z)[v])_{ab} =
    /// -sum_c M3_{abc} v_c / tau^3`.
    pub fn third_derivative(
        &self,
        s: f64,
        z: ArrayView1<f64>,
        v: ArrayView1<f64>,
    ) -> Result<Array2<f64>> {
        let tau = self.tau(s)?;
        self.ensure_dim(z)?;
        self.ensure_dim(v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("direction vector".into()));
        }
        let moments = self.softmax_moments(s, z)?;
        let d = self.dim();
        let scale = -1.0 / (tau * tau * tau);
        Ok(Array2::from_shape_fn((d, d), |(a, b)| {
            let contracted: f64 = (0..d).map(|c| moments.third_central[[a, b, c]] * v[c]).sum();
            scale * contracted
        }))
    }
}

fn ensure_comparable(a: &InterpolatedPotential, b: &InterpolatedPotential) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if (a.horizon - b.horizon).abs() > 1e-12 * a.horizon.max(1.0) {
        return Err(Error::InvalidParameter {
            name: "horizon",
            value: b.horizon,
            reason: "potentials must share the horizon",
        });
    }
    if a.side != b.side {
        return Err(Error::UnsupportedInstance(
            "potential difference needs matching sides".into(),
        ));
    }
    Ok(())
}

/// `sqrt(sum_i base_i |grad_a(x_i) - grad_b(x_i)|^2)` at time `s`.
pub fn grad_diff_l2(
    base: &DiscreteMeasure,
    a: &InterpolatedPotential,
    b: &InterpolatedPotential,
    s: f64,
) -> Result<f64> {
    ensure_comparable(a, b)?;
    if base.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: base.dim(),
        });
    }
    let mut total = 0.0;
    for (x, &w) in base.points().rows().into_iter().zip(base.weights()) {
        let ga = a.evaluate(s, x)?.gradient;
        let gb = b.evaluate(s, x)?.gradient;
        let gap: f64 = ga
            .iter()
            .zip(gb.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        total += w * gap;
    }
    Ok(total.sqrt())
}

/// `sum_i base_i ||hess_a(x_i) - hess_b(x_i)||_HS` at time zero.
pub fn hess_diff_l1(
    base: &DiscreteMeasure,
    a: &InterpolatedPotential,
    b: &InterpolatedPotential,
) -> Result<f64> {
    ensure_comparable(a, b)?;
    if base.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: base.dim(),
        });
    }
    let mut total = 0.0;
    for (x, &w) in base.points().rows().into_iter().zip(base.weights()) {
        let ha = a.evaluate(0.0, x)?.hessian;
        let hb = b.evaluate(0.0, x)?.hessian;
        let diff = &ha - &hb;
        total += w * linalg::frobenius_norm(&diff);
    }
    Ok(total)
}

/// Scans probes x times for the smallest hessian eigenvalue and the
/// largest Hilbert-Schmidt norm. Estimates, not certified suprema.
pub fn hessian_extremes(
    ip: &InterpolatedPotential,
    probes: &Array2<f64>,
    s_grid: &[f64],
) -> Result<HessianExtremes> {
    if probes.nrows() == 0 || s_grid.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            have: 0,
            context: "hessian probes or time grid".into(),
        });
    }
    let mut min_eig = f64::INFINITY;
    let mut max_hs = 0.0f64;
    for &s in s_grid {
        for z in probes.rows() {
            let e = ip.evaluate(s, z)?;
            let (lo, _) = linalg::eigen_bounds(&e.hessian)?;
            min_eig = min_eig.min(lo);
            max_hs = max_hs.max(linalg::frobenius_norm(&e.hessian));
        }
    }
    Ok(HessianExtremes { min_eig, max_hs })
}
