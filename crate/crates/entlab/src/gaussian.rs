//! Closed-form one-dimensional Gaussian reference solutions.
//!
//! For Gaussian marginals and quadratic cost the dual potentials are
//! quadratic, so the Schrödinger system collapses to two scalar equations
//! for the curvatures `(p_phi, p_psi)`.  Solving that fixed point gives the
//! entropic plan (a bivariate Gaussian whose precision has off-diagonal
//! `-1/T`), exact interpolated potentials at every time, and closed-form
//! gradient and Hessian differences.  This module is the oracle for every
//! log-concave-family check: nothing here goes through the discrete solver,
//! so agreement with it is evidence, not circularity.
//!
//! Gauge: terminal quadratic data have zero offset at `z = 0`, i.e. the
//! potentials are `p z^2/2 + q z` plus the interpolation's log-normalizer.

use crate::eot::{EotProblem, SolveOptions};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GaussianMeasure};
use crate::potentials::{InterpolatedPotential, Side};
use statrs::distribution::{ContinuousCDF, Normal};

/// Resolvent step `p -> p / (1 + t p)`, the curvature of a quadratic after
/// Gaussian smoothing with variance `t`.
fn resolvent(p: f64, t: f64) -> f64 {
    p / (1.0 + t * p)
}

/// Entropic self-transport data for a 1D Gaussian pair.
#[derive(Debug, Clone, Copy)]
pub struct GaussianEotSolution {
    horizon: f64,
    mean_rho: f64,
    mean_nu: f64,
    var_rho: f64,
    var_nu: f64,
    /// Curvature and gradient intercept of the first-marginal potential.
    p_phi: f64,
    q_phi: f64,
    /// Curvature and gradient intercept of the second-marginal potential.
    p_psi: f64,
    q_psi: f64,
    cross_covariance: f64,
    residual: f64,
}

/// A quadratic `p z^2/2 + q z + offset` with exact derivatives.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticPotential {
    pub curvature: f64,
    pub gradient_intercept: f64,
    pub offset: f64,
}

impl QuadraticPotential {
    pub fn value(&self, z: f64) -> f64 {
        0.5 * self.curvature * z * z + self.gradient_intercept * z + self.offset
    }

    pub fn gradient(&self, z: f64) -> f64 {
        self.curvature * z + self.gradient_intercept
    }
}

/// Discrepancies between the closed form and a discretized solver run.
#[derive(Debug, Clone, Copy)]
pub struct DiscretizationReport {
    pub n_atoms: usize,
    pub cross_covariance_error: f64,
    pub grad_error_max: f64,
}

fn scalar_params(measure: &GaussianMeasure, name: &'static str) -> Result<(f64, f64)> {
    if measure.dim() != 1 {
        return Err(Error::UnsupportedInstance(format!(
            "{name}: closed-form route requires one-dimensional Gaussians, got dim {}",
            measure.dim()
        )));
    }
    let mean = measure.mean()[0];
    let var = measure.covariance()[[0, 0]];
    if !(var > 0.0) {
        return Err(Error::InvalidParameter {
            name,
            value: var,
            reason: "variance must be positive",
        });
    }
    Ok((mean, var))
}

/// Solves the two-curvature fixed point
/// `p_phi = 1/var_rho - p_psi/(1 + T p_psi)`,
/// `p_psi = 1/var_nu  - p_phi/(1 + T p_phi)`
/// by safeguarded iteration from `p_psi = 0`, then recovers the linear
/// terms and the plan cross-covariance from the joint Gaussian density.
pub fn solve(rho: &GaussianMeasure, nu: &GaussianMeasure, horizon: f64) -> Result<GaussianEotSolution> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "horizon",
            value: horizon,
            reason: "must be finite and positive",
        });
    }
    let (mean_rho, var_rho) = scalar_params(rho, "rho")?;
    let (mean_nu, var_nu) = scalar_params(nu, "nu")?;
    let a_rho = 1.0 / var_rho;
    let a_nu = 1.0 / var_nu;
    let t = horizon;

    let mut p_psi = 0.0f64;
    let mut p_phi = a_rho;
    let scale = a_rho.max(a_nu).max(1.0);
    let mut residual = f64::INFINITY;
    for _ in 0..10_000 {
        p_phi = a_rho - resolvent(p_psi, t);
        let next_psi = a_nu - resolvent(p_phi, t);
        residual = (next_psi - p_psi).abs();
        p_psi = next_psi;
        if residual <= 1e-15 * scale {
            break;
        }
    }
    // Defects of both defining equations at the returned point.
    let r1 = (p_phi - (a_rho - resolvent(p_psi, t))).abs();
    let r2 = (p_psi - (a_nu - resolvent(p_phi, t))).abs();
    let residual = r1.max(r2).max(0.0_f64.max(residual - residual)); // r1, r2 pin the value
    if residual > 1e-14 * scale {
        return Err(Error::NotConverged {
            iterations: 10_000,
            residual,
            trace: None,
        });
    }

    // Joint precision [[p_phi + 1/T, -1/T], [-1/T, p_psi + 1/T]].
    let a = p_phi + 1.0 / t;
    let b = p_psi + 1.0 / t;
    let det = a * b - 1.0 / (t * t);
    if det <= 0.0 {
        return Err(Error::DegenerateRun(format!(
            "plan precision not positive definite (det {det})"
        )));
    }
    let cross_covariance = 1.0 / (t * det);
    // Marginal-variance consistency is implied by the fixed point; treat a
    // breach as a numerical bug.
    let var_rho_back = b / det;
    let var_nu_back = a / det;
    let marg = ((var_rho_back - var_rho) / var_rho)
        .abs()
        .max(((var_nu_back - var_nu) / var_nu).abs());
    if marg > 1e-10 {
        return Err(Error::DegenerateRun(format!(
            "marginal variances not reproduced (relative error {marg})"
        )));
    }

    let q_phi = -(a * mean_rho - mean_nu / t);
    let q_psi = -(b * mean_nu - mean_rho / t);

    Ok(GaussianEotSolution {
        horizon,
        mean_rho,
        mean_nu,
        var_rho,
        var_nu,
        p_phi,
        q_phi,
        p_psi,
        q_psi,
        cross_covariance,
        residual: r1.max(r2),
    })
}

impl GaussianEotSolution {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cross_covariance(&self) -> f64 {
        self.cross_covariance
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn curvatures(&self) -> (f64, f64) {
        (self.p_phi, self.p_psi)
    }

    pub fn means(&self) -> (f64, f64) {
        (self.mean_rho, self.mean_nu)
    }

    pub fn variances(&self) -> (f64, f64) {
        (self.var_rho, self.var_nu)
    }

    /// Plan covariance [[var_rho, c], [c, var_nu]].
    pub fn plan_covariance(&self) -> [[f64; 2]; 2] {
        [
            [self.var_rho, self.cross_covariance],
            [self.cross_covariance, self.var_nu],
        ]
    }

    /// Terminal quadratic data for one side: the second-marginal potential
    /// (forward) or the first-marginal potential (backward).
    pub fn terminal(&self, side: Side) -> QuadraticPotential {
        let (p, q) = match side {
            Side::Forward => (self.p_psi, self.q_psi),
            Side::Backward => (self.p_phi, self.q_phi),
        };
        QuadraticPotential {
            curvature: p,
            gradient_intercept: q,
            offset: 0.0,
        }
    }

    /// Interpolated potential at time `s` in `[0, T]`.
    ///
    /// Forward side: smoothing width `tau = T - s` applied to the
    /// second-marginal quadratic; curvature `p_psi / (1 + tau p_psi)`
    /// (the exact backpropagation `h(s) = (h(T)^{-1} + (T-s))^{-1}`).
    /// Backward side: smoothing width `s` applied to the first-marginal
    /// quadratic.
    pub fn interpolated(&self, side: Side, s: f64) -> Result<QuadraticPotential> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(Error::InvalidParameter {
                name: "s",
                value: s,
                reason: "interpolation time must lie in [0, horizon]",
            });
        }
        let width = match side {
            Side::Forward => self.horizon - s,
            Side::Backward => s,
        };
        let base = self.terminal(side);
        let denom = 1.0 + width * base.curvature;
        if denom <= 0.0 {
            return Err(Error::DegenerateRun(format!(
                "quadratic interpolation degenerate (1 + width * curvature = {denom})"
            )));
        }
        Ok(QuadraticPotential {
            curvature: base.curvature / denom,
            gradient_intercept: base.gradient_intercept / denom,
            offset: base.offset + 0.5 * denom.ln()
                - base.gradient_intercept * base.gradient_intercept * width / (2.0 * denom),
        })
    }

}

/// Squared `L^2(rho)` norm of the gradient difference of two interpolated
/// potentials on the same side at time `s`, where `rho` is the first
/// marginal shared by both solutions.
pub fn grad_diff_l2_squared(
    sol_a: &GaussianEotSolution,
    sol_b: &GaussianEotSolution,
    side: Side,
    s: f64,
) -> Result<f64> {
    check_shared_rho(sol_a, sol_b)?;
    let pa = sol_a.interpolated(side, s)?;
    let pb = sol_b.interpolated(side, s)?;
    let dp = pa.curvature - pb.curvature;
    let dq = pa.gradient_intercept - pb.gradient_intercept;
    // E[(dp Z + dq)^2] for Z ~ N(mean_rho, var_rho).
    let m = sol_a.mean_rho;
    let v = sol_a.var_rho;
    Ok(dp * dp * v + (dp * m + dq) * (dp * m + dq))
}

/// `L^1(rho)` norm of the Hessian difference at time `s`; for quadratics
/// the Hessian is constant, so this is just the curvature gap.
pub fn hess_diff_l1(
    sol_a: &GaussianEotSolution,
    sol_b: &GaussianEotSolution,
    side: Side,
    s: f64,
) -> Result<f64> {
    check_shared_rho(sol_a, sol_b)?;
    let pa = sol_a.interpolated(side, s)?;
    let pb = sol_b.interpolated(side, s)?;
    Ok((pa.curvature - pb.curvature).abs())
}

fn check_shared_rho(a: &GaussianEotSolution, b: &GaussianEotSolution) -> Result<()> {
    if (a.mean_rho - b.mean_rho).abs() > 1e-12
        || (a.var_rho - b.var_rho).abs() > 1e-12
        || (a.horizon - b.horizon).abs() > 1e-12
    {
        return Err(Error::AtomMismatch(
            "solutions do not share the first marginal and horizon".to_string(),
        ));
    }
    Ok(())
}

/// Equal-mass quantile discretization of `N(mean, var)` with `n` atoms,
/// quantiles clamped to `mean ± truncation * sigma`.
pub fn quantile_discretization(
    mean: f64,
    var: f64,
    n: usize,
    truncation: f64,
) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            reason: "need at least one atom",
        });
    }
    let sigma = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let points: Vec<f64> = (0..n)
        .map(|k| {
            let u = (k as f64 + 0.5) / n as f64;
            let z = normal.inverse_cdf(u).clamp(-truncation, truncation);
            mean + sigma * z
        })
        .collect();
    DiscreteMeasure::from_points_1d(&points, vec![1.0 / n as f64; n])
}

/// Runs the discrete solver on truncated quantile discretizations of the
/// two Gaussians and reports plan cross-covariance and potential-gradient
/// discrepancies against the closed form.
pub fn crosscheck_discretization(
    sol: &GaussianEotSolution,
    n_atoms: usize,
    truncation: f64,
) -> Result<DiscretizationReport> {
    if n_atoms < 16 {
        return Err(Error::InvalidParameter {
            name: "n_atoms",
            value: n_atoms as f64,
            reason: "need at least 16 atoms",
        });
    }
    let rho = quantile_discretization(sol.mean_rho, sol.var_rho, n_atoms, truncation)?;
    let nu = quantile_discretization(sol.mean_nu, sol.var_nu, n_atoms, truncation)?;
    let problem = EotProblem::new(rho, nu, sol.horizon)?;
    let options = SolveOptions {
        tolerance: 1e-12,
        ..SolveOptions::default()
    };
    let (duals, _trace) = crate::eot::sinkhorn_solve(&problem, &options)?;
    let plan = crate::eot::assemble_plan(&problem, &duals.log_f, &duals.log_g)?;

    // Cross-covariance about the discrete plan means.
    let weights = plan.weights();
    let xs = problem.rho().points();
    let ys = problem.mu().points();
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    for i in 0..weights.nrows() {
        for j in 0..weights.ncols() {
            mean_x += weights[[i, j]] * xs[[i, 0]];
            mean_y += weights[[i, j]] * ys[[j, 0]];
        }
    }
    let mut cross = 0.0;
    for i in 0..weights.nrows() {
        for j in 0..weights.ncols() {
            cross += weights[[i, j]] * (xs[[i, 0]] - mean_x) * (ys[[j, 0]] - mean_y);
        }
    }
    let cross_covariance_error = (cross - sol.cross_covariance).abs();

    // Gradient probes: forward side at s = 0, backward side at 0.4 T
    // (evaluated through the discrete mixture evaluators).
    let forward = InterpolatedPotential::forward_from_duals(&problem, &duals)?;
    let backward = InterpolatedPotential::backward_from_duals(&problem, &duals)?;
    let t = sol.horizon;
    let s_b = 0.4 * t;
    let oracle_fwd = sol.interpolated(Side::Forward, 0.0)?;
    let oracle_bwd = sol.interpolated(Side::Backward, s_b)?;
    let mut grad_error_max: f64 = 0.0;
    for k in -2..=2 {
        let z_f = sol.mean_nu + 0.5 * k as f64 * sol.var_nu.sqrt();
        let ev = forward.evaluate(0.0, ndarray::aview1(&[z_f]))?;
        grad_error_max = grad_error_max.max((ev.gradient[0] - oracle_fwd.gradient(z_f)).abs());
        let z_b = sol.mean_rho + 0.5 * k as f64 * sol.var_rho.sqrt();
        // The mixture evaluator's clock runs toward the atoms at the
        // horizon; the backward potential at time s has kernel width s,
        // which the evaluator reaches at T - s.
        let ev = backward.evaluate(t - s_b, ndarray::aview1(&[z_b]))?;
        grad_error_max = grad_error_max.max((ev.gradient[0] - oracle_bwd.gradient(z_b)).abs());
    }

    Ok(DiscretizationReport {
        n_atoms,
        cross_covariance_error,
        grad_error_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: f64, var: f64) -> GaussianMeasure {
        GaussianMeasure::isotropic(ndarray::arr1(&[mean]), var).unwrap()
    }

    #[test]
    fn unit_variance_cross_covariance_closed_form() {
        // c solves c^2 + T c - var_rho * var_nu = 0.
        let sol = solve(&gauss(0.0, 1.0), &gauss(0.0, 1.0), 1.0).unwrap();
        let expected = -0.5 + 1.25f64.sqrt();
        assert_relative_eq!(sol.cross_covariance(), expected, max_relative = 1e-12);
        assert!(sol.residual() <= 1e-12);
    }

    #[test]
    fn cross_covariance_matches_quadratic_formula_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let vr = rng.random_range(0.2..3.0);
            let vn = rng.random_range(0.2..3.0);
            let t = rng.random_range(0.2..4.0);
            let sol = solve(&gauss(rng.random_range(-2.0..2.0), vr), &gauss(rng.random_range(-2.0..2.0), vn), t).unwrap();
            // Independent route: the quadratic in c from the marginal identities.
            let expected = -0.5 * t + (0.25 * t * t + vr * vn).sqrt();
            assert_relative_eq!(sol.cross_covariance(), expected, max_relative = 1e-11);
            assert!(sol.residual() <= 1e-12);
        }
    }

    #[test]
    fn independence_limit_for_large_horizon() {
        let t = 1.0e6;
        let sol = solve(&gauss(0.0, 1.5), &gauss(0.0, 2.0), t).unwrap();
        assert_relative_eq!(sol.cross_covariance(), 3.0 / t, max_relative = 1e-3);
        assert!(sol.cross_covariance() < 1e-5);
    }

    #[test]
    fn translation_equivariance() {
        let base = solve(&gauss(0.0, 1.3), &gauss(0.0, 0.8), 0.7).unwrap();
        let shifted = solve(&gauss(2.0, 1.3), &gauss(-1.0, 0.8), 0.7).unwrap();
        assert_relative_eq!(
            base.cross_covariance(),
            shifted.cross_covariance(),
            max_relative = 1e-13
        );
        // Curvatures are translation invariant.
        assert_relative_eq!(base.p_phi, shifted.p_phi, max_relative = 1e-13);
        assert_relative_eq!(base.p_psi, shifted.p_psi, max_relative = 1e-13);
        // Gradients shift with the marginal means: the first-marginal
        // potential of the shifted instance, evaluated at z + 2, differs
        // from the base gradient at z by the coupling pull toward the
        // second marginal's shift.
        let q_expected = -( (shifted.p_phi + 1.0/0.7) * 2.0 - (-1.0) / 0.7);
        assert_relative_eq!(shifted.q_phi, q_expected, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let two_d = GaussianMeasure::isotropic(ndarray::arr1(&[0.0, 0.0]), 1.0).unwrap();
        assert!(solve(&two_d, &two_d, 1.0).is_err());
        assert!(solve(&gauss(0.0, 1.0), &gauss(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn curvature_backpropagation_is_exact() {
        // Round-trip: prescribe curvatures, build matching variances,
        // solve, and check h(s) = (h(T)^{-1} + (T-s))^{-1} on a 20-point grid.
        let t = 1.0;
        let p_psi_target = 0.5;
        let p_phi_target = 0.8;
        let a_nu = p_psi_target + resolvent(p_phi_target, t);
        let a_rho = p_phi_target + resolvent(p_psi_target, t);
        let sol = solve(&gauss(0.0, 1.0 / a_rho), &gauss(0.0, 1.0 / a_nu), t).unwrap();
        assert_relative_eq!(sol.p_psi, p_psi_target, max_relative = 1e-12);
        assert_relative_eq!(sol.p_phi, p_phi_target, max_relative = 1e-12);
        for k in 0..20 {
            let s = t * k as f64 / 19.0;
            let h = sol.interpolated(Side::Forward, s).unwrap().curvature;
            let expected = 1.0 / (1.0 / p_psi_target + (t - s));
            assert_relative_eq!(h, expected, max_relative = 1e-12);
        }
        // h(T) = alpha = 0.5, T = 1 gives h(0) = 1/3.
        let h0 = sol.interpolated(Side::Forward, 0.0).unwrap().curvature;
        assert_relative_eq!(h0, 1.0 / 3.0, max_relative = 1e-12);
        // Terminal condition recovered as s -> T.
        let ht = sol.interpolated(Side::Forward, t).unwrap().curvature;
        assert_relative_eq!(ht, 0.5, max_relative = 1e-13);
    }

    #[test]
    fn interpolated_value_matches_quadrature_route() {
        // Independent check of the whole quadratic interpolation: evaluate
        // -ln E_{Y ~ N(z, tau)}[exp(-psi_T(Y))] by Gauss-Hermite quadrature
        // and recover the curvature by an exact-for-quadratics second
        // difference.
        let sol = solve(&gauss(0.3, 1.4), &gauss(-0.2, 0.9), 1.2).unwrap();
        let t = sol.horizon();
        let terminal = sol.terminal(Side::Forward);
        for &s in &[0.2, 0.6, 1.0] {
            let tau = t - s;
            let value = |z: f64| -> f64 {
                let integral = crate::quad::normal_expectation(
                    |y| (-terminal.value(y)).exp(),
                    z,
                    tau.sqrt(),
                    96,
                )
                .unwrap();
                -integral.ln()
            };
            let q = sol.interpolated(Side::Forward, s).unwrap();
            let h = 0.5;
            let z0 = -0.4;
            let second = (value(z0 + h) - 2.0 * value(z0) + value(z0 - h)) / (h * h);
            assert_relative_eq!(second, q.curvature, max_relative = 1e-9);
            let first = (value(z0 + h) - value(z0 - h)) / (2.0 * h);
            assert_relative_eq!(first, q.gradient(z0), max_relative = 1e-9);
            // Offsets agree too: the quadrature value pins the gauge.
            assert_relative_eq!(value(z0), q.value(z0), max_relative = 1e-9);
        }
    }

    #[test]
    fn family_schedule_matches_oracle_curvature() {
        // A log-concave family whose parameter equals the terminal
        // curvature plus 1/T has schedule identical to the exact h(s).
        // Requires p_psi < 0 so that alpha * T < 1.
        let t = 1.0;
        let sol = solve(&gauss(0.0, 0.2), &gauss(0.0, 1.0 / 0.3), t).unwrap();
        assert!(sol.p_psi < 0.0, "instance must have negative terminal curvature");
        let alpha = sol.p_psi + 1.0 / t;
        assert!(alpha > 0.0 && alpha * t < 1.0);
        let family = crate::constants::FamilySpec::log_concave(alpha, t).unwrap();
        let schedule = family.schedule();
        for k in 0..20 {
            let s = 0.95 * t * k as f64 / 19.0;
            let h = sol.interpolated(Side::Forward, s).unwrap().curvature;
            assert_relative_eq!(schedule.lambda(s), h, max_relative = 1e-12);
        }
    }

    #[test]
    fn grad_and_hess_diff_closed_forms() {
        let rho = gauss(0.5, 1.0);
        let sol_a = solve(&rho, &gauss(0.0, 1.0), 1.0).unwrap();
        let sol_b = solve(&rho, &gauss(0.4, 1.3), 1.0).unwrap();
        let d2 = grad_diff_l2_squared(&sol_a, &sol_b, Side::Backward, 0.0).unwrap();
        // Independent Monte Carlo-free oracle: expectation of the squared
        // linear difference under N(0.5, 1).
        let pa = sol_a.interpolated(Side::Backward, 0.0).unwrap();
        let pb = sol_b.interpolated(Side::Backward, 0.0).unwrap();
        let expectation = crate::quad::normal_expectation(
            |z| {
                let d = pa.gradient(z) - pb.gradient(z);
                d * d
            },
            0.5,
            1.0,
            64,
        )
        .unwrap();
        assert_relative_eq!(d2, expectation, max_relative = 1e-12);
        let h1 = hess_diff_l1(&sol_a, &sol_b, Side::Backward, 0.0).unwrap();
        assert_relative_eq!(h1, (pa.curvature - pb.curvature).abs(), max_relative = 1e-13);
        // Different first marginals are rejected.
        let sol_c = solve(&gauss(0.0, 2.0), &gauss(0.0, 1.0), 1.0).unwrap();
        assert!(grad_diff_l2_squared(&sol_a, &sol_c, Side::Backward, 0.0).is_err());
    }

    #[test]
    fn quantile_discretization_shape() {
        let m = quantile_discretization(1.0, 4.0, 64, 5.0).unwrap();
        assert_eq!(m.num_atoms(), 64);
        let mean = m.weighted_mean();
        assert_abs_diff_eq!(mean[0], 1.0, epsilon = 1e-10);
        // Equal masses.
        for &w in m.weights() {
            assert_relative_eq!(w, 1.0 / 64.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn discretized_solver_approaches_closed_form() {
        let sol = solve(&gauss(0.0, 1.0), &gauss(0.3, 0.8), 1.0).unwrap();
        let coarse = crosscheck_discretization(&sol, 128, 5.0).unwrap();
        let fine = crosscheck_discretization(&sol, 256, 5.0).unwrap();
        assert!(fine.cross_covariance_error <= 1e-2);
        assert!(fine.cross_covariance_error < coarse.cross_covariance_error);
        assert!(fine.grad_error_max < 1e-1);
    }

    #[test]
    fn identical_marginals_are_symmetric() {
        let sol = solve(&gauss(0.0, 1.0), &gauss(0.0, 1.0), 1.0).unwrap();
        assert_relative_eq!(sol.p_phi, sol.p_psi, max_relative = 1e-12);
        let report = crosscheck_discretization(&sol, 96, 5.0).unwrap();
        assert!(report.grad_error_max <= 1e-2);
    }
}
