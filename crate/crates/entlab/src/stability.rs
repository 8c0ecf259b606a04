//! Inequality harness: for a base/perturbed marginal pair each bound's
//! left side is computed through the solver, the interpolated evaluators,
//! and quadrature, while its right side comes from measures and the
//! constants module alone. The two paths share no intermediate, so a bug
//! in either one surfaces as a violation instead of cancelling out.
//!
//! Time convention: interpolated backward potentials and backward bridge
//! laws are indexed by the backward clock `u`, under which the backward
//! law at clock `u` is the forward mixture law at `T - u`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{self, MixtureLaw};
use crate::constants::{self, DeltaChoice, FamilyKind, FamilySpec, LambdaSchedule};
use crate::emit::{self, StableHash};
use crate::eot::{self, EotProblem, Plan, SolveOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::potentials::{self, InterpolatedPotential, Side};
use crate::quad;
use crate::stats;

/// Relative slack every check tolerates: `lhs <= rhs + PASS_RTOL * max(1, rhs)`
/// plus any propagated quadrature allowance.
pub const PASS_RTOL: f64 = 1e-8;

/// Residual budget for the exact identity linking the conditional entropy
/// term, the plan relative entropy, and the marginal relative entropy.
pub const IDENTITY_TOL: f64 = 1e-10;

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How the perturbed marginal is produced from the base one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Reweight the base atoms; supports stay shared, so relative
    /// entropies between the pair are finite.
    WeightPerturb,
    /// Move the base atoms, keeping weights. Only checks whose right side
    /// needs the Wasserstein distance alone apply.
    LocationPerturb,
}

/// Seeded recipe turning a base marginal into its perturbation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbMode,
    pub magnitude: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbMode, magnitude: f64, seed: u64) -> Result<Self> {
        if !(magnitude > 0.0) || !magnitude.is_finite() {
            return Err(Error::InvalidParameter {
                name: "magnitude",
                value: magnitude,
                reason: "perturbation size must be finite and positive",
            });
        }
        Ok(PerturbationSpec {
            mode,
            magnitude,
            seed,
        })
    }

    pub fn apply(&self, base: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let mut rng = stream_rng(self.seed, 0);
        match self.mode {
            PerturbMode::WeightPerturb => {
                let factors: Vec<f64> = (0..base.num_atoms())
                    .map(|_| (self.magnitude * rng.random_range(-1.0..1.0)).exp())
                    .collect();
                let raw: Vec<f64> = base
                    .weights()
                    .iter()
                    .zip(&factors)
                    .map(|(&w, &f)| w * f)
                    .collect();
                let total: f64 = raw.iter().sum();
                DiscreteMeasure::new(
                    base.points().clone(),
                    raw.into_iter().map(|w| w / total).collect(),
                )
            }
            PerturbMode::LocationPerturb => {
                let mut points = base.points().clone();
                for mut row in points.rows_mut() {
                    for a in 0..row.len() {
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        row[a] += self.magnitude * g;
                    }
                }
                DiscreteMeasure::new(points, base.weights().to_vec())
            }
        }
    }
}

/// Quadrature resolution for every mixture expectation and time integral.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadOrders {
    /// Gauss-Legendre nodes for time integrals.
    pub time_nodes: usize,
    /// Gauss-Hermite nodes per mixture component in dimension one.
    pub space_nodes_1d: usize,
    /// Gauss-Hermite nodes per axis for the tensorized rule in dimension two.
    pub space_nodes_2d: usize,
    /// Mixture components below this weight are skipped.
    pub weight_floor: f64,
}

impl Default for QuadOrders {
    fn default() -> Self {
        QuadOrders {
            time_nodes: 64,
            space_nodes_1d: 128,
            space_nodes_2d: 64,
            weight_floor: 1e-14,
        }
    }
}

impl QuadOrders {
    /// Lighter resolution for bulk campaigns; the bounds under test carry
    /// orders of magnitude of slack, so the resolution loss is absorbed by
    /// the propagated quadrature allowance.
    pub fn campaign() -> Self {
        QuadOrders {
            time_nodes: 24,
            space_nodes_1d: 48,
            space_nodes_2d: 20,
            weight_floor: 1e-13,
        }
    }

    pub fn space_nodes(&self, dim: usize) -> usize {
        if dim <= 1 {
            self.space_nodes_1d
        } else {
            self.space_nodes_2d
        }
    }
}

/// Curvature assumptions feeding the right sides. The first-marginal
/// family controls the backward potential (semiconcavity level and the
/// gradient-energy constant); the target family controls the forward
/// schedule (localization constants, Hessian envelope, sup-integral).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvatureInput {
    pub rho_family: FamilySpec,
    pub target_family: FamilySpec,
}

impl CurvatureInput {
    /// Compact families with radii read off the recentred supports: the
    /// common shift is the barycenter of the first marginal, the
    /// first-marginal radius covers its atoms, the target radius covers
    /// both second marginals so one family serves either direction.
    pub fn compact_from_supports(
        rho: &DiscreteMeasure,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        horizon: f64,
    ) -> Result<CurvatureInput> {
        let center = rho.weighted_mean();
        let radius_about = |m: &DiscreteMeasure| -> f64 {
            m.points()
                .rows()
                .into_iter()
                .map(|p| {
                    p.iter()
                        .zip(center.iter())
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        };
        Ok(CurvatureInput {
            rho_family: FamilySpec::compact(radius_about(rho), horizon)?,
            target_family: FamilySpec::compact(
                radius_about(mu).max(radius_about(nu)),
                horizon,
            )?,
        })
    }

    pub fn log_concave(alpha_rho: f64, alpha_target: f64, horizon: f64) -> Result<CurvatureInput> {
        Ok(CurvatureInput {
            rho_family: FamilySpec::log_concave(alpha_rho, horizon)?,
            target_family: FamilySpec::log_concave(alpha_target, horizon)?,
        })
    }

    fn scale(family: &FamilySpec) -> f64 {
        match family.kind {
            FamilyKind::Compact { radius } => radius,
            FamilyKind::LogConcave { alpha } => alpha,
        }
    }
}

/// Constants that entered one report's right side.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsSnapshot {
    pub rho_family: FamilySpec,
    pub target_family: FamilySpec,
    pub semiconcavity: f64,
    pub c_phi: f64,
    pub horizon: f64,
    pub w2: f64,
    /// Named check-specific constants, in assembly order.
    pub terms: Vec<(String, f64)>,
}

/// One compared inequality. `pass` means `lhs <= rhs + tolerance` where
/// the tolerance is the pinned relative slack plus any quadrature
/// allowance propagated from either side.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub tolerance: f64,
    pub constants: ConstantsSnapshot,
    pub fingerprint: String,
}

fn fingerprint_of(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    horizon: f64,
) -> String {
    let mut h = StableHash::new();
    h.write_f64(horizon);
    for m in [rho, mu, nu] {
        h.write_array(m.points());
        h.write_slice(m.weights());
    }
    h.hex()
}

/// A solved base/perturbed pair sharing the first marginal, with plans,
/// interpolated potentials on both sides, and the curvature input that
/// prices every right side.
#[derive(Debug, Clone)]
pub struct StabilityInstance {
    rho: DiscreteMeasure,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    horizon: f64,
    curvature: CurvatureInput,
    orders: QuadOrders,
    plan_mu: Plan,
    plan_nu: Plan,
    fwd_mu: InterpolatedPotential,
    fwd_nu: InterpolatedPotential,
    bwd_mu: InterpolatedPotential,
    bwd_nu: InterpolatedPotential,
    w2: f64,
    fingerprint: String,
}

impl StabilityInstance {
    /// Solves both problems at the reference tolerance with compact
    /// curvature read off the supports.
    pub fn solve(
        rho: DiscreteMeasure,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        horizon: f64,
    ) -> Result<StabilityInstance> {
        let curvature = CurvatureInput::compact_from_supports(&rho, &mu, &nu, horizon)?;
        StabilityInstance::solve_with(rho, mu, nu, horizon, curvature, QuadOrders::default(), 1e-12)
    }

    pub fn solve_with(
        rho: DiscreteMeasure,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        horizon: f64,
        curvature: CurvatureInput,
        orders: QuadOrders,
        tolerance: f64,
    ) -> Result<StabilityInstance> {
        let options = SolveOptions {
            tolerance,
            ..SolveOptions::default()
        };
        let solve_pair = |target: &DiscreteMeasure| -> Result<(Plan, InterpolatedPotential, InterpolatedPotential)> {
            let problem = EotProblem::new(rho.clone(), target.clone(), horizon)?;
            let (duals, _) = eot::sinkhorn_solve(&problem, &options)?;
            let plan = eot::assemble_plan(&problem, &duals.log_f, &duals.log_g)?;
            let fwd = InterpolatedPotential::forward_from_duals(&problem, &duals)?;
            let bwd = InterpolatedPotential::backward_from_duals(&problem, &duals)?;
            Ok((plan, fwd, bwd))
        };
        let (plan_mu, fwd_mu, bwd_mu) = solve_pair(&mu)?;
        let (plan_nu, fwd_nu, bwd_nu) = solve_pair(&nu)?;
        let w2 = mu.wasserstein2(&nu)?;
        let fingerprint = fingerprint_of(&rho, &mu, &nu, horizon);
        Ok(StabilityInstance {
            rho,
            mu,
            nu,
            horizon,
            curvature,
            orders,
            plan_mu,
            plan_nu,
            fwd_mu,
            fwd_nu,
            bwd_mu,
            bwd_nu,
            w2,
            fingerprint,
        })
    }

    /// Same solves with the two second marginals' roles exchanged.
    pub fn swapped(&self) -> StabilityInstance {
        let mut out = self.clone();
        std::mem::swap(&mut out.mu, &mut out.nu);
        std::mem::swap(&mut out.plan_mu, &mut out.plan_nu);
        std::mem::swap(&mut out.fwd_mu, &mut out.fwd_nu);
        std::mem::swap(&mut out.bwd_mu, &mut out.bwd_nu);
        out.fingerprint = fingerprint_of(&out.rho, &out.mu, &out.nu, out.horizon);
        out
    }

    pub fn dim(&self) -> usize {
        self.rho.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn w2(&self) -> f64 {
        self.w2
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn curvature(&self) -> &CurvatureInput {
        &self.curvature
    }

    pub fn rho(&self) -> &DiscreteMeasure {
        &self.rho
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn plan_mu(&self) -> &Plan {
        &self.plan_mu
    }

    pub fn plan_nu(&self) -> &Plan {
        &self.plan_nu
    }

    pub fn forward_potential_mu(&self) -> &InterpolatedPotential {
        &self.fwd_mu
    }

    pub fn forward_potential_nu(&self) -> &InterpolatedPotential {
        &self.fwd_nu
    }

    pub fn backward_potential_mu(&self) -> &InterpolatedPotential {
        &self.bwd_mu
    }

    pub fn backward_potential_nu(&self) -> &InterpolatedPotential {
        &self.bwd_nu
    }

    fn lambda_phi(&self) -> f64 {
        self.curvature.rho_family.semiconcavity()
    }

    fn c_phi(&self) -> f64 {
        self.curvature.rho_family.c_phi()
    }

    fn target_schedule(&self) -> LambdaSchedule {
        self.curvature.target_family.schedule()
    }

    fn target_delta(&self) -> Result<DeltaChoice> {
        constants::choose_delta(self.curvature.target_family.semiconcavity())
    }

    fn snapshot(&self, terms: Vec<(String, f64)>) -> ConstantsSnapshot {
        ConstantsSnapshot {
            rho_family: self.curvature.rho_family,
            target_family: self.curvature.target_family,
            semiconcavity: self.lambda_phi(),
            c_phi: self.c_phi(),
            horizon: self.horizon,
            w2: self.w2,
            terms,
        }
    }

    fn report(
        &self,
        check: &str,
        lhs: f64,
        rhs: f64,
        allowance: f64,
        terms: Vec<(String, f64)>,
    ) -> StabilityReport {
        let tolerance = PASS_RTOL * rhs.abs().max(1.0) + allowance;
        StabilityReport {
            check: check.to_string(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: lhs <= rhs + tolerance,
            tolerance,
            constants: self.snapshot(terms),
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Plan relative entropy against marginal relative entropy plus the
    /// semiconcavity-priced squared distance.
    pub fn check_entropic(&self) -> Result<StabilityReport> {
        let lhs = eot::plan_relative_entropy(&self.plan_mu, &self.plan_nu)?;
        let marginal = self.mu.kl_divergence(&self.nu)?;
        let lam = self.lambda_phi();
        let rhs = marginal + lam / (2.0 * self.horizon) * self.w2 * self.w2;
        Ok(self.report(
            "entropic",
            lhs,
            rhs,
            0.0,
            vec![("marginal_entropy".into(), marginal)],
        ))
    }

    /// Averaged conditional relative entropy against the same quadratic
    /// price; also enforces the exact identity that this average equals
    /// the plan relative entropy minus the marginal one.
    pub fn check_conditional(&self) -> Result<StabilityReport> {
        let lhs = eot::conditional_entropy_term(&self.plan_mu, &self.plan_nu)?;
        let plan_kl = eot::plan_relative_entropy(&self.plan_mu, &self.plan_nu)?;
        let marginal = self.mu.kl_divergence(&self.nu)?;
        let residual = (lhs - (plan_kl - marginal)).abs();
        if residual > IDENTITY_TOL * plan_kl.abs().max(1.0) {
            return Err(Error::DegenerateRun(format!(
                "conditional-entropy disintegration identity residual {residual:.3e}"
            )));
        }
        let lam = self.lambda_phi();
        let rhs = lam / (2.0 * self.horizon) * self.w2 * self.w2;
        Ok(self.report(
            "conditional",
            lhs,
            rhs,
            0.0,
            vec![("identity_residual".into(), residual)],
        ))
    }

    /// Squared gradient gap of the backward potentials at clock zero,
    /// averaged over the perturbed marginal, against the gradient-energy
    /// price.
    pub fn check_backward_gradient(&self) -> Result<StabilityReport> {
        let norm = potentials::grad_diff_l2(&self.mu, &self.bwd_mu, &self.bwd_nu, 0.0)?;
        let lhs = norm * norm;
        let lam = self.lambda_phi();
        let c_phi = self.c_phi();
        let rhs = lam * c_phi / (self.horizon * self.horizon) * self.w2 * self.w2;
        Ok(self.report("backward_gradient", lhs, rhs, 0.0, vec![]))
    }

    /// Relative entropy between two conditional columns of the base plan
    /// against the semiconcavity-priced squared atom distance.
    pub fn check_pointwise(&self, y: usize, z: usize) -> Result<StabilityReport> {
        let m = self.plan_nu.col_marginal().len();
        if y >= m || z >= m {
            return Err(Error::InvalidParameter {
                name: "atom_index",
                value: y.max(z) as f64,
                reason: "conditioning atoms must index the second marginal",
            });
        }
        let weights = self.plan_nu.weights();
        let logs = self.plan_nu.log_weights();
        let (py, pz) = (
            self.plan_nu.col_marginal()[y],
            self.plan_nu.col_marginal()[z],
        );
        let mut lhs = 0.0;
        for i in 0..weights.nrows() {
            let w = weights[[i, y]] / py;
            lhs += w * (logs[[i, y]] - py.ln() - logs[[i, z]] + pz.ln());
        }
        let dist_sq = crate::measures::sq_dist(self.nu.point(y), self.nu.point(z));
        let lam = self.lambda_phi();
        let rhs = lam / (2.0 * self.horizon) * dist_sq;
        Ok(self.report(
            "pointwise",
            lhs,
            rhs,
            0.0,
            vec![("pair_distance_sq".into(), dist_sq)],
        ))
    }

    /// Every ordered atom pair of the base plan.
    pub fn check_pointwise_all(&self) -> Result<Vec<StabilityReport>> {
        let m = self.plan_nu.col_marginal().len();
        let mut out = Vec::with_capacity(m * m);
        for y in 0..m {
            for z in 0..m {
                out.push(self.check_pointwise(y, z)?);
            }
        }
        Ok(out)
    }

    /// Clock-`s` refinement of the pointwise bound: entropy between the
    /// conditioned backward laws started at two atoms, against the
    /// widened quadratic price plus the corrector terms evaluated by
    /// mixture quadrature. One-dimensional instances only.
    pub fn check_pointwise_time(&self, y: usize, z: usize, s: f64) -> Result<StabilityReport> {
        self.require_dim_one("pointwise-time entropy integration")?;
        if !(s > 0.0 && s < self.horizon) {
            return Err(Error::InvalidParameter {
                name: "s",
                value: s,
                reason: "clock must lie strictly inside (0, T)",
            });
        }
        if !self.plan_mu.same_grids(&self.plan_nu) {
            return Err(Error::AtomMismatch(
                "pointwise-time comparison needs shared atom grids".into(),
            ));
        }
        let t = self.horizon;
        let law_mu = bridge::conditional_law(&self.plan_mu, y, t - s)?;
        let law_nu = bridge::conditional_law(&self.plan_nu, z, t - s)?;
        let (lhs, lhs_err) = mixture_kl_1d(&law_mu, &law_nu)?;

        let y_point = self.mu.point(y).to_owned();
        let z_point = self.mu.point(z).to_owned();
        let dist_sq = crate::measures::sq_dist(y_point.view(), z_point.view());
        let eta = |clock: f64, x: ArrayView1<f64>| -> Result<f64> {
            Ok(self.bwd_mu.evaluate(clock, x)?.value - self.bwd_nu.evaluate(clock, x)?.value)
        };
        let gh = self.orders.space_nodes(1);
        let mean_eta_hi = law_mu.expectation(|x| eta(s, x), gh, self.orders.weight_floor)?;
        let mean_eta_lo =
            law_mu.expectation(|x| eta(s, x), (gh / 2).max(8), self.orders.weight_floor)?;
        let eta_zero = eta(0.0, y_point.view())?;
        let grad_zero_mu = self.bwd_mu.gradient(0.0, y_point.view())?;
        let grad_zero_nu = self.bwd_nu.gradient(0.0, y_point.view())?;
        let inner: f64 = (0..y_point.len())
            .map(|a| (grad_zero_mu[a] - grad_zero_nu[a]) * (z_point[a] - y_point[a]))
            .sum();

        let lam = self.lambda_phi();
        let rhs = lam / (2.0 * t) * dist_sq
            + 0.5 * (1.0 / s - 1.0 / t) * dist_sq
            + (mean_eta_hi - eta_zero)
            - inner;
        let allowance = lhs_err + (mean_eta_hi - mean_eta_lo).abs() + 1e-12;
        Ok(self.report(
            &format!("pointwise_time_{s:.3}"),
            lhs,
            rhs,
            allowance,
            vec![
                ("pair_distance_sq".into(), dist_sq),
                ("corrector_mean".into(), mean_eta_hi - eta_zero),
                ("corrector_inner".into(), inner),
            ],
        ))
    }

    /// Entropy between the backward laws at clock `s` (the forward
    /// mixtures at `T - s`), integrated on an adaptive spatial grid,
    /// against the widened quadratic price. One-dimensional instances
    /// only.
    pub fn check_time_marginal_entropy(&self, s: f64) -> Result<StabilityReport> {
        self.require_dim_one("time-marginal entropy integration")?;
        if !(s > 0.0 && s < self.horizon) {
            return Err(Error::InvalidParameter {
                name: "s",
                value: s,
                reason: "clock must lie strictly inside (0, T)",
            });
        }
        let t = self.horizon;
        let law_mu = bridge::marginal_law(&self.plan_mu, t - s)?;
        let law_nu = bridge::marginal_law(&self.plan_nu, t - s)?;
        let (lhs, lhs_err) = mixture_kl_1d(&law_mu, &law_nu)?;
        let lam = self.lambda_phi();
        let c_phi = self.c_phi();
        let prefactor = lam / t + 0.5 * (1.0 / s - 1.0 / t) + (lam * c_phi).sqrt() / t;
        let rhs = prefactor * self.w2 * self.w2;
        Ok(self.report(
            &format!("time_entropy_{:.3}", s / t),
            lhs,
            rhs,
            2.0 * lhs_err + 1e-12,
            vec![("prefactor".into(), prefactor)],
        ))
    }

    /// Expectation under a bridge mixture law: one adaptive integral
    /// against the density in dimension one (`space_nodes` unused there),
    /// per-component Gauss-Hermite otherwise.
    fn law_expectation(
        &self,
        law: &MixtureLaw,
        space_nodes: usize,
        f: &mut dyn FnMut(ArrayView1<f64>) -> Result<f64>,
    ) -> Result<f64> {
        if law.dim() == 1 {
            let mut buf = Array1::zeros(1);
            mixture_expect_1d(
                law,
                &mut |x| {
                    buf[0] = x;
                    f(buf.view())
                },
                1e-9,
            )
        } else {
            law.expectation(|z| f(z), space_nodes, self.orders.weight_floor)
        }
    }

    /// `1/2 int_0^{delta T} E |grad diff_s(X_s)|^2 ds` along the base
    /// plan's bridge law, by Gauss-Legendre in time and a mixture
    /// expectation in space. Forward side uses forward potentials and
    /// the forward law at `s`; backward side uses backward potentials and
    /// the forward law at `T - s`.
    fn corrector_energy_at(
        &self,
        side: Side,
        delta: f64,
        time_nodes: usize,
        space_nodes: usize,
    ) -> Result<f64> {
        let t = self.horizon;
        let upper = delta * t;
        let rule = quad::legendre_cached(time_nodes)?;
        let (pa, pb) = match side {
            Side::Forward => (&self.fwd_mu, &self.fwd_nu),
            Side::Backward => (&self.bwd_mu, &self.bwd_nu),
        };
        let half = 0.5 * upper;
        let mut total = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let s = half * (1.0 + x);
            let law_time = match side {
                Side::Forward => s,
                Side::Backward => t - s,
            };
            let law = bridge::marginal_law(&self.plan_mu, law_time)?;
            let mean_sq = self.law_expectation(&law, space_nodes, &mut |z| {
                let ga = pa.gradient(s, z)?;
                let gb = pb.gradient(s, z)?;
                Ok(ga
                    .iter()
                    .zip(gb.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum())
            })?;
            total += w * half * mean_sq;
        }
        Ok(0.5 * total)
    }

    /// Corrector energy with a coarse-refined error estimate.
    pub fn corrector_energy(&self, side: Side, delta: f64) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "time fraction must lie in (0, 1]",
            });
        }
        let gl = self.orders.time_nodes;
        let gh = self.orders.space_nodes(self.dim());
        let hi = self.corrector_energy_at(side, delta, gl, gh)?;
        let lo = self.corrector_energy_at(side, delta, (gl / 2).max(6), (gh / 2).max(8))?;
        Ok((hi, (hi - lo).abs()))
    }

    /// Twice the time-localized forward corrector energy against the
    /// bracket constant.
    pub fn check_corrector_energy(&self, delta: f64) -> Result<StabilityReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "time fraction must lie in (0, 1)",
            });
        }
        let (energy, err) = self.corrector_energy(Side::Forward, delta)?;
        let lhs = 2.0 * energy;
        let bracket =
            constants::stability_bracket(self.lambda_phi(), self.c_phi(), delta / (1.0 - delta));
        let rhs = bracket / self.horizon * self.w2 * self.w2;
        Ok(self.report(
            &format!("corrector_energy_{delta:.3}"),
            lhs,
            rhs,
            2.0 * err + 1e-12,
            vec![("bracket".into(), bracket)],
        ))
    }

    /// Squared gradient gap of the forward potentials at time zero over
    /// the first marginal, against the assembled first-order prefactor.
    pub fn check_gradient_stability(&self) -> Result<StabilityReport> {
        let norm = potentials::grad_diff_l2(&self.rho, &self.fwd_mu, &self.fwd_nu, 0.0)?;
        let lhs = norm * norm;
        let delta = self.target_delta()?;
        let c_delta = constants::c_delta(&self.target_schedule(), 0.0, delta.delta)?;
        let prefactor = constants::c_rho_nu(self.lambda_phi(), self.c_phi(), c_delta, &delta);
        let t = self.horizon;
        let rhs = prefactor / (t * t) * self.w2 * self.w2;
        Ok(self.report(
            "gradient",
            lhs,
            rhs,
            0.0,
            vec![
                ("delta".into(), delta.delta),
                ("c_delta".into(), c_delta),
                ("prefactor".into(), prefactor),
            ],
        ))
    }

    /// Intermediate form of the gradient bound: the same left side against
    /// the localization constant times the clock-`(1-delta)T` entropy plus
    /// the backward tail energy, each quadrature-evaluated. One-dimensional
    /// instances only.
    pub fn check_gradient_stability_intermediate(&self) -> Result<StabilityReport> {
        self.require_dim_one("intermediate gradient bound")?;
        let norm = potentials::grad_diff_l2(&self.rho, &self.fwd_mu, &self.fwd_nu, 0.0)?;
        let lhs = norm * norm;
        let delta = self.target_delta()?;
        let c_delta = constants::c_delta(&self.target_schedule(), 0.0, delta.delta)?;
        let t = self.horizon;

        let cut_clock = (1.0 - delta.delta) * t;
        let law_mu = bridge::marginal_law(&self.plan_mu, t - cut_clock)?;
        let law_nu = bridge::marginal_law(&self.plan_nu, t - cut_clock)?;
        let (cut_entropy, cut_err) = mixture_kl_1d(&law_mu, &law_nu)?;

        let (full, full_err) = self.corrector_energy(Side::Backward, 1.0)?;
        let (head, head_err) = self.corrector_energy(Side::Backward, 1.0 - delta.delta)?;
        let tail = 2.0 * (full - head).max(0.0);
        let rhs = c_delta / t * (2.0 * cut_entropy + tail);
        let allowance = c_delta / t * (2.0 * cut_err + 2.0 * (full_err + head_err)) + 1e-12;
        Ok(self.report(
            "gradient_intermediate",
            lhs,
            rhs,
            allowance,
            vec![
                ("delta".into(), delta.delta),
                ("c_delta".into(), c_delta),
                ("cut_entropy".into(), cut_entropy),
                ("tail_energy".into(), tail),
            ],
        ))
    }

    fn hessian_rhs_pieces(
        &self,
        delta: &DeltaChoice,
    ) -> Result<(f64, f64, Vec<(String, f64)>)> {
        let t = self.horizon;
        let schedule = self.target_schedule();
        let tau_l = delta.delta_prime * t;
        let tau_u = delta.delta * t;
        let c_dp = constants::c_delta(&schedule, delta.delta_prime, delta.delta)?;
        let lbar = constants::lambda_bar(&schedule, tau_l)?;
        let gamma = constants::gamma_envelope(&schedule, self.dim(), tau_u)?;
        let sup = constants::sup_integral(&schedule, tau_l, tau_u)?;
        let k = constants::k_constant(self.lambda_phi(), self.c_phi(), c_dp, lbar, delta, t);
        let a = constants::a_constant(
            self.lambda_phi(),
            self.c_phi(),
            delta,
            t,
            k,
            gamma,
            lbar,
            sup.quadrature,
            tau_l,
            tau_u,
        );
        let terms = vec![
            ("delta".into(), delta.delta),
            ("delta_prime".into(), delta.delta_prime),
            ("c_delta_prime_delta".into(), c_dp),
            ("lambda_bar".into(), lbar),
            ("gamma".into(), gamma),
            ("sup_integral".into(), sup.quadrature),
            ("k".into(), k),
            ("a".into(), a),
        ];
        Ok((a, k, terms))
    }

    /// Hessian gap in the averaged Hilbert-Schmidt norm against the
    /// assembled linear-plus-quadratic price.
    pub fn check_hessian_stability(&self) -> Result<StabilityReport> {
        let lhs = potentials::hess_diff_l1(&self.rho, &self.fwd_mu, &self.fwd_nu)?;
        let delta = self.target_delta()?;
        let (a, k, terms) = self.hessian_rhs_pieces(&delta)?;
        let t = self.horizon;
        let rhs = a * self.w2 + k / (t * t) * self.w2 * self.w2;
        Ok(self.report("hessian", lhs, rhs, 0.0, terms))
    }

    /// Gauss-Legendre integral over `[0, upper]` of a forward-law
    /// expectation.
    fn forward_time_integral(
        &self,
        upper: f64,
        time_nodes: usize,
        space_nodes: usize,
        integrand: &dyn Fn(f64, ArrayView1<f64>) -> Result<f64>,
    ) -> Result<f64> {
        let rule = quad::legendre_cached(time_nodes)?;
        let half = 0.5 * upper;
        let mut total = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let s = half * (1.0 + x);
            let law = bridge::marginal_law(&self.plan_mu, s)?;
            let mean = self.law_expectation(&law, space_nodes, &mut |z| integrand(s, z))?;
            total += w * half * mean;
        }
        Ok(total)
    }

    fn with_estimate(
        &self,
        eval: impl Fn(usize, usize) -> Result<f64>,
    ) -> Result<(f64, f64)> {
        let gl = self.orders.time_nodes;
        let gh = self.orders.space_nodes(self.dim());
        let hi = eval(gl, gh)?;
        let lo = eval((gl / 2).max(6), (gh / 2).max(8))?;
        Ok((hi, (hi - lo).abs()))
    }

    /// The three intermediate bounds feeding the Hessian price at the
    /// standard localization exponents.
    pub fn check_hessian_decomposition(&self) -> Result<Vec<StabilityReport>> {
        let delta = self.target_delta()?;
        self.hessian_decomposition_at(delta.delta, delta.delta_prime)
    }

    /// Same with caller-chosen exponents `delta_prime < delta`.
    pub fn hessian_decomposition_at(
        &self,
        delta: f64,
        delta_prime: f64,
    ) -> Result<Vec<StabilityReport>> {
        if !(0.0 < delta_prime && delta_prime < delta && delta < 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta_prime",
                value: delta_prime,
                reason: "need 0 < delta_prime < delta < 1",
            });
        }
        let choice = DeltaChoice {
            delta,
            delta_prime,
            ratio: delta / (1.0 - delta),
            ratio_prime: delta_prime / (1.0 - delta_prime),
        };
        let t = self.horizon;
        let tau_l = delta_prime * t;
        let schedule = self.target_schedule();
        let lam = self.lambda_phi();
        let c_phi = self.c_phi();
        let mut reports = Vec::with_capacity(3);

        // Corrector energy pinned at the lower cut against the
        // two-exponent localization constant.
        let (cut_energy, cut_err) = self.with_estimate(|_, gh| {
            let law = bridge::marginal_law(&self.plan_mu, tau_l)?;
            self.law_expectation(&law, gh, &mut |z| {
                let ga = self.fwd_mu.gradient(tau_l, z)?;
                let gb = self.fwd_nu.gradient(tau_l, z)?;
                Ok(ga
                    .iter()
                    .zip(gb.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum())
            })
        })?;
        let c_dp = constants::c_delta(&schedule, delta_prime, delta)?;
        let bracket = constants::stability_bracket(lam, c_phi, choice.ratio);
        let rhs_cut = c_dp * bracket / (t * t) * self.w2 * self.w2;
        reports.push(self.report(
            "hessian_cut_energy",
            cut_energy,
            rhs_cut,
            cut_err + 1e-12,
            vec![
                ("c_delta_prime_delta".into(), c_dp),
                ("bracket".into(), bracket),
            ],
        ));

        // Integrated squared Hessian gap against the second-order
        // prefactor.
        let (hess_sq_int, hess_sq_err) = self.with_estimate(|gl, gh| {
            self.forward_time_integral(tau_l, gl, gh, &|s, z| {
                let ha = self.fwd_mu.evaluate(s, z)?.hessian;
                let hb = self.fwd_nu.evaluate(s, z)?.hessian;
                let diff = &ha - &hb;
                let n = linalg::frobenius_norm(&diff);
                Ok(n * n)
            })
        })?;
        let lbar = constants::lambda_bar(&schedule, tau_l)?;
        let k = constants::k_constant(lam, c_phi, c_dp, lbar, &choice, t);
        let rhs_int = k / (t * t) * self.w2 * self.w2;
        reports.push(self.report(
            "hessian_energy_integral",
            hess_sq_int,
            rhs_int,
            hess_sq_err + 1e-12,
            vec![("k".into(), k), ("lambda_bar".into(), lbar)],
        ));

        // Recovery of the time-zero Hessian gap from the integrated gap
        // plus the contracted third-derivative term.
        let (third_int, third_err) = self.with_estimate(|gl, gh| {
            self.forward_time_integral(tau_l, gl, gh, &|s, z| {
                let ga = self.fwd_mu.gradient(s, z)?;
                let gb = self.fwd_nu.gradient(s, z)?;
                let v = Array1::from_shape_fn(ga.len(), |a| ga[a] - gb[a]);
                let m3 = self.fwd_nu.third_derivative(s, z, v.view())?;
                Ok(linalg::frobenius_norm(&m3))
            })
        })?;
        let lhs_rec = potentials::hess_diff_l1(&self.rho, &self.fwd_mu, &self.fwd_nu)?;
        let rhs_rec = (1.0 / tau_l.sqrt() + 2.0 * tau_l.sqrt() * lbar) * hess_sq_int.sqrt()
            + hess_sq_int
            + third_int;
        let sqrt_err = if hess_sq_int > 0.0 {
            hess_sq_err / (2.0 * hess_sq_int.sqrt())
        } else {
            hess_sq_err.sqrt()
        };
        let rec_allowance = (1.0 / tau_l.sqrt() + 2.0 * tau_l.sqrt() * lbar) * sqrt_err
            + hess_sq_err
            + third_err
            + 1e-12;
        reports.push(self.report(
            "hessian_recovery",
            lhs_rec,
            rhs_rec,
            rec_allowance,
            vec![
                ("hessian_energy_integral".into(), hess_sq_int),
                ("third_derivative_integral".into(), third_int),
            ],
        ));
        Ok(reports)
    }

    /// Default probe grid for the third-derivative check: clock fractions
    /// of the localization window, first-marginal atoms as probes, and
    /// coordinate directions.
    pub fn default_probe_grid(&self) -> Result<(Vec<f64>, Array2<f64>, Array2<f64>)> {
        let delta = self.target_delta()?;
        let tau_u = delta.delta * self.horizon;
        let t_grid: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|f| f * tau_u).collect();
        let n = self.rho.num_atoms().min(3);
        let d = self.dim();
        let probes = Array2::from_shape_fn((n, d), |(i, a)| self.rho.points()[[i, a]]);
        let directions = Array2::from_shape_fn((d, d), |(i, a)| if i == a { 1.0 } else { 0.0 });
        Ok((t_grid, probes, directions))
    }

    /// Pointwise third-derivative bound for the base solution's forward
    /// potential over a `(t, probe, direction)` grid. Two reports per
    /// grid point: one with the closed-form curvature-level envelope for
    /// the Hessian sup-norm, one with the empirical sup over the probe
    /// set.
    pub fn check_third_derivative(
        &self,
        t_grid: &[f64],
        probes: &Array2<f64>,
        directions: &Array2<f64>,
    ) -> Result<Vec<StabilityReport>> {
        let delta = self.target_delta()?;
        let t = self.horizon;
        let tau_u = delta.delta * t;
        let schedule = self.target_schedule();
        let gamma_family =
            constants::gamma_bound(self.dim(), t, self.curvature.target_family.semiconcavity());
        let s_grid: Vec<f64> = (0..13).map(|k| tau_u * k as f64 / 12.0).collect();
        let gamma_empirical =
            potentials::hessian_extremes(&self.fwd_nu, probes, &s_grid)?.max_hs;

        let mut out = Vec::new();
        for &tc in t_grid {
            if !(tc > 0.0 && tc < tau_u) {
                return Err(Error::InvalidParameter {
                    name: "t",
                    value: tc,
                    reason: "clock must lie strictly inside the localization window",
                });
            }
            // The inner integral has an integrable inverse-square-root
            // singularity at the lower endpoint; substituting
            // `s = t + w^2` removes it.
            let width = (tau_u - tc).sqrt();
            let f = |w: f64| {
                let s = tc + w * w;
                let i = schedule.i_integral(tc, s).unwrap_or(0.0);
                if i <= 0.0 {
                    2.0
                } else {
                    2.0 * w / i.sqrt()
                }
            };
            let (integral, integral_err) = quad::integrate_adaptive(&f, 0.0, width, 1e-11, 36)?;
            for probe in probes.rows() {
                for direction in directions.rows() {
                    let v_norm: f64 = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let m3 = self.fwd_nu.third_derivative(tc, probe, direction)?;
                    let lhs = linalg::frobenius_norm(&m3);
                    for (label, gamma) in [
                        ("third_derivative_family_gamma", gamma_family),
                        ("third_derivative_empirical_gamma", gamma_empirical),
                    ] {
                        let rhs = v_norm
                            * (1.0 / (tau_u - tc) + 2.0 * gamma)
                            * (2.0 * gamma / (2.0 * std::f64::consts::PI).sqrt())
                            * integral;
                        let allowance = v_norm
                            * (1.0 / (tau_u - tc) + 2.0 * gamma)
                            * (2.0 * gamma / (2.0 * std::f64::consts::PI).sqrt())
                            * integral_err
                            + 1e-12;
                        out.push(self.report(
                            label,
                            lhs,
                            rhs,
                            allowance,
                            vec![
                                ("t".into(), tc),
                                ("tau_u".into(), tau_u),
                                ("gamma".into(), gamma),
                                ("integral".into(), integral),
                            ],
                        ));
                    }
                }
            }
        }
        Ok(out)
    }

    fn require_dim_one(&self, what: &str) -> Result<()> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedInstance(format!(
                "{what} is implemented for one-dimensional instances"
            )));
        }
        Ok(())
    }
}

fn mixture_log_density_1d(law: &MixtureLaw, x: f64) -> f64 {
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * law.variance()).ln();
    let inv_two_var = 1.0 / (2.0 * law.variance());
    let means = law.component_means();
    let mut best = f64::NEG_INFINITY;
    for (k, &w) in law.weights().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let z = x - means[[k, 0]];
        let e = w.ln() - z * z * inv_two_var;
        if e > best {
            best = e;
        }
    }
    if best == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for (k, &w) in law.weights().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let z = x - means[[k, 0]];
        acc += (w.ln() - z * z * inv_two_var - best).exp();
    }
    best + acc.ln() - log_norm
}

fn mixture_span_1d(law: &MixtureLaw, sigmas: f64) -> (f64, f64) {
    let sigma = law.variance().sqrt();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in law.component_means().column(0) {
        lo = lo.min(*m);
        hi = hi.max(*m);
    }
    (lo - sigmas * sigma, hi + sigmas * sigma)
}

fn require_mixture_1d(law: &MixtureLaw) -> Result<()> {
    if law.dim() != 1 {
        return Err(Error::UnsupportedInstance(
            "mixture integration is one-dimensional".into(),
        ));
    }
    if !(law.variance() > 0.0) {
        return Err(Error::DegenerateRun(
            "mixture integration needs positive component variance".into(),
        ));
    }
    Ok(())
}

/// `E_law[f]` by one adaptive integral against the mixture density.
/// All components share one variance, so a single spatial grid replaces
/// per-component quadrature; the tolerance is relative to a probed
/// integrand scale.
fn mixture_expect_1d(
    law: &MixtureLaw,
    f: &mut dyn FnMut(f64) -> Result<f64>,
    rel_tol: f64,
) -> Result<f64> {
    require_mixture_1d(law)?;
    let (a, b) = mixture_span_1d(law, 12.0);
    // Scale probe: a uniform grid alone misses narrow components, and an
    // underestimated scale collapses the tolerance to its absolute floor,
    // which makes the adaptive pass grind on spiky integrands. Probing at
    // the component means pins the density peaks.
    let mut scale: f64 = 0.0;
    for i in 0..9 {
        let x = a + (b - a) * (i as f64 + 0.5) / 9.0;
        let ld = mixture_log_density_1d(law, x);
        if ld > -700.0 {
            scale = scale.max(ld.exp() * f(x)?.abs());
        }
    }
    for (k, &w) in law.weights().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let x = law.component_means()[[k, 0]];
        let ld = mixture_log_density_1d(law, x);
        if ld > -700.0 {
            scale = scale.max(ld.exp() * f(x)?.abs());
        }
    }
    let tol = (rel_tol * scale * (b - a)).max(1e-14);
    let mut failure: Option<Error> = None;
    let g = |x: f64| -> f64 {
        if failure.is_some() {
            return 0.0;
        }
        let ld = mixture_log_density_1d(law, x);
        if ld < -700.0 {
            return 0.0;
        }
        match f(x) {
            Ok(v) => ld.exp() * v,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    let (value, _) = quad::integrate_adaptive(g, a, b, tol, 30)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(value)
}

/// Relative entropy between two equal-variance one-dimensional Gaussian
/// mixtures by adaptive integration. Returns the value and an error
/// estimate.
pub fn mixture_kl_1d(p: &MixtureLaw, q: &MixtureLaw) -> Result<(f64, f64)> {
    require_mixture_1d(p)?;
    require_mixture_1d(q)?;
    let var_gap = (p.variance() - q.variance()).abs();
    if var_gap > 1e-12 * p.variance().max(1.0) {
        return Err(Error::UnsupportedInstance(
            "mixture entropy integration expects equal component variances".into(),
        ));
    }
    let (plo, phi) = mixture_span_1d(p, 14.0);
    let (qlo, qhi) = mixture_span_1d(q, 14.0);
    let a = plo.min(qlo);
    let b = phi.max(qhi);
    let f = |x: f64| {
        let lp = mixture_log_density_1d(p, x);
        if lp < -700.0 {
            return 0.0;
        }
        let lq = mixture_log_density_1d(q, x);
        lp.exp() * (lp - lq)
    };
    let (value, err) = quad::integrate_adaptive(&f, a, b, 1e-11, 42)?;
    Ok((value.max(0.0), err + value.min(0.0).abs()))
}

/// Which inequality a campaign runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Entropic,
    Conditional,
    BackwardGradient,
    Pointwise,
    TimeEntropy,
    CorrectorEnergy,
    Gradient,
    Hessian,
    HessianDecomposition,
    ThirdDerivative,
}

impl CheckKind {
    pub fn all() -> Vec<CheckKind> {
        vec![
            CheckKind::Entropic,
            CheckKind::Conditional,
            CheckKind::BackwardGradient,
            CheckKind::Pointwise,
            CheckKind::TimeEntropy,
            CheckKind::CorrectorEnergy,
            CheckKind::Gradient,
            CheckKind::Hessian,
            CheckKind::HessianDecomposition,
            CheckKind::ThirdDerivative,
        ]
    }

    /// Checks whose statement needs a finite relative entropy between the
    /// second marginals, hence shared atoms.
    pub fn needs_shared_atoms(&self) -> bool {
        matches!(self, CheckKind::Entropic | CheckKind::Conditional)
    }

    /// Quadrature-heavy checks that bulk campaigns may subsample in
    /// dimension two.
    pub fn is_heavy(&self) -> bool {
        matches!(
            self,
            CheckKind::CorrectorEnergy | CheckKind::HessianDecomposition
        )
    }

    pub fn applicable(&self, mode: PerturbMode) -> bool {
        mode == PerturbMode::WeightPerturb || !self.needs_shared_atoms()
    }
}

/// Randomized falsification campaign configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub n_instances: usize,
    pub seed: u64,
    pub dims: Vec<usize>,
    /// Atoms per side are drawn from `3..=max_atoms`.
    pub max_atoms: usize,
    /// Horizon drawn log-uniformly from this closed range.
    pub horizon_range: (f64, f64),
    /// Perturbation magnitude drawn log-uniformly from this closed range.
    pub eps_range: (f64, f64),
    pub mode: PerturbMode,
    pub checks: Vec<CheckKind>,
    /// Backward-clock fractions for the time-marginal entropy check.
    pub s_fractions: Vec<f64>,
    /// Time fractions for the corrector-energy check.
    pub deltas: Vec<f64>,
    pub orders: QuadOrders,
    /// Run heavy checks on two-dimensional instances only when the
    /// instance index is divisible by this. 1 runs them everywhere.
    pub heavy_every: usize,
    /// Heavy checks run on two-dimensional instances only when the plan
    /// has at most this many components; tensorized quadrature cost grows
    /// with the product of the atom counts. 0 keeps heavy checks
    /// one-dimensional.
    pub heavy_max_components: usize,
    /// Denominator for snapping two-dimensional weights onto a rational
    /// grid so the pairwise Wasserstein distance stays exactly computable.
    /// 0 disables snapping.
    pub rational_grid: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            n_instances: 200,
            seed: 7,
            dims: vec![1, 2],
            max_atoms: 32,
            horizon_range: (0.25, 4.0),
            eps_range: (0.01, 0.3),
            mode: PerturbMode::WeightPerturb,
            checks: CheckKind::all(),
            s_fractions: vec![0.25, 0.5, 0.75],
            deltas: vec![0.25, 0.5, 0.8],
            orders: QuadOrders::campaign(),
            heavy_every: 2,
            heavy_max_components: 0,
            rational_grid: 192,
        }
    }
}

/// One CSV row of a campaign.
#[derive(Debug, Clone, Serialize)]
pub struct CampaignRow {
    pub instance_id: u64,
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub w2: f64,
    pub horizon: f64,
    /// Radius of the compact family or curvature level of the log-concave
    /// one, for the first-marginal side.
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub rows: Vec<CampaignRow>,
    pub n_instances: usize,
    pub n_failures: usize,
}

impl CampaignResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,check,lhs,rhs,slack,pass,w2,T,R_or_alpha\n");
        for r in &self.rows {
            out.push_str(&emit::csv_line(&[
                r.instance_id.to_string(),
                r.check.clone(),
                emit::g17(r.lhs),
                emit::g17(r.rhs),
                emit::g17(r.slack),
                r.pass.to_string(),
                emit::g17(r.w2),
                emit::g17(r.horizon),
                emit::g17(r.scale),
            ]));
        }
        out
    }
}

/// Largest-remainder rounding of a probability vector onto multiples of
/// `1/grid`, keeping at least one unit per atom so absolute continuity
/// between snapped vectors survives.
pub fn snap_weights(weights: &[f64], grid: usize) -> Result<Vec<f64>> {
    let n = weights.len();
    if grid < 2 * n {
        return Err(Error::InvalidParameter {
            name: "grid",
            value: grid as f64,
            reason: "rational grid must be at least twice the atom count",
        });
    }
    let mut counts: Vec<i64> = weights
        .iter()
        .map(|&w| ((w * grid as f64).floor() as i64).max(1))
        .collect();
    let mut remainders: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (i, w * grid as f64 - (w * grid as f64).floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut total: i64 = counts.iter().sum();
    let target = grid as i64;
    let mut cursor = 0usize;
    while total < target {
        let (i, _) = remainders[cursor % n];
        counts[i] += 1;
        total += 1;
        cursor += 1;
    }
    // Removing goes from the smallest remainders, skipping singleton
    // atoms.
    let mut cursor = n;
    while total > target {
        cursor = if cursor == 0 { n - 1 } else { cursor - 1 };
        let (i, _) = remainders[cursor % n];
        if counts[i] > 1 {
            counts[i] -= 1;
            total -= 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / grid as f64)
        .collect())
}

fn log_uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn random_ball_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, radius: f64) -> Array2<f64> {
    let mut points = Array2::zeros((n, dim));
    let mut row = 0;
    while row < n {
        let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if candidate.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            for (a, &c) in candidate.iter().enumerate() {
                points[[row, a]] = radius * c;
            }
            row += 1;
        }
    }
    points
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            (0.5 * g).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Draws one campaign instance deterministically from the seed and index.
pub fn campaign_instance(cfg: &CampaignConfig, index: u64) -> Result<StabilityInstance> {
    let mut rng = stream_rng(cfg.seed, index.wrapping_add(1));
    let dim = cfg.dims[rng.random_range(0..cfg.dims.len())];
    let n_rho = rng.random_range(3..=cfg.max_atoms);
    let n_tgt = rng.random_range(3..=cfg.max_atoms);
    let radius = rng.random_range(0.8..2.5);
    let horizon = log_uniform(&mut rng, cfg.horizon_range);
    let eps = log_uniform(&mut rng, cfg.eps_range);

    let rho = DiscreteMeasure::new(
        random_ball_points(&mut rng, n_rho, dim, radius),
        random_weights(&mut rng, n_rho),
    )?;
    let tgt_points = random_ball_points(&mut rng, n_tgt, dim, radius);
    let mut nu_weights = random_weights(&mut rng, n_tgt);
    let snap = dim == 2 && cfg.rational_grid > 0;
    if snap {
        nu_weights = snap_weights(&nu_weights, cfg.rational_grid)?;
    }
    let nu = DiscreteMeasure::new(tgt_points, nu_weights)?;
    let perturb = PerturbationSpec::new(cfg.mode, eps, rng.random::<u64>())?;
    let mut mu = perturb.apply(&nu)?;
    if snap && cfg.mode == PerturbMode::WeightPerturb {
        mu = DiscreteMeasure::new(
            mu.points().clone(),
            snap_weights(mu.weights(), cfg.rational_grid)?,
        )?;
    }
    let curvature = CurvatureInput::compact_from_supports(&rho, &mu, &nu, horizon)?;
    StabilityInstance::solve_with(rho, mu, nu, horizon, curvature, cfg.orders, 1e-12)
}

fn push_reports(
    rows: &mut Vec<CampaignRow>,
    instance_id: u64,
    scale: f64,
    reports: impl IntoIterator<Item = StabilityReport>,
    rename: Option<&str>,
) {
    for r in reports {
        rows.push(CampaignRow {
            instance_id,
            check: match rename {
                Some(suffix) => format!("{}_{}", r.check, suffix),
                None => r.check,
            },
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            pass: r.pass,
            w2: r.constants.w2,
            horizon: r.constants.horizon,
            scale,
        });
    }
}

/// Runs the randomized falsification campaign. Rows come out ordered by
/// instance then check, independent of scheduling.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    if cfg.n_instances == 0 || cfg.checks.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            have: 0,
            context: "campaign instances or checks".into(),
        });
    }
    if cfg.heavy_every == 0 {
        return Err(Error::InvalidParameter {
            name: "heavy_every",
            value: 0.0,
            reason: "heavy-check stride must be positive",
        });
    }
    let mut rows = Vec::new();
    for index in 0..cfg.n_instances as u64 {
        let instance_rows = campaign_rows_for(cfg, index)?;
        rows.extend(instance_rows);
    }
    let n_failures = rows.iter().filter(|r| !r.pass).count();
    Ok(CampaignResult {
        rows,
        n_instances: cfg.n_instances,
        n_failures,
    })
}

/// Rows for one campaign instance; `run_campaign` concatenates these in
/// index order, and callers that parallelize at the job level can do the
/// same.
pub fn campaign_rows_for(cfg: &CampaignConfig, index: u64) -> Result<Vec<CampaignRow>> {
    let instance = campaign_instance(cfg, index)?;
    let scale = CurvatureInput::scale(&instance.curvature.rho_family);
    let dim = instance.dim();
    let components = instance.plan_mu.weights().len();
    let heavy_ok = dim == 1
        || (index % cfg.heavy_every as u64 == 0 && components <= cfg.heavy_max_components);
    let mut rows = Vec::new();
    let mut pair_rng = stream_rng(cfg.seed ^ 0x70c1_7a9e, index);
    for check in &cfg.checks {
        if !check.applicable(cfg.mode) {
            continue;
        }
        match check {
            CheckKind::Entropic => {
                push_reports(&mut rows, index, scale, [instance.check_entropic()?], None);
                push_reports(
                    &mut rows,
                    index,
                    scale,
                    [instance.swapped().check_entropic()?],
                    Some("swapped"),
                );
            }
            CheckKind::Conditional => {
                push_reports(&mut rows, index, scale, [instance.check_conditional()?], None);
            }
            CheckKind::BackwardGradient => {
                push_reports(
                    &mut rows,
                    index,
                    scale,
                    [instance.check_backward_gradient()?],
                    None,
                );
            }
            CheckKind::Pointwise => {
                let m = instance.nu.num_atoms();
                let reports: Vec<StabilityReport> = (0..6)
                    .map(|_| {
                        let y = pair_rng.random_range(0..m);
                        let z = pair_rng.random_range(0..m);
                        instance.check_pointwise(y, z)
                    })
                    .collect::<Result<_>>()?;
                push_reports(&mut rows, index, scale, reports, None);
            }
            CheckKind::TimeEntropy => {
                if dim == 1 {
                    for &f in &cfg.s_fractions {
                        push_reports(
                            &mut rows,
                            index,
                            scale,
                            [instance.check_time_marginal_entropy(f * instance.horizon)?],
                            None,
                        );
                    }
                }
            }
            CheckKind::CorrectorEnergy => {
                if heavy_ok {
                    for &d in &cfg.deltas {
                        push_reports(
                            &mut rows,
                            index,
                            scale,
                            [instance.check_corrector_energy(d)?],
                            None,
                        );
                    }
                }
            }
            CheckKind::Gradient => {
                push_reports(
                    &mut rows,
                    index,
                    scale,
                    [instance.check_gradient_stability()?],
                    None,
                );
                if dim == 1 && heavy_ok {
                    push_reports(
                        &mut rows,
                        index,
                        scale,
                        [instance.check_gradient_stability_intermediate()?],
                        None,
                    );
                }
            }
            CheckKind::Hessian => {
                push_reports(
                    &mut rows,
                    index,
                    scale,
                    [instance.check_hessian_stability()?],
                    None,
                );
            }
            CheckKind::HessianDecomposition => {
                if heavy_ok {
                    push_reports(
                        &mut rows,
                        index,
                        scale,
                        instance.check_hessian_decomposition()?,
                        None,
                    );
                }
            }
            CheckKind::ThirdDerivative => {
                let (t_grid, probes, directions) = instance.default_probe_grid()?;
                push_reports(
                    &mut rows,
                    index,
                    scale,
                    instance.check_third_derivative(&t_grid, &probes, &directions)?,
                    None,
                );
            }
        }
    }
    Ok(rows)
}

/// Which closed-form envelope a scaling sweep tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepLane {
    /// Discrete atoms inside a ball; envelopes in the radius and horizon.
    CompactDiscrete,
    /// Gaussian marginals through the closed-form solver; envelopes in
    /// the curvature level and horizon.
    LogConcaveGaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lane: SweepLane,
    pub horizon_grid: Vec<f64>,
    /// Radii (compact) or curvature levels (log-concave). The slope fit
    /// in the horizon runs along the first entry.
    pub scale_grid: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    pub atoms: usize,
}

impl SweepConfig {
    pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
        (0..n).map(|k| lo * ratio.powi(k as i32)).collect()
    }

    pub fn compact_default() -> SweepConfig {
        SweepConfig {
            lane: SweepLane::CompactDiscrete,
            horizon_grid: Self::geometric_grid(0.25, 4.0, 8),
            scale_grid: vec![2.0, 1.5, 2.5],
            eps: 0.1,
            seed: 11,
            atoms: 8,
        }
    }

    pub fn log_concave_default() -> SweepConfig {
        SweepConfig {
            lane: SweepLane::LogConcaveGaussian,
            horizon_grid: Self::geometric_grid(0.25, 4.0, 8),
            scale_grid: vec![0.2, 0.1],
            eps: 0.1,
            seed: 11,
            atoms: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lane: SweepLane,
    pub horizon: f64,
    pub scale: f64,
    pub w2: f64,
    pub grad_lhs: f64,
    /// Left side divided by the squared distance.
    pub grad_ratio: f64,
    /// Prefactor-free envelope for the ratio.
    pub grad_envelope: f64,
    /// Exact assembled right side.
    pub grad_rhs: f64,
    pub grad_pass: bool,
    pub hess_lhs: f64,
    pub hess_rhs: f64,
    pub hess_envelope: f64,
    pub hess_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub in_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Sup-fitted prefactor: the largest observed `grad_ratio / envelope`
    /// over the whole grid, so every row satisfies
    /// `grad_ratio <= grad_prefactor * grad_envelope`.
    pub grad_prefactor: f64,
    /// Sup-fitted prefactor for the Hessian rows.
    pub hess_prefactor: f64,
    /// Windowed log-log slope in the horizon of the assembled gradient
    /// constant (`grad_rhs / w2^2`), along the first scale entry.
    pub constant_fit: SlopeFit,
    /// Log-log slope of the measured gradient ratio, reported for
    /// diagnostics; the bound is not tight so no window applies.
    pub measured_slope: f64,
    pub measured_r_squared: f64,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "lane,T,scale,w2,grad_lhs,grad_ratio,grad_envelope,grad_rhs,grad_pass,hess_lhs,hess_rhs,hess_envelope,hess_pass\n",
        );
        for r in &self.rows {
            let lane = match r.lane {
                SweepLane::CompactDiscrete => "compact",
                SweepLane::LogConcaveGaussian => "log_concave",
            };
            out.push_str(&emit::csv_line(&[
                lane.to_string(),
                emit::g17(r.horizon),
                emit::g17(r.scale),
                emit::g17(r.w2),
                emit::g17(r.grad_lhs),
                emit::g17(r.grad_ratio),
                emit::g17(r.grad_envelope),
                emit::g17(r.grad_rhs),
                r.grad_pass.to_string(),
                emit::g17(r.hess_lhs),
                emit::g17(r.hess_rhs),
                emit::g17(r.hess_envelope),
                r.hess_pass.to_string(),
            ]));
        }
        out
    }
}

/// Sweeps the horizon and scale grids, recording the measured gradient
/// and Hessian gaps next to the exact right sides and the prefactor-free
/// envelopes, and fits the log-log slope of the gradient ratio in the
/// horizon.
pub fn scaling_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    if cfg.horizon_grid.len() < 2 || cfg.scale_grid.is_empty() {
        return Err(Error::InsufficientData {
            needed: 2,
            have: cfg.horizon_grid.len(),
            context: "sweep grids".into(),
        });
    }
    let mut rows = Vec::new();
    for &scale in &cfg.scale_grid {
        for &t in &cfg.horizon_grid {
            rows.push(match cfg.lane {
                SweepLane::CompactDiscrete => compact_sweep_row(cfg, t, scale)?,
                SweepLane::LogConcaveGaussian => gaussian_sweep_row(cfg, t, scale)?,
            });
        }
    }
    let nt = cfg.horizon_grid.len();
    let xs: Vec<f64> = rows[..nt].iter().map(|r| r.horizon.ln()).collect();
    let ys_const: Vec<f64> = rows[..nt]
        .iter()
        .map(|r| (r.grad_rhs / (r.w2 * r.w2)).ln())
        .collect();
    let fit_const = stats::linear_fit(&xs, &ys_const)?;
    let window = match cfg.lane {
        SweepLane::CompactDiscrete => (-4.5, -3.0),
        SweepLane::LogConcaveGaussian => (-4.5, -3.2),
    };
    let constant_fit = SlopeFit {
        slope: fit_const.slope,
        intercept: fit_const.intercept,
        r_squared: fit_const.r_squared,
        window,
        in_window: fit_const.slope >= window.0 && fit_const.slope <= window.1,
    };
    let ys_meas: Vec<f64> = rows[..nt].iter().map(|r| r.grad_ratio.ln()).collect();
    let fit_meas = stats::linear_fit(&xs, &ys_meas)?;
    let grad_prefactor = rows
        .iter()
        .map(|r| r.grad_ratio / r.grad_envelope)
        .fold(0.0, f64::max);
    let hess_prefactor = rows
        .iter()
        .map(|r| r.hess_lhs / r.hess_envelope)
        .fold(0.0, f64::max);
    Ok(SweepTable {
        rows,
        grad_prefactor,
        hess_prefactor,
        constant_fit,
        measured_slope: fit_meas.slope,
        measured_r_squared: fit_meas.r_squared,
    })
}

fn compact_sweep_row(cfg: &SweepConfig, horizon: f64, radius: f64) -> Result<SweepRow> {
    // One fixed unit-ball geometry across the whole grid; only the
    // horizon and the spatial scale vary.
    let mut rng = stream_rng(cfg.seed, 0);
    let n = cfg.atoms.max(4);
    let unit_rho = random_ball_points(&mut rng, n, 1, 1.0);
    let unit_tgt = random_ball_points(&mut rng, n, 1, 1.0);
    let rho_w = random_weights(&mut rng, n);
    let nu_w = random_weights(&mut rng, n);
    let factors: Vec<f64> = (0..n)
        .map(|_| (cfg.eps * rng.random_range(-1.0..1.0)).exp())
        .collect();
    let mu_raw: Vec<f64> = nu_w.iter().zip(&factors).map(|(&w, &f)| w * f).collect();
    let total: f64 = mu_raw.iter().sum();
    let mu_w: Vec<f64> = mu_raw.into_iter().map(|w| w / total).collect();

    let scale_points = |unit: &Array2<f64>| unit.mapv(|x| radius * x);
    let rho = DiscreteMeasure::new(scale_points(&unit_rho), rho_w)?;
    let nu = DiscreteMeasure::new(scale_points(&unit_tgt), nu_w)?;
    let mu = DiscreteMeasure::new(scale_points(&unit_tgt), mu_w)?;
    let instance = StabilityInstance::solve_with(
        rho.clone(),
        mu,
        nu,
        horizon,
        CurvatureInput::compact_from_supports(&rho, &rho, &rho, horizon)?,
        QuadOrders::campaign(),
        1e-12,
    )?;
    let grad = instance.check_gradient_stability()?;
    let hess = instance.check_hessian_stability()?;
    let r = CurvatureInput::scale(&instance.curvature.target_family);
    let w2 = instance.w2();
    Ok(SweepRow {
        lane: SweepLane::CompactDiscrete,
        horizon,
        scale: radius,
        w2,
        grad_lhs: grad.lhs,
        grad_ratio: grad.lhs / (w2 * w2),
        grad_envelope: r.powi(4) / horizon.powi(4),
        grad_rhs: grad.rhs,
        grad_pass: grad.pass,
        hess_lhs: hess.lhs,
        hess_rhs: hess.rhs,
        hess_envelope: (r.powi(4) / horizon.powf(3.5) + 1.0 / horizon) * w2
            + r.powi(6) / horizon.powi(5) * w2 * w2,
        hess_pass: hess.pass,
    })
}

fn gaussian_sweep_row(cfg: &SweepConfig, horizon: f64, alpha: f64) -> Result<SweepRow> {
    use crate::gaussian;
    use crate::measures::GaussianMeasure;
    if alpha * horizon >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "log-concave sweep requires alpha * horizon < 1",
        });
    }
    let var = 1.0 / alpha;
    let rho = GaussianMeasure::isotropic(Array1::zeros(1), var)?;
    let nu = GaussianMeasure::isotropic(Array1::from_elem(1, 0.3), var)?;
    // The perturbed marginal keeps curvature at least alpha: it shifts
    // the mean and shrinks the variance.
    let mu = GaussianMeasure::isotropic(
        Array1::from_elem(1, 0.3 + 0.5 * cfg.eps),
        var * (1.0 - 0.25 * cfg.eps),
    )?;
    let sol_nu = gaussian::solve(&rho, &nu, horizon)?;
    let sol_mu = gaussian::solve(&rho, &mu, horizon)?;
    let w2 = mu.wasserstein2(&nu)?;

    let grad_lhs = gaussian::grad_diff_l2_squared(&sol_mu, &sol_nu, Side::Forward, 0.0)?;
    let hess_lhs = gaussian::hess_diff_l1(&sol_mu, &sol_nu, Side::Forward, 0.0)?;

    let family = FamilySpec::log_concave(alpha, horizon)?;
    let schedule = family.schedule();
    let lam = family.semiconcavity();
    let c_phi = family.c_phi();
    let delta = constants::choose_delta(lam)?;
    let c_delta = constants::c_delta(&schedule, 0.0, delta.delta)?;
    let grad_rhs =
        constants::c_rho_nu(lam, c_phi, c_delta, &delta) / (horizon * horizon) * w2 * w2;

    let tau_l = delta.delta_prime * horizon;
    let tau_u = delta.delta * horizon;
    let c_dp = constants::c_delta(&schedule, delta.delta_prime, delta.delta)?;
    let lbar = constants::lambda_bar(&schedule, tau_l)?;
    let gamma = constants::gamma_family(&family, 1);
    let sup = constants::sup_integral(&schedule, tau_l, tau_u)?;
    let k = constants::k_constant(lam, c_phi, c_dp, lbar, &delta, horizon);
    let a = constants::a_constant(
        lam,
        c_phi,
        &delta,
        horizon,
        k,
        gamma,
        lbar,
        sup.quadrature,
        tau_l,
        tau_u,
    );
    let hess_rhs = a * w2 + k / (horizon * horizon) * w2 * w2;
    let tol = |rhs: f64| PASS_RTOL * rhs.max(1.0);
    Ok(SweepRow {
        lane: SweepLane::LogConcaveGaussian,
        horizon,
        scale: alpha,
        w2,
        grad_lhs,
        grad_ratio: grad_lhs / (w2 * w2),
        grad_envelope: 1.0 / (alpha * alpha * horizon.powi(4)),
        grad_rhs,
        grad_pass: grad_lhs <= grad_rhs + tol(grad_rhs),
        hess_lhs,
        hess_rhs,
        hess_envelope: (1.0 / (alpha.powf(1.5) * horizon.powi(3))
            + 1.0 / (alpha.powf(1.5) * horizon * horizon))
            * w2
            + 1.0 / (alpha * alpha * horizon.powi(4)) * w2 * w2,
        hess_pass: hess_lhs <= hess_rhs + tol(hess_rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tri(xs: &[f64], ws: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::from_points_1d(xs, ws.to_vec()).unwrap()
    }

    fn smoke_instance() -> StabilityInstance {
        let rho = tri(&[-1.2, -0.3, 0.4, 1.1], &[0.3, 0.25, 0.25, 0.2]);
        let nu = tri(&[-0.9, -0.1, 0.6, 1.2], &[0.2, 0.3, 0.3, 0.2]);
        let spec = PerturbationSpec::new(PerturbMode::WeightPerturb, 0.15, 42).unwrap();
        let mu = spec.apply(&nu).unwrap();
        StabilityInstance::solve(rho, mu, nu, 1.0).unwrap()
    }

    #[test]
    fn weight_perturbation_is_probability_on_same_atoms() {
        let nu = tri(&[-0.5, 0.1, 0.8], &[0.3, 0.4, 0.3]);
        let spec = PerturbationSpec::new(PerturbMode::WeightPerturb, 0.2, 3).unwrap();
        let mu = spec.apply(&nu).unwrap();
        assert!(nu.same_support(&mu));
        let total: f64 = mu.weights().iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        assert!(mu.weights().iter().all(|&w| w > 0.0));
        // Deterministic under the same seed.
        let again = spec.apply(&nu).unwrap();
        assert_eq!(mu.weights(), again.weights());
    }

    #[test]
    fn location_perturbation_keeps_weights() {
        let nu = tri(&[-0.5, 0.1, 0.8], &[0.3, 0.4, 0.3]);
        let spec = PerturbationSpec::new(PerturbMode::LocationPerturb, 0.05, 3).unwrap();
        let mu = spec.apply(&nu).unwrap();
        assert_eq!(mu.weights(), nu.weights());
        assert!(!nu.same_support(&mu));
    }

    #[test]
    fn zero_magnitude_rejected() {
        assert!(PerturbationSpec::new(PerturbMode::WeightPerturb, 0.0, 1).is_err());
    }

    #[test]
    fn identical_marginals_give_zero_slack_passes() {
        let rho = tri(&[-1.0, 0.0, 1.0], &[0.4, 0.3, 0.3]);
        let nu = tri(&[-0.6, 0.5], &[0.55, 0.45]);
        let instance =
            StabilityInstance::solve(rho, nu.clone(), nu, 0.8).unwrap();
        assert_eq!(instance.w2(), 0.0);
        for report in [
            instance.check_entropic().unwrap(),
            instance.check_conditional().unwrap(),
            instance.check_backward_gradient().unwrap(),
            instance.check_gradient_stability().unwrap(),
            instance.check_hessian_stability().unwrap(),
        ] {
            assert!(report.pass, "{} failed: {report:?}", report.check);
            assert!(report.lhs.abs() < 1e-10, "{}: lhs {}", report.check, report.lhs);
            assert!(report.rhs.abs() < 1e-20, "{}: rhs {}", report.check, report.rhs);
        }
    }

    #[test]
    fn entropic_and_conditional_pass_on_smoke_instance() {
        let instance = smoke_instance();
        let e = instance.check_entropic().unwrap();
        assert!(e.pass && e.slack > 0.0, "{e:?}");
        let c = instance.check_conditional().unwrap();
        assert!(c.pass, "{c:?}");
        // Disintegration: conditional term plus marginal entropy equals
        // plan entropy, already enforced inside the check.
        let swapped = instance.swapped();
        assert!(swapped.check_entropic().unwrap().pass);
        assert!(swapped.check_conditional().unwrap().pass);
    }

    #[test]
    fn backward_gradient_passes_on_smoke_instance() {
        let r = smoke_instance().check_backward_gradient().unwrap();
        assert!(r.pass && r.lhs > 0.0 && r.lhs < r.rhs, "{r:?}");
    }

    #[test]
    fn pointwise_all_pairs_pass() {
        let instance = smoke_instance();
        let reports = instance.check_pointwise_all().unwrap();
        assert_eq!(reports.len(), 16);
        for r in &reports {
            assert!(r.pass, "{r:?}");
        }
        // Identical atoms compare at exactly zero on both sides.
        let same = instance.check_pointwise(2, 2).unwrap();
        assert!(same.lhs.abs() < 1e-14 && same.rhs == 0.0);
    }

    #[test]
    fn pointwise_time_passes_and_matches_discrete_limit_near_horizon() {
        let instance = smoke_instance();
        let t = instance.horizon();
        for &(y, z) in &[(0usize, 2usize), (3, 1)] {
            for &s in &[0.3 * t, 0.7 * t] {
                let r = instance.check_pointwise_time(y, z, s).unwrap();
                assert!(r.pass, "{r:?}");
            }
            // Near the horizon the conditioned mixtures concentrate on the
            // first-marginal atoms, so the entropy approaches the discrete
            // conditional relative entropy between the two plan columns.
            let s = 0.998 * t;
            let law_mu = bridge::conditional_law(instance.plan_mu(), y, t - s).unwrap();
            let law_nu = bridge::conditional_law(instance.plan_nu(), z, t - s).unwrap();
            let (mix, _) = mixture_kl_1d(&law_mu, &law_nu).unwrap();
            let wm = instance.plan_mu().weights();
            let wn = instance.plan_nu().weights();
            let py = instance.plan_mu().col_marginal()[y];
            let pz = instance.plan_nu().col_marginal()[z];
            let mut disc = 0.0;
            for i in 0..wm.nrows() {
                let p = wm[[i, y]] / py;
                disc += p * ((wm[[i, y]] / py).ln() - (wn[[i, z]] / pz).ln());
            }
            assert!(
                (mix - disc).abs() < 0.02 * disc.abs().max(1.0) + 0.02,
                "mixture {mix} vs discrete {disc}"
            );
        }
    }

    #[test]
    fn time_marginal_entropy_passes_and_respects_data_processing() {
        let instance = smoke_instance();
        let t = instance.horizon();
        let plan_kl =
            eot::plan_relative_entropy(instance.plan_mu(), instance.plan_nu()).unwrap();
        for &f in &[0.25, 0.5, 0.75] {
            let r = instance.check_time_marginal_entropy(f * t).unwrap();
            assert!(r.pass, "{r:?}");
            // The clock-s law is a coarsening of the plan, so its entropy
            // cannot exceed the plan entropy.
            assert!(
                r.lhs <= plan_kl + r.tolerance,
                "s={}: {} > {}",
                f * t,
                r.lhs,
                plan_kl
            );
        }
    }

    #[test]
    fn corrector_energy_full_interval_recovers_plan_entropy() {
        let instance = smoke_instance();
        let plan_kl =
            eot::plan_relative_entropy(instance.plan_mu(), instance.plan_nu()).unwrap();
        let (fwd, fwd_err) = instance.corrector_energy(Side::Forward, 1.0).unwrap();
        assert!(
            (fwd - plan_kl).abs() <= 1e-6_f64.max(3.0 * fwd_err),
            "forward energy {fwd} vs plan entropy {plan_kl} (err {fwd_err})"
        );
        // Same value through the bridge module's integrator.
        let via_bridge = bridge::girsanov_energy(
            instance.plan_mu(),
            instance.plan_nu(),
            instance.forward_potential_mu(),
            instance.forward_potential_nu(),
            1.0,
            64,
        )
        .unwrap();
        assert!(
            (fwd - via_bridge.value).abs()
                <= 1e-8_f64.max(3.0 * (fwd_err + via_bridge.quadrature_error)),
            "local {fwd} vs bridge {}",
            via_bridge.value
        );
    }

    #[test]
    fn corrector_energy_checks_pass() {
        let instance = smoke_instance();
        for &d in &[0.25, 0.5, 0.8] {
            let r = instance.check_corrector_energy(d).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn gradient_stability_direct_and_intermediate_pass() {
        let instance = smoke_instance();
        let direct = instance.check_gradient_stability().unwrap();
        assert!(direct.pass && direct.lhs > 0.0, "{direct:?}");
        let inter = instance.check_gradient_stability_intermediate().unwrap();
        assert!(inter.pass, "{inter:?}");
        assert_eq!(direct.lhs, inter.lhs);
    }

    #[test]
    fn hessian_stability_and_decomposition_pass() {
        let instance = smoke_instance();
        let h = instance.check_hessian_stability().unwrap();
        assert!(h.pass && h.lhs > 0.0, "{h:?}");
        for r in instance.check_hessian_decomposition().unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn hessian_decomposition_rejects_bad_exponents() {
        let instance = smoke_instance();
        assert!(instance.hessian_decomposition_at(0.3, 0.3).is_err());
        assert!(instance.hessian_decomposition_at(0.3, 0.6).is_err());
    }

    #[test]
    fn third_derivative_bound_passes_both_gammas() {
        let instance = smoke_instance();
        let (t_grid, probes, directions) = instance.default_probe_grid().unwrap();
        let reports = instance
            .check_third_derivative(&t_grid, &probes, &directions)
            .unwrap();
        assert_eq!(reports.len(), 2 * t_grid.len() * probes.nrows());
        for r in &reports {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn mixture_kl_identical_laws_is_zero() {
        let instance = smoke_instance();
        let law = bridge::marginal_law(instance.plan_mu(), 0.4).unwrap();
        let (v, err) = mixture_kl_1d(&law, &law).unwrap();
        assert!(v.abs() <= 1e-10 + err, "{v} (err {err})");
    }

    #[test]
    fn mixture_kl_matches_single_gaussian_closed_form() {
        let mk = |mean: f64, var: f64| {
            MixtureLaw::new(vec![1.0], Array2::from_elem((1, 1), mean), var).unwrap()
        };
        let p = mk(0.0, 0.09);
        let q = mk(0.5, 0.09);
        let (v, err) = mixture_kl_1d(&p, &q).unwrap();
        let exact = 0.5 * 0.5 * 0.5 / 0.09;
        assert!((v - exact).abs() <= 1e-9 + 10.0 * err, "{v} vs {exact}");
    }

    #[test]
    fn snap_weights_lands_on_grid_and_keeps_mass() {
        let w = vec![0.401, 0.299, 0.2, 0.05, 0.05];
        let snapped = snap_weights(&w, 64).unwrap();
        let total: f64 = snapped.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        for (&s, &orig) in snapped.iter().zip(&w) {
            let on_grid = (s * 64.0 - (s * 64.0).round()).abs();
            assert!(on_grid < 1e-9);
            assert!(s >= 1.0 / 64.0);
            assert!((s - orig).abs() <= 2.0 / 64.0);
        }
    }

    #[test]
    fn campaign_instance_is_deterministic() {
        let cfg = CampaignConfig {
            n_instances: 2,
            dims: vec![1],
            max_atoms: 6,
            ..CampaignConfig::default()
        };
        let a = campaign_instance(&cfg, 1).unwrap();
        let b = campaign_instance(&cfg, 1).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = campaign_instance(&cfg, 0).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn mini_campaign_passes_and_emits_stable_csv() {
        let cfg = CampaignConfig {
            n_instances: 3,
            dims: vec![1],
            max_atoms: 6,
            checks: vec![
                CheckKind::Entropic,
                CheckKind::Conditional,
                CheckKind::BackwardGradient,
                CheckKind::Pointwise,
                CheckKind::Gradient,
                CheckKind::Hessian,
                CheckKind::ThirdDerivative,
            ],
            ..CampaignConfig::default()
        };
        let result = run_campaign(&cfg).unwrap();
        assert_eq!(result.n_failures, 0, "failing rows: {:?}",
            result.rows.iter().filter(|r| !r.pass).collect::<Vec<_>>());
        assert!(result.rows.len() >= cfg.n_instances * 7);
        let csv = result.to_csv();
        assert_eq!(csv.lines().count(), result.rows.len() + 1);
        let again = run_campaign(&cfg).unwrap().to_csv();
        assert_eq!(csv, again);
    }

    #[test]
    fn location_mode_campaign_passes_applicable_checks() {
        let cfg = CampaignConfig {
            n_instances: 2,
            dims: vec![1],
            max_atoms: 5,
            mode: PerturbMode::LocationPerturb,
            checks: CheckKind::all(),
            ..CampaignConfig::default()
        };
        let result = run_campaign(&cfg).unwrap();
        assert_eq!(result.n_failures, 0);
        // Shared-atom checks are skipped in location mode.
        assert!(result
            .rows
            .iter()
            .all(|r| r.check != "entropic" && r.check != "conditional"));
    }

    #[test]
    fn two_dimensional_heavy_checks_pass_on_small_instance() {
        // Exercises the tensorized Gauss-Hermite expectation path that the
        // default campaign keeps off for cost reasons.
        let cfg = CampaignConfig {
            n_instances: 1,
            dims: vec![2],
            max_atoms: 4,
            orders: QuadOrders {
                time_nodes: 10,
                space_nodes_1d: 32,
                space_nodes_2d: 16,
                weight_floor: 1e-13,
            },
            ..CampaignConfig::default()
        };
        let instance = campaign_instance(&cfg, 0).unwrap();
        assert_eq!(instance.dim(), 2);
        let r = instance.check_corrector_energy(0.5).unwrap();
        assert!(r.pass, "{r:?}");
        for r in instance.check_hessian_decomposition().unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn two_dimensional_instance_passes_core_checks() {
        let cfg = CampaignConfig {
            n_instances: 8,
            dims: vec![2],
            max_atoms: 5,
            checks: vec![
                CheckKind::Entropic,
                CheckKind::BackwardGradient,
                CheckKind::Gradient,
                CheckKind::Hessian,
            ],
            ..CampaignConfig::default()
        };
        let result = run_campaign(&cfg).unwrap();
        assert_eq!(result.n_failures, 0);
    }

    #[test]
    fn compact_sweep_constant_slope_in_window_and_envelope_dominates() {
        let table = scaling_sweep(&SweepConfig::compact_default()).unwrap();
        assert!(table.rows.iter().all(|r| r.grad_pass && r.hess_pass));
        // Raw envelope already dominates the measured ratio on this lane.
        assert!(
            table.grad_prefactor > 0.0 && table.grad_prefactor <= 1.0,
            "prefactor {}",
            table.grad_prefactor
        );
        assert!(table.hess_prefactor <= 1.0);
        assert!(
            table.constant_fit.in_window,
            "slope {} outside {:?}",
            table.constant_fit.slope,
            table.constant_fit.window
        );
        assert!(table.constant_fit.r_squared > 0.999);
        assert!(table.measured_slope < -1.5 && table.measured_r_squared > 0.95);
    }

    #[test]
    fn log_concave_sweep_constant_slope_in_window_and_envelope_dominates() {
        let table = scaling_sweep(&SweepConfig::log_concave_default()).unwrap();
        assert!(table.rows.iter().all(|r| r.grad_pass && r.hess_pass));
        assert!(table.grad_prefactor <= 1.0 && table.hess_prefactor <= 1.0);
        assert!(
            table.constant_fit.in_window,
            "slope {} outside {:?}",
            table.constant_fit.slope,
            table.constant_fit.window
        );
    }

    #[test]
    fn gaussian_sweep_rejects_out_of_regime_curvature() {
        let cfg = SweepConfig {
            scale_grid: vec![0.5],
            horizon_grid: vec![1.0, 4.0],
            ..SweepConfig::log_concave_default()
        };
        assert!(scaling_sweep(&cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 10, .. ProptestConfig::default() })]

        #[test]
        fn random_weight_instances_never_violate_core_bounds(seed in 0u64..1u64 << 32) {
            let cfg = CampaignConfig {
                n_instances: 1,
                seed,
                dims: vec![1],
                max_atoms: 6,
                ..CampaignConfig::default()
            };
            let instance = campaign_instance(&cfg, 0).unwrap();
            for report in [
                instance.check_entropic().unwrap(),
                instance.check_conditional().unwrap(),
                instance.check_backward_gradient().unwrap(),
                instance.check_gradient_stability().unwrap(),
                instance.check_hessian_stability().unwrap(),
            ] {
                prop_assert!(report.pass, "{} failed: {:?}", report.check, report);
            }
        }

        #[test]
        fn snapped_weights_stay_on_grid(
            raw in proptest::collection::vec(0.05f64..1.0, 3..8)
        ) {
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let snapped = snap_weights(&weights, 64).unwrap();
            let sum: f64 = snapped.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for &s in &snapped {
                prop_assert!(s >= 1.0 / 64.0 - 1e-12);
                prop_assert!((s * 64.0 - (s * 64.0).round()).abs() < 1e-9);
            }
        }
    }
}
