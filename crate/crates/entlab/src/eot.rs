//! Log-domain alternating solver for the discrete entropic transport
//! problem, plan assembly, and plan-level entropies.
//!
//! Conventions: the plan is `pi_ij = a_i b_j exp(log_f_i + log_g_j + logK_ij)`
//! with `logK_ij = -|x_i - y_j|^2 / (2T)`. A sweep fits the rho side first
//! (exact first marginal, wrong second marginal), then the mu side. The
//! residual is the L1 distance of the unfitted second marginal from mu,
//! evaluated after the rho fit. Converged duals are regauged so that
//! `sum_j b_j log_g_j = 0`.

use ndarray::Array2;
use serde::Serialize;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::measures::{sq_dist, DiscreteMeasure};

/// A discrete entropic transport instance.
#[derive(Debug, Clone)]
pub struct EotProblem {
    rho: DiscreteMeasure,
    mu: DiscreteMeasure,
    horizon: f64,
}

impl EotProblem {
    pub fn new(rho: DiscreteMeasure, mu: DiscreteMeasure, horizon: f64) -> Result<Self> {
        if rho.dim() != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                got: mu.dim(),
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter {
                name: "horizon",
                value: horizon,
                reason: "must be positive and finite",
            });
        }
        Ok(EotProblem { rho, mu, horizon })
    }

    pub fn rho(&self) -> &DiscreteMeasure {
        &self.rho
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `logK_ij = -|x_i - y_j|^2 / (2T)`.
    pub fn gibbs_log_kernel(&self) -> Array2<f64> {
        let inv = 1.0 / (2.0 * self.horizon);
        Array2::from_shape_fn((self.rho.num_atoms(), self.mu.num_atoms()), |(i, j)| {
            -sq_dist(self.rho.point(i), self.mu.point(j)) * inv
        })
    }
}

/// Converged dual variables in the mu-mean-zero gauge.
#[derive(Debug, Clone, Serialize)]
pub struct DualVariables {
    pub log_f: Vec<f64>,
    pub log_g: Vec<f64>,
    /// Convention tag recorded with every export.
    pub gauge: &'static str,
}

pub const GAUGE_TAG: &str = "mu_mean_zero";

impl DualVariables {
    /// `|sum_j b_j log_g_j|`, zero in the declared gauge.
    pub fn gauge_defect(&self, mu: &DiscreteMeasure) -> f64 {
        mu.weights()
            .iter()
            .zip(&self.log_g)
            .map(|(&b, &lg)| b * lg)
            .sum::<f64>()
            .abs()
    }
}

/// Options for [`sinkhorn_solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// L1 residual bound declaring convergence.
    pub tolerance: f64,
    /// Full-sweep budget.
    pub max_iterations: u64,
    /// Initial `log_g`; `None` means the zero vector.
    pub init_log_g: Option<Vec<f64>>,
    /// Record per-iteration dual and wrong-marginal snapshots.
    pub record_snapshots: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-10,
            max_iterations: 100_000,
            init_log_g: None,
            record_snapshots: false,
        }
    }
}

/// Per-iteration snapshot (regauged like the final duals).
#[derive(Debug, Clone, Serialize)]
pub struct DualSnapshot {
    pub iteration: u64,
    pub log_f: Vec<f64>,
    pub log_g: Vec<f64>,
    /// Second marginal of the plan after the rho fit of this iteration.
    pub wrong_marginal: Vec<f64>,
}

/// Iteration history. Residuals are recorded for every iteration; dual
/// snapshots only when requested.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SinkhornTrace {
    /// `residuals[n]` is the L1 residual after the rho fit of sweep n.
    pub residuals: Vec<f64>,
    /// Wall clock at each residual evaluation, nanoseconds from solve start.
    pub wall_ns: Vec<u64>,
    pub snapshots: Vec<DualSnapshot>,
    /// Completed full sweeps.
    pub iterations: u64,
    pub converged: bool,
}

/// Stabilized `ln(sum exp(x_k))`.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Rho-side fit: the `log_f` that gives the plan exact first marginal for
/// the current `log_g`.
pub fn fit_rho_side(log_k: &Array2<f64>, log_b: &[f64], log_g: &[f64]) -> Vec<f64> {
    let (n, m) = log_k.dim();
    let mut buf = vec![0.0; m];
    (0..n)
        .map(|i| {
            for j in 0..m {
                buf[j] = log_b[j] + log_g[j] + log_k[[i, j]];
            }
            -logsumexp(&buf)
        })
        .collect()
}

/// Mu-side fit: the `log_g` that gives the plan exact second marginal for
/// the current `log_f`.
pub fn fit_mu_side(log_k: &Array2<f64>, log_a: &[f64], log_f: &[f64]) -> Vec<f64> {
    let (n, m) = log_k.dim();
    let mut buf = vec![0.0; n];
    (0..m)
        .map(|j| {
            for i in 0..n {
                buf[i] = log_a[i] + log_f[i] + log_k[[i, j]];
            }
            -logsumexp(&buf)
        })
        .collect()
}

/// Second-marginal weights of the plan for the given duals.
pub fn second_marginal_weights(
    log_k: &Array2<f64>,
    log_a: &[f64],
    b: &[f64],
    log_f: &[f64],
    log_g: &[f64],
) -> Vec<f64> {
    let (n, m) = log_k.dim();
    let mut buf = vec![0.0; n];
    (0..m)
        .map(|j| {
            for i in 0..n {
                buf[i] = log_a[i] + log_f[i] + log_k[[i, j]];
            }
            b[j] * (log_g[j] + logsumexp(&buf)).exp()
        })
        .collect()
}

fn l1_gap(w: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

/// Shifts duals into the mu-mean-zero gauge.
fn regauged(log_f: &[f64], log_g: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c: f64 = b.iter().zip(log_g).map(|(&w, &lg)| w * lg).sum();
    (
        log_f.iter().map(|&v| v + c).collect(),
        log_g.iter().map(|&v| v - c).collect(),
    )
}

/// Alternating log-domain marginal fitting. Convergence is checked after
/// each rho fit, so the returned duals pair the fresh rho-side with the
/// mu-side of the previous sweep; an already-solved initialization costs
/// zero sweeps.
pub fn sinkhorn_solve(
    problem: &EotProblem,
    options: &SolveOptions,
) -> Result<(DualVariables, SinkhornTrace)> {
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tolerance",
            value: options.tolerance,
            reason: "must be positive",
        });
    }
    let log_k = problem.gibbs_log_kernel();
    let log_a = problem.rho().log_weights();
    let log_b = problem.mu().log_weights();
    let b = problem.mu().weights();
    let m = problem.mu().num_atoms();
    let mut log_g = match &options.init_log_g {
        Some(init) => {
            if init.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: init.len(),
                });
            }
            init.clone()
        }
        None => vec![0.0; m],
    };
    let start = Instant::now();
    let mut trace = SinkhornTrace::default();
    let mut sweeps: u64 = 0;
    loop {
        let log_f = fit_rho_side(&log_k, &log_b, &log_g);
        let wrong = second_marginal_weights(&log_k, &log_a, b, &log_f, &log_g);
        let residual = l1_gap(&wrong, b);
        if !residual.is_finite()
            || log_f.iter().any(|v| !v.is_finite())
            || log_g.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("sinkhorn duals".into()));
        }
        trace.residuals.push(residual);
        trace.wall_ns.push(start.elapsed().as_nanos() as u64);
        if options.record_snapshots {
            let (sf, sg) = regauged(&log_f, &log_g, b);
            trace.snapshots.push(DualSnapshot {
                iteration: sweeps,
                log_f: sf,
                log_g: sg,
                wrong_marginal: wrong,
            });
        }
        if residual <= options.tolerance {
            trace.iterations = sweeps;
            trace.converged = true;
            let (gf, gg) = regauged(&log_f, &log_g, b);
            return Ok((
                DualVariables {
                    log_f: gf,
                    log_g: gg,
                    gauge: GAUGE_TAG,
                },
                trace,
            ));
        }
        if sweeps >= options.max_iterations {
            trace.iterations = sweeps;
            return Err(Error::NotConverged {
                iterations: sweeps,
                residual,
                trace: Some(Box::new(trace)),
            });
        }
        log_g = fit_mu_side(&log_k, &log_a, &log_f);
        sweeps += 1;
    }
}

/// A coupling on the product of the two atom sets.
#[derive(Debug, Clone)]
pub struct Plan {
    weights: Array2<f64>,
    log_weights: Array2<f64>,
    rho_points: Array2<f64>,
    mu_points: Array2<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    horizon: f64,
}

/// Which marginal of a plan to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalSide {
    First,
    Second,
}

impl Plan {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn log_weights(&self) -> &Array2<f64> {
        &self.log_weights
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rho_points(&self) -> &Array2<f64> {
        &self.rho_points
    }

    pub fn mu_points(&self) -> &Array2<f64> {
        &self.mu_points
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn total_mass(&self) -> f64 {
        self.row_marginal.iter().sum()
    }

    /// True when both plans live on identical atom grids.
    pub fn same_grids(&self, other: &Plan) -> bool {
        self.rho_points == other.rho_points && self.mu_points == other.mu_points
    }

    /// `sum_ij pi_ij |x_i - y_j|^2 / 2`.
    pub fn transport_cost(&self) -> f64 {
        let (n, m) = self.weights.dim();
        let mut cost = 0.0;
        for i in 0..n {
            for j in 0..m {
                cost += self.weights[[i, j]]
                    * 0.5
                    * sq_dist(self.rho_points.row(i), self.mu_points.row(j));
            }
        }
        cost
    }

    /// Transport cost plus `T` times the relative entropy against the
    /// product of the given marginals: the quantity the entropic plan
    /// minimizes over couplings.
    pub fn entropic_objective(&self, a: &[f64], b: &[f64]) -> f64 {
        let (n, m) = self.weights.dim();
        let mut ent = 0.0;
        for i in 0..n {
            for j in 0..m {
                let p = self.weights[[i, j]];
                if p > 0.0 {
                    ent += p * (p.ln() - a[i].ln() - b[j].ln());
                }
            }
        }
        self.transport_cost() + self.horizon * ent
    }
}

/// Builds the plan `pi_ij = a_i b_j exp(log_f_i + log_g_j + logK_ij)`.
/// Valid both at the solution and mid-iteration (wrong-marginal plans).
pub fn assemble_plan(problem: &EotProblem, log_f: &[f64], log_g: &[f64]) -> Result<Plan> {
    let n = problem.rho().num_atoms();
    let m = problem.mu().num_atoms();
    if log_f.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: log_f.len(),
        });
    }
    if log_g.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: log_g.len(),
        });
    }
    if log_f.iter().chain(log_g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dual variables".into()));
    }
    let log_k = problem.gibbs_log_kernel();
    let log_a = problem.rho().log_weights();
    let log_b = problem.mu().log_weights();
    let log_weights = Array2::from_shape_fn((n, m), |(i, j)| {
        log_a[i] + log_f[i] + log_b[j] + log_g[j] + log_k[[i, j]]
    });
    let weights = log_weights.mapv(f64::exp);
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::NonFinite(
            "plan entry underflowed to zero".into(),
        ));
    }
    let row_marginal: Vec<f64> = weights.rows().into_iter().map(|r| r.sum()).collect();
    let col_marginal: Vec<f64> = weights.columns().into_iter().map(|c| c.sum()).collect();
    Ok(Plan {
        weights,
        log_weights,
        rho_points: problem.rho().points().clone(),
        mu_points: problem.mu().points().clone(),
        row_marginal,
        col_marginal,
        horizon: problem.horizon(),
    })
}

/// Extracts a marginal of the plan as a measure on the matching atoms,
/// normalized to unit mass.
pub fn wrong_marginal(plan: &Plan, side: MarginalSide) -> Result<DiscreteMeasure> {
    let total = plan.total_mass();
    let (points, raw) = match side {
        MarginalSide::First => (plan.rho_points.clone(), &plan.row_marginal),
        MarginalSide::Second => (plan.mu_points.clone(), &plan.col_marginal),
    };
    let weights = raw.iter().map(|&w| w / total).collect();
    DiscreteMeasure::new(points, weights)
}

/// `sum_ij p_ij ln(p_ij / q_ij)`, evaluated from log weights.
pub fn plan_relative_entropy(p: &Plan, q: &Plan) -> Result<f64> {
    if !p.same_grids(q) {
        return Err(Error::AtomMismatch(
            "plan entropies need identical atom grids".into(),
        ));
    }
    Ok(p.weights
        .iter()
        .zip(p.log_weights.iter())
        .zip(q.log_weights.iter())
        .map(|((&w, &lp), &lq)| w * (lp - lq))
        .sum())
}

/// `E over the second marginal of p of the conditional relative entropy
/// of p given the second coordinate against q given the second coordinate`:
/// `sum_j p_col_j sum_i p(i|j) ln(p(i|j) / q(i|j))`.
pub fn conditional_entropy_term(p: &Plan, q: &Plan) -> Result<f64> {
    if !p.same_grids(q) {
        return Err(Error::AtomMismatch(
            "plan entropies need identical atom grids".into(),
        ));
    }
    let (n, m) = p.weights.dim();
    let mut total = 0.0;
    for j in 0..m {
        let pj = p.col_marginal[j];
        let qj = q.col_marginal[j];
        for i in 0..n {
            let w = p.weights[[i, j]];
            total += w * (p.log_weights[[i, j]] - pj.ln() - q.log_weights[[i, j]] + qj.ln());
        }
    }
    Ok(total)
}

/// Sup-norm defect of the two log-domain marginal-fit equations.
pub fn schrodinger_residual(problem: &EotProblem, duals: &DualVariables) -> Result<f64> {
    let log_k = problem.gibbs_log_kernel();
    let log_a = problem.rho().log_weights();
    let log_b = problem.mu().log_weights();
    let f_fit = fit_rho_side(&log_k, &log_b, &duals.log_g);
    let g_fit = fit_mu_side(&log_k, &log_a, &duals.log_f);
    let defect = duals
        .log_f
        .iter()
        .zip(&f_fit)
        .chain(duals.log_g.iter().zip(&g_fit))
        .map(|(&have, &want)| (have - want).abs())
        .fold(0.0f64, f64::max);
    if !defect.is_finite() {
        return Err(Error::NonFinite("schrodinger residual".into()));
    }
    Ok(defect)
}
