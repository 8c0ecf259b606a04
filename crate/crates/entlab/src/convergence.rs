//! Per-iterate error tracking for the alternating marginal-fit solver:
//! gradient and Hessian gaps to the converged potential, plan entropies
//! against the solution, the empirical transport-entropy constant along
//! the trajectory, and verdicts comparing the measured contraction to
//! the predicted exponential factor.

use serde::Serialize;

use crate::emit;
use crate::eot::{self, DualVariables, EotProblem, MarginalSide, SolveOptions, GAUGE_TAG};
use crate::error::{Error, Result};
use crate::potentials::{self, InterpolatedPotential};
use crate::stats;

/// Iterates with plan entropy below this floor count as converged to
/// the reference and are excluded from rate fits; it sits ten orders
/// above the squared reference tolerance.
pub const KL_FIT_FLOOR: f64 = 1e-10;

/// Below this relative entropy the transport-entropy ratio is rounding
/// noise and the per-iterate constant is recorded as zero.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// Tolerance of the reference solve and of the tracked iterate pass.
pub const REFERENCE_TOL: f64 = 1e-12;

/// Margin added to the predicted contraction factor before comparing
/// the measured rate.
pub const CONTRACTION_MARGIN: f64 = 0.02;

/// One tracked sweep. Index `n` labels the plan with exact first
/// marginal built from the fresh rho-side fit and the mu-side of sweep
/// `n`, so its second marginal is the wrong one.
#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    pub n: u64,
    /// Squared weighted L2 gap of forward-potential gradients to the
    /// reference, over the first marginal's atoms at time zero.
    pub grad_err_sq: f64,
    /// Weighted nuclear-norm gap of forward-potential Hessians to the
    /// reference at time zero.
    pub hess_err_l1: f64,
    /// Relative entropy of the converged plan against this iterate's
    /// plan.
    pub plan_kl: f64,
    /// Quadratic Wasserstein distance from the target marginal to the
    /// iterate's second marginal.
    pub w2_wrong: f64,
    /// `W2^2 / (2 H)` at this iterate; zero when the entropy sits below
    /// [`ENTROPY_FLOOR`].
    pub tau_hat_n: f64,
}

/// Full iteration history plus run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRun {
    pub records: Vec<IterateRecord>,
    pub burn_in: u64,
    pub horizon: f64,
    /// Whether the tracked pass reached the reference tolerance within
    /// the sweep budget.
    pub converged: bool,
    /// Whether `plan_kl` never increased across post-burn-in iterates
    /// above the fit floor. Diagnostic only: the contraction bound is a
    /// geometric envelope, not a per-step monotonicity statement.
    pub kl_monotone_after_burn_in: bool,
}

impl ConvergenceRun {
    fn post_burn_in(&self) -> impl Iterator<Item = &IterateRecord> {
        self.records.iter().filter(move |r| r.n >= self.burn_in)
    }

    /// One row per tracked sweep; the predicted factor repeats on every
    /// row so downstream plots carry the bound alongside the series.
    pub fn to_csv(&self, predicted_factor: f64) -> String {
        let mut out = String::from(
            "n,grad_err_sq,hess_err_l1,plan_kl,w2_wrong,tau_hat_n,predicted_factor\n",
        );
        for r in &self.records {
            out.push_str(&emit::csv_line(&[
                r.n.to_string(),
                emit::g17(r.grad_err_sq),
                emit::g17(r.hess_err_l1),
                emit::g17(r.plan_kl),
                emit::g17(r.w2_wrong),
                emit::g17(r.tau_hat_n),
                emit::g17(predicted_factor),
            ]));
        }
        out
    }
}

/// Runs the solver to the reference tolerance first, then replays the
/// iteration with snapshots and measures every sweep against the
/// reference. A tracked pass that exhausts `n_max` sweeps still yields
/// its partial history with `converged = false`.
pub fn run(problem: &EotProblem, n_max: u64, burn_in: u64) -> Result<ConvergenceRun> {
    let reference_options = SolveOptions {
        tolerance: REFERENCE_TOL,
        ..SolveOptions::default()
    };
    let (ref_duals, _) = eot::sinkhorn_solve(problem, &reference_options)?;
    let ref_fwd = InterpolatedPotential::forward_from_duals(problem, &ref_duals)?;
    let ref_plan = eot::assemble_plan(problem, &ref_duals.log_f, &ref_duals.log_g)?;

    let tracked_options = SolveOptions {
        tolerance: REFERENCE_TOL,
        max_iterations: n_max,
        init_log_g: None,
        record_snapshots: true,
    };
    let (trace, converged) = match eot::sinkhorn_solve(problem, &tracked_options) {
        Ok((_, trace)) => (trace, true),
        Err(Error::NotConverged {
            trace: Some(trace), ..
        }) => (*trace, false),
        Err(e) => return Err(e),
    };

    let mut records = Vec::with_capacity(trace.snapshots.len());
    for snap in &trace.snapshots {
        let duals = DualVariables {
            log_f: snap.log_f.clone(),
            log_g: snap.log_g.clone(),
            gauge: GAUGE_TAG,
        };
        let fwd = InterpolatedPotential::forward_from_duals(problem, &duals)?;
        let grad_err = potentials::grad_diff_l2(problem.rho(), &fwd, &ref_fwd, 0.0)?;
        let hess_err_l1 = potentials::hess_diff_l1(problem.rho(), &fwd, &ref_fwd)?;
        let plan = eot::assemble_plan(problem, &snap.log_f, &snap.log_g)?;
        let plan_kl = eot::plan_relative_entropy(&ref_plan, &plan)?;
        let wrong = eot::wrong_marginal(&plan, MarginalSide::Second)?;
        let w2_wrong = problem.mu().wasserstein2(&wrong)?;
        let entropy = problem.mu().kl_divergence(&wrong)?;
        let tau_hat_n = if entropy > ENTROPY_FLOOR {
            w2_wrong * w2_wrong / (2.0 * entropy)
        } else {
            0.0
        };
        let record = IterateRecord {
            n: snap.iteration,
            grad_err_sq: grad_err * grad_err,
            hess_err_l1,
            plan_kl,
            w2_wrong,
            tau_hat_n,
        };
        if [
            record.grad_err_sq,
            record.hess_err_l1,
            record.plan_kl,
            record.w2_wrong,
            record.tau_hat_n,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("iterate record at sweep {}", snap.iteration)));
        }
        records.push(record);
    }

    // Monitored above the fit floor only: below it the entropy series is
    // rounding noise around zero.
    let kl_monotone_after_burn_in = records
        .windows(2)
        .filter(|w| w[0].n >= burn_in && w[0].plan_kl > KL_FIT_FLOOR && w[1].plan_kl > KL_FIT_FLOOR)
        .all(|w| w[1].plan_kl <= w[0].plan_kl + 1e-16);

    Ok(ConvergenceRun {
        records,
        burn_in,
        horizon: problem.horizon(),
        converged,
        kl_monotone_after_burn_in,
    })
}

/// Smallest constant making the transport-entropy inequality
/// `W2^2 <= 2 tau H` hold along the observed post-burn-in trajectory:
/// the maximum of the per-iterate ratios.
pub fn estimate_tau(run: &ConvergenceRun) -> Result<f64> {
    let ratios: Vec<f64> = run
        .post_burn_in()
        .filter(|r| r.tau_hat_n > 0.0)
        .map(|r| r.tau_hat_n)
        .collect();
    if ratios.is_empty() {
        return Err(Error::DegenerateRun(
            "transport-entropy ratio undefined: every iterate entropy sits at the noise floor"
                .into(),
        ));
    }
    if ratios.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: ratios.len(),
            context: "transport-entropy estimate".into(),
        });
    }
    Ok(ratios.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
}

/// Predicted one-sweep contraction factor `1 - T / (T + tau * lambda)`.
pub fn predicted_contraction(horizon: f64, tau: f64, lambda: f64) -> Result<f64> {
    for (name, value) in [("horizon", horizon), ("tau", tau), ("lambda", lambda)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter {
                name,
                value,
                reason: "must be positive and finite",
            });
        }
    }
    Ok(1.0 - horizon / (horizon + tau * lambda))
}

/// Outcome of the three rate checks on one run.
#[derive(Debug, Clone, Serialize)]
pub struct RateVerdict {
    /// Exponential of the least-squares slope of `ln plan_kl` vs `n`.
    pub measured_contraction: f64,
    pub contraction_r_squared: f64,
    pub predicted_factor: f64,
    /// Measured contraction at most the predicted factor plus margin.
    pub contraction_within_bound: bool,
    /// Fit quality of `grad_err_sq <= C0 * c^n` with the slope pinned to
    /// the measured contraction and the intercept least squares.
    pub grad_fit_r_squared: f64,
    pub grad_envelope_ok: bool,
    /// Coefficients of the two-term envelope `C1 c^{n/2} + C2 c^n`.
    pub hess_coeff_sqrt: f64,
    pub hess_coeff_linear: f64,
    pub hess_fit_r_squared: f64,
    pub hess_envelope_ok: bool,
    /// Iterates above the entropy fit floor that entered the fits.
    pub fitted_iterates: usize,
}

impl RateVerdict {
    pub fn all_ok(&self) -> bool {
        self.contraction_within_bound && self.grad_envelope_ok && self.hess_envelope_ok
    }
}

fn log_r_squared(ys: &[f64], fitted: &[f64]) -> f64 {
    let logs: Vec<f64> = ys.iter().map(|&y| y.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let ss_tot: f64 = logs.iter().map(|l| (l - mean) * (l - mean)).sum();
    let ss_res: f64 = logs
        .iter()
        .zip(fitted)
        .map(|(&l, &f)| {
            let r = l - f.ln();
            r * r
        })
        .sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    }
}

/// Fits the measured contraction from the plan-entropy series and checks
/// it against the predicted factor, then checks the gradient and Hessian
/// series against the induced geometric envelopes.
pub fn fit_and_compare(run: &ConvergenceRun, tau: f64, lambda: f64) -> Result<RateVerdict> {
    let fitted: Vec<&IterateRecord> = run
        .post_burn_in()
        .filter(|r| r.plan_kl > KL_FIT_FLOOR)
        .collect();
    if fitted.len() < 8 {
        return Err(Error::InsufficientData {
            needed: 8,
            have: fitted.len(),
            context: "rate fit".into(),
        });
    }
    let ns: Vec<f64> = fitted.iter().map(|r| r.n as f64).collect();
    let log_kl: Vec<f64> = fitted.iter().map(|r| r.plan_kl.ln()).collect();
    let kl_fit = stats::linear_fit(&ns, &log_kl)?;
    let measured = kl_fit.slope.exp();
    let predicted = predicted_contraction(run.horizon, tau, lambda)?;

    // Gradient envelope: slope pinned to the measured contraction,
    // intercept by least squares in the log domain.
    let log_c = kl_fit.slope;
    let grad_points: Vec<(f64, f64)> = fitted
        .iter()
        .filter(|r| r.grad_err_sq > 0.0)
        .map(|r| (r.n as f64, r.grad_err_sq))
        .collect();
    let grad_r_squared = if grad_points.len() >= 2 {
        let intercept = grad_points
            .iter()
            .map(|&(n, g)| g.ln() - log_c * n)
            .sum::<f64>()
            / grad_points.len() as f64;
        let ys: Vec<f64> = grad_points.iter().map(|&(_, g)| g).collect();
        let hat: Vec<f64> = grad_points
            .iter()
            .map(|&(n, _)| (intercept + log_c * n).exp())
            .collect();
        log_r_squared(&ys, &hat)
    } else {
        0.0
    };

    // Hessian envelope: relative least squares over the two-term basis
    // {c^{n/2}, c^n}; a negative coefficient collapses to the remaining
    // single-term fit.
    let hess_points: Vec<(f64, f64)> = fitted
        .iter()
        .filter(|r| r.hess_err_l1 > 0.0)
        .map(|r| (r.n as f64, r.hess_err_l1))
        .collect();
    let (c1, c2, hess_r_squared) = if hess_points.len() >= 2 {
        let u: Vec<f64> = hess_points
            .iter()
            .map(|&(n, y)| (0.5 * log_c * n).exp() / y)
            .collect();
        let v: Vec<f64> = hess_points
            .iter()
            .map(|&(n, y)| (log_c * n).exp() / y)
            .collect();
        let suu: f64 = u.iter().map(|x| x * x).sum();
        let svv: f64 = v.iter().map(|x| x * x).sum();
        let suv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let su: f64 = u.iter().sum();
        let sv: f64 = v.iter().sum();
        let det = suu * svv - suv * suv;
        let (mut c1, mut c2) = if det.abs() > 1e-12 * suu.max(svv).max(1.0) {
            ((su * svv - sv * suv) / det, (sv * suu - su * suv) / det)
        } else {
            (su / suu, 0.0)
        };
        if c1 < 0.0 {
            c1 = 0.0;
            c2 = sv / svv;
        } else if c2 < 0.0 {
            c2 = 0.0;
            c1 = su / suu;
        }
        let ys: Vec<f64> = hess_points.iter().map(|&(_, y)| y).collect();
        let hat: Vec<f64> = hess_points
            .iter()
            .map(|&(n, _)| c1 * (0.5 * log_c * n).exp() + c2 * (log_c * n).exp())
            .collect();
        if hat.iter().any(|&h| !(h > 0.0)) {
            (c1, c2, 0.0)
        } else {
            (c1, c2, log_r_squared(&ys, &hat))
        }
    } else {
        (0.0, 0.0, 0.0)
    };

    Ok(RateVerdict {
        measured_contraction: measured,
        contraction_r_squared: kl_fit.r_squared,
        predicted_factor: predicted,
        contraction_within_bound: measured <= predicted + CONTRACTION_MARGIN,
        grad_fit_r_squared: grad_r_squared,
        grad_envelope_ok: grad_r_squared >= 0.99,
        hess_coeff_sqrt: c1,
        hess_coeff_linear: c2,
        hess_fit_r_squared: hess_r_squared,
        hess_envelope_ok: hess_r_squared >= 0.98,
        fitted_iterates: fitted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteMeasure;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn problem_1d(xs: &[f64], a: Vec<f64>, ys: &[f64], b: Vec<f64>, t: f64) -> EotProblem {
        let rho = DiscreteMeasure::from_points_1d(xs, a).unwrap();
        let mu = DiscreteMeasure::from_points_1d(ys, b).unwrap();
        EotProblem::new(rho, mu, t).unwrap()
    }

    #[test]
    fn two_dirac_instance_is_exact_from_the_first_record() {
        let problem = problem_1d(&[0.0], vec![1.0], &[1.0], vec![1.0], 1.0);
        let run = run(&problem, 50, 0).unwrap();
        assert!(run.converged);
        assert_eq!(run.records.len(), 1);
        let r = &run.records[0];
        assert!(r.grad_err_sq <= 1e-28);
        assert!(r.hess_err_l1 <= 1e-14);
        assert!(r.plan_kl.abs() <= 1e-16);
        assert!(r.w2_wrong <= 1e-12);
    }

    /// Replays the alternating fits with plain loops and compares the
    /// plan entropy and wrong-marginal distance per sweep.
    #[test]
    fn records_match_fixed_point_replay() {
        let (xs, a) = ([-1.0, 1.0], [0.5, 0.5]);
        let (ys, b) = ([-1.0, 1.0], [0.3, 0.7]);
        let t = 0.5;
        let problem = problem_1d(&xs, a.to_vec(), &ys, b.to_vec(), t);
        let run = run(&problem, 60, 0).unwrap();
        assert!(run.converged);

        let k = |i: usize, j: usize| (-(xs[i] - ys[j]) * (xs[i] - ys[j]) / (2.0 * t)).exp();
        let plan_from = |lg: &[f64; 2]| {
            let mut f = [0.0; 2];
            for i in 0..2 {
                f[i] = 1.0 / (b[0] * lg[0].exp() * k(i, 0) + b[1] * lg[1].exp() * k(i, 1));
            }
            let mut p = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    p[i][j] = a[i] * f[i] * b[j] * lg[j].exp() * k(i, j);
                }
            }
            p
        };
        let advance = |lg: &[f64; 2]| {
            let p = plan_from(lg);
            let mut next = [0.0; 2];
            for j in 0..2 {
                let col: f64 = p[0][j] + p[1][j];
                next[j] = lg[j] + (b[j] / col).ln();
            }
            next
        };
        // The reference replay mirrors the run's stopping rule: first
        // plan whose second-marginal L1 gap is at or below the tolerance.
        let mut lg_ref = [0.0; 2];
        let p_ref = loop {
            let p = plan_from(&lg_ref);
            let gap = (p[0][0] + p[1][0] - b[0]).abs() + (p[0][1] + p[1][1] - b[1]).abs();
            if gap <= REFERENCE_TOL {
                break p;
            }
            lg_ref = advance(&lg_ref);
        };

        let mut lg = [0.0; 2];
        for record in &run.records {
            let p = plan_from(&lg);
            let mut kl = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    kl += p_ref[i][j] * (p_ref[i][j] / p[i][j]).ln();
                }
            }
            assert_abs_diff_eq!(record.plan_kl, kl, epsilon = 1e-12);
            // Both marginals sit on the atoms {-1, 1}, so the quantile
            // coupling moves the weight surplus across distance 2. The
            // squared scale is linear in the weights, so rounding stays
            // below the tolerance at every iterate.
            let col0: f64 = p[0][0] + p[1][0];
            let w2_sq = (col0 - b[0]).abs() * 4.0;
            assert_abs_diff_eq!(record.w2_wrong * record.w2_wrong, w2_sq, epsilon = 1e-12);
            lg = advance(&lg);
        }
    }

    #[test]
    fn final_record_of_a_converged_run_sits_at_the_numerical_floor() {
        let problem = problem_1d(
            &[-0.9, -0.2, 0.4, 1.1],
            vec![0.3, 0.25, 0.25, 0.2],
            &[-1.0, 0.1, 0.8],
            vec![0.4, 0.35, 0.25],
            0.7,
        );
        let run = run(&problem, 10_000, 2).unwrap();
        assert!(run.converged);
        let last = run.records.last().unwrap();
        assert!(last.plan_kl.abs() <= 1e-16, "plan_kl {}", last.plan_kl);
        assert!(last.grad_err_sq <= 1e-16, "grad {}", last.grad_err_sq);
        assert!(last.hess_err_l1 <= 1e-9, "hess {}", last.hess_err_l1);
        assert!(last.w2_wrong <= 1e-5, "w2 {}", last.w2_wrong);
    }

    #[test]
    fn tau_estimate_matches_direct_ratio_scan() {
        let problem = problem_1d(
            &[-0.8, 0.0, 0.9],
            vec![0.4, 0.3, 0.3],
            &[-0.5, 0.2, 0.7],
            vec![0.25, 0.45, 0.3],
            0.4,
        );
        let run = run(&problem, 500, 2).unwrap();
        let tau = estimate_tau(&run).unwrap();
        let mut best = f64::NEG_INFINITY;
        for r in run.records.iter().filter(|r| r.n >= 2 && r.tau_hat_n > 0.0) {
            best = best.max(r.tau_hat_n);
            // Definitional transport-entropy inequality at the estimate.
            assert!(r.tau_hat_n <= tau + 1e-15);
        }
        assert_eq!(tau, best);
    }

    #[test]
    fn tau_estimate_degenerates_on_identical_marginals() {
        let problem = problem_1d(
            &[-0.5, 0.5],
            vec![0.5, 0.5],
            &[-0.5, 0.5],
            vec![0.5, 0.5],
            1.0,
        );
        let run = run(&problem, 50, 0).unwrap();
        match estimate_tau(&run) {
            Err(Error::DegenerateRun(_)) => {}
            other => panic!("expected DegenerateRun, got {other:?}"),
        }
    }

    #[test]
    fn tau_estimate_survives_subsampling_that_keeps_the_argmax() {
        let problem = problem_1d(
            &[-0.8, 0.0, 0.9],
            vec![0.4, 0.3, 0.3],
            &[-0.5, 0.2, 0.7],
            vec![0.25, 0.45, 0.3],
            0.4,
        );
        let full = run(&problem, 500, 2).unwrap();
        let tau = estimate_tau(&full).unwrap();
        let argmax = full
            .records
            .iter()
            .filter(|r| r.n >= full.burn_in)
            .max_by(|a, b| a.tau_hat_n.total_cmp(&b.tau_hat_n))
            .unwrap()
            .n;
        let mut thinned = full.clone();
        thinned.records.retain(|r| r.n == argmax || r.n % 2 == 0);
        assert_eq!(estimate_tau(&thinned).unwrap(), tau);
    }

    #[test]
    fn predicted_contraction_closed_form() {
        assert_abs_diff_eq!(predicted_contraction(1.0, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            predicted_contraction(1.0, 2.0, 4.0).unwrap(),
            8.0 / 9.0,
            epsilon = 1e-15
        );
        assert!(predicted_contraction(1e12, 1.0, 1.0).unwrap() < 1e-11);
        assert!(predicted_contraction(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn synthetic_geometric_series_recovers_its_ratio() {
        let ratio: f64 = 0.8;
        let records: Vec<IterateRecord> = (0..21)
            .map(|n| {
                let c = ratio.powi(n as i32);
                IterateRecord {
                    n,
                    grad_err_sq: 0.5 * c,
                    hess_err_l1: 0.3 * c.sqrt() + 0.1 * c,
                    plan_kl: 1e-2 * c,
                    w2_wrong: c.sqrt(),
                    tau_hat_n: 1.0,
                }
            })
            .collect();
        let run = ConvergenceRun {
            records,
            burn_in: 2,
            horizon: 1.0,
            converged: true,
            kl_monotone_after_burn_in: true,
        };
        let verdict = fit_and_compare(&run, 1.0, 9.0).unwrap();
        assert_abs_diff_eq!(verdict.measured_contraction, ratio, epsilon = 1e-6);
        assert!(verdict.contraction_r_squared > 0.999999);
        assert!(verdict.contraction_within_bound);
        assert!(verdict.grad_envelope_ok, "grad r2 {}", verdict.grad_fit_r_squared);
        assert!(verdict.hess_envelope_ok, "hess r2 {}", verdict.hess_fit_r_squared);
        assert!(verdict.all_ok());
        assert_abs_diff_eq!(verdict.hess_coeff_sqrt, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(verdict.hess_coeff_linear, 0.1, epsilon = 1e-6);
    }

    #[test]
    fn fit_requires_enough_live_iterates() {
        let records: Vec<IterateRecord> = (0..6)
            .map(|n| IterateRecord {
                n,
                grad_err_sq: 1e-3,
                hess_err_l1: 1e-3,
                plan_kl: 1e-3,
                w2_wrong: 1e-2,
                tau_hat_n: 1.0,
            })
            .collect();
        let run = ConvergenceRun {
            records,
            burn_in: 2,
            horizon: 1.0,
            converged: false,
            kl_monotone_after_burn_in: true,
        };
        match fit_and_compare(&run, 1.0, 1.0) {
            Err(Error::InsufficientData { needed: 8, .. }) => {}
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }

    fn compact_eight_atom_problem() -> EotProblem {
        let xs = [-1.0, -0.7, -0.4, -0.1, 0.2, 0.5, 0.8, 1.0];
        let a = vec![0.1, 0.15, 0.12, 0.13, 0.14, 0.11, 0.13, 0.12];
        let ys = [-0.95, -0.6, -0.3, 0.0, 0.3, 0.55, 0.85, 1.05];
        let b = vec![0.16, 0.1, 0.14, 0.1, 0.12, 0.15, 0.1, 0.13];
        problem_1d(&xs, a, &ys, b, 0.1)
    }

    #[test]
    fn compact_instance_rate_verdicts_pass() {
        let problem = compact_eight_atom_problem();
        let run = run(&problem, 2000, 2).unwrap();
        assert!(run.converged);
        assert!(run.kl_monotone_after_burn_in);
        let tau = estimate_tau(&run).unwrap();
        let radius = problem.mu().support_radius();
        let lambda = radius * radius / problem.horizon();
        let verdict = fit_and_compare(&run, tau, lambda).unwrap();
        assert!(verdict.fitted_iterates >= 8);
        assert!(
            verdict.contraction_within_bound,
            "measured {} predicted {}",
            verdict.measured_contraction, verdict.predicted_factor
        );
        assert!(verdict.grad_envelope_ok, "grad r2 {}", verdict.grad_fit_r_squared);
        assert!(verdict.hess_envelope_ok, "hess r2 {}", verdict.hess_fit_r_squared);
        assert!(verdict.all_ok());
    }

    #[test]
    fn halved_semiconcavity_negative_control_still_fits() {
        let problem = compact_eight_atom_problem();
        let run = run(&problem, 2000, 2).unwrap();
        let tau = estimate_tau(&run).unwrap();
        let radius = problem.mu().support_radius();
        let lambda = 0.5 * radius * radius / problem.horizon();
        // The contraction verdict may fail with the weakened constant;
        // the envelope fits do not depend on it.
        let verdict = fit_and_compare(&run, tau, lambda).unwrap();
        assert!(verdict.grad_envelope_ok);
        assert!(verdict.hess_envelope_ok);
    }

    #[test]
    fn gradient_error_matches_stability_lhs_for_the_wrong_marginal() {
        use crate::stability::{CurvatureInput, QuadOrders, StabilityInstance};

        let problem = problem_1d(
            &[-0.7, 0.0, 0.6],
            vec![0.35, 0.3, 0.35],
            &[-0.4, 0.3, 0.8],
            vec![0.3, 0.4, 0.3],
            0.5,
        );
        let target_sweep = 3;
        let tracked = run(&problem, 400, 2).unwrap();
        let record = tracked
            .records
            .iter()
            .find(|r| r.n == target_sweep)
            .expect("sweep tracked");

        // Rebuild the wrong marginal of that sweep by replaying the
        // alternating fits, then compare against the stability check on
        // the pair (target, wrong marginal).
        let log_k = problem.gibbs_log_kernel();
        let log_a = problem.rho().log_weights();
        let log_b = problem.mu().log_weights();
        let mut log_g = vec![0.0; problem.mu().num_atoms()];
        let mut log_f = eot::fit_rho_side(&log_k, &log_b, &log_g);
        for _ in 0..target_sweep {
            log_g = eot::fit_mu_side(&log_k, &log_a, &log_f);
            log_f = eot::fit_rho_side(&log_k, &log_b, &log_g);
        }
        let plan = eot::assemble_plan(&problem, &log_f, &log_g).unwrap();
        let wrong = eot::wrong_marginal(&plan, MarginalSide::Second).unwrap();

        let curvature = CurvatureInput::compact_from_supports(
            problem.rho(),
            problem.mu(),
            &wrong,
            problem.horizon(),
        )
        .unwrap();
        let instance = StabilityInstance::solve_with(
            problem.rho().clone(),
            problem.mu().clone(),
            wrong,
            problem.horizon(),
            curvature,
            QuadOrders::default(),
            1e-14,
        )
        .unwrap();
        let report = instance.check_gradient_stability().unwrap();
        assert_abs_diff_eq!(report.lhs, record.grad_err_sq, epsilon = 1e-12);
    }

    #[test]
    fn csv_has_expected_header_and_row_count() {
        let problem = problem_1d(
            &[-0.5, 0.5],
            vec![0.5, 0.5],
            &[-0.3, 0.6],
            vec![0.4, 0.6],
            0.8,
        );
        let run = run(&problem, 200, 2).unwrap();
        let csv = run.to_csv(0.5);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,grad_err_sq,hess_err_l1,plan_kl,w2_wrong,tau_hat_n,predicted_factor"
        );
        assert_eq!(lines.count(), run.records.len());
        assert_eq!(csv, run.to_csv(0.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 10, ..ProptestConfig::default() })]
        #[test]
        fn random_runs_stay_finite_and_satisfy_the_estimated_inequality(
            seed in 0u64..1000,
            t in 0.3f64..1.5,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..6usize);
            let m = rng.random_range(2..6usize);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| {
                let xs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                (xs, raw.into_iter().map(|w| w / total).collect::<Vec<f64>>())
            };
            let (xs, a) = draw(&mut rng, n);
            let (ys, b) = draw(&mut rng, m);
            let problem = problem_1d(&xs, a, &ys, b, t);
            let tracked = run(&problem, 300, 2).unwrap();
            for r in &tracked.records {
                prop_assert!(r.grad_err_sq.is_finite() && r.grad_err_sq >= 0.0);
                prop_assert!(r.hess_err_l1.is_finite() && r.hess_err_l1 >= 0.0);
                prop_assert!(r.plan_kl.is_finite());
                prop_assert!(r.w2_wrong.is_finite() && r.w2_wrong >= 0.0);
                prop_assert!(r.tau_hat_n.is_finite() && r.tau_hat_n >= 0.0);
            }
            if let Ok(tau) = estimate_tau(&tracked) {
                for r in tracked.records.iter().filter(|r| r.n >= 2 && r.tau_hat_n > 0.0) {
                    prop_assert!(r.tau_hat_n <= tau + 1e-15);
                }
            }
        }
    }
}
