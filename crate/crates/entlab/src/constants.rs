//! Curvature families, lambda schedules, and the explicit constants that
//! enter the stability and regularity bounds.
//!
//! A family describes the assumed shape of one marginal: either compactly
//! supported in a ball of radius `R`, or `alpha`-log-concave with
//! `0 < alpha < 1/T`.  Each family induces a semiconcavity level `Lambda`
//! for the associated potential, a curvature lower-bound schedule
//! `lambda(s)` along the interpolation, and from those everything else:
//! the exponential integral `I(l, u)`, the gradient-energy constant
//! `C_phi`, the time-localization constants `C_delta`, the Hessian
//! envelope `gamma`, the negative-curvature level `lambda_bar`, the
//! sup-integral entering third-derivative control, and the assembled
//! prefactors `K`, `A`, and `C_rho_nu`.
//!
//! Every closed form carries a quadrature cross-check, and every
//! up-to-constant envelope is reported alongside the exact prefactor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Shape assumption for one marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    /// Supported in the centered ball of radius `radius`.
    Compact { radius: f64 },
    /// Log-concave with curvature parameter `alpha`, `0 < alpha < 1/T`.
    LogConcave { alpha: f64 },
}

/// A family together with the transport horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub horizon: f64,
}

impl FamilySpec {
    pub fn compact(radius: f64, horizon: f64) -> Result<Self> {
        let spec = FamilySpec {
            kind: FamilyKind::Compact { radius },
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn log_concave(alpha: f64, horizon: f64) -> Result<Self> {
        let spec = FamilySpec {
            kind: FamilyKind::LogConcave { alpha },
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                value: self.horizon,
                reason: "must be finite and positive",
            });
        }
        match self.kind {
            FamilyKind::Compact { radius } => {
                if !radius.is_finite() || radius <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "radius",
                        value: radius,
                        reason: "must be finite and positive",
                    });
                }
            }
            FamilyKind::LogConcave { alpha } => {
                if !alpha.is_finite() || alpha <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        value: alpha,
                        reason: "must be finite and positive",
                    });
                }
                if alpha * self.horizon >= 1.0 {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        value: alpha,
                        reason: "log-concave family requires alpha * horizon < 1",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when the long-horizon asymptotic regime holds.  For the compact
    /// family this means `R^2 >= T`; the log-concave family has no extra
    /// regime condition beyond `alpha T < 1`.
    pub fn regime_ok(&self) -> bool {
        match self.kind {
            FamilyKind::Compact { radius } => radius * radius >= self.horizon,
            FamilyKind::LogConcave { .. } => true,
        }
    }

    /// Semiconcavity level `Lambda` of the induced potential:
    /// `R^2/T` (compact) or `1/(alpha T)` (log-concave).
    pub fn semiconcavity(&self) -> f64 {
        match self.kind {
            FamilyKind::Compact { radius } => radius * radius / self.horizon,
            FamilyKind::LogConcave { alpha } => 1.0 / (alpha * self.horizon),
        }
    }

    /// Alternative log-concave semiconcavity value `1/(1 + alpha T)` from the
    /// general backpropagation route.  Reported for reference; every check
    /// uses [`FamilySpec::semiconcavity`].
    pub fn semiconcavity_alternative(&self) -> Option<f64> {
        match self.kind {
            FamilyKind::Compact { .. } => None,
            FamilyKind::LogConcave { alpha } => Some(1.0 / (1.0 + alpha * self.horizon)),
        }
    }

    /// Gradient-energy constant `C_phi`: `2R^2/T` (compact) or
    /// `1/(alpha T)` (log-concave).  Equals `T / I(0, T)` for the family
    /// schedule; `tests` pin the agreement.
    pub fn c_phi(&self) -> f64 {
        match self.kind {
            FamilyKind::Compact { radius } => 2.0 * radius * radius / self.horizon,
            FamilyKind::LogConcave { alpha } => 1.0 / (alpha * self.horizon),
        }
    }

    pub fn schedule(&self) -> LambdaSchedule {
        LambdaSchedule {
            kind: self.kind,
            horizon: self.horizon,
        }
    }
}

/// Curvature lower-bound schedule `s -> lambda(s)` for `s` in `[0, T)`.
#[derive(Debug, Clone, Copy)]
pub struct LambdaSchedule {
    kind: FamilyKind,
    horizon: f64,
}

impl LambdaSchedule {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `lambda(s)`: `(T-s)^{-1} - R^2 (T-s)^{-2}` for the compact family,
    /// `1/(lambda_0^{-1} - s)` with `lambda_0 = (alpha - 1/T)/(alpha T)`
    /// for the log-concave family.
    pub fn lambda(&self, s: f64) -> f64 {
        let t = self.horizon;
        match self.kind {
            FamilyKind::Compact { radius } => {
                let tau = t - s;
                1.0 / tau - radius * radius / (tau * tau)
            }
            FamilyKind::LogConcave { alpha } => {
                let lambda0 = (alpha - 1.0 / t) / (alpha * t);
                1.0 / (1.0 / lambda0 - s)
            }
        }
    }

    fn check_interval(&self, l: f64, u: f64) -> Result<()> {
        if !(l.is_finite() && u.is_finite()) || l < 0.0 || u < l || u > self.horizon {
            return Err(Error::InvalidParameter {
                name: "interval",
                value: u,
                reason: "need 0 <= l <= u <= horizon",
            });
        }
        Ok(())
    }

    /// `I(l, u) = int_l^u exp(int_l^s 2 lambda(t) dt) ds`, in closed form.
    ///
    /// Compact: `((T-l)^2 / 2R^2) (1 - exp(2R^2/(T-l) - 2R^2/(T-u)))`.
    /// Log-concave: `(l - c)(u - l)/(u - c)` with `c = 1/lambda_0 < 0`.
    /// `u = T` is allowed; both forms stay finite there.
    pub fn i_integral(&self, l: f64, u: f64) -> Result<f64> {
        self.check_interval(l, u)?;
        if u == l {
            return Ok(0.0);
        }
        let t = self.horizon;
        let value = match self.kind {
            FamilyKind::Compact { radius } => {
                let two_r2 = 2.0 * radius * radius;
                // Difference-quotient form avoids the cancellation of
                // 2R^2/(T-l) - 2R^2/(T-u) for u near l.
                let exponent = if u >= t {
                    f64::NEG_INFINITY
                } else {
                    -two_r2 * (u - l) / ((t - l) * (t - u))
                };
                // 1 - e^x via expm1 keeps precision when u is close to l.
                let factor = -f64::exp_m1(exponent);
                (t - l) * (t - l) / two_r2 * factor
            }
            FamilyKind::LogConcave { alpha } => {
                let c = alpha * t * t / (alpha * t - 1.0);
                (l - c) * (u - l) / (u - c)
            }
        };
        Ok(value)
    }

    /// Same integral by adaptive quadrature of `exp(int_l^s 2 lambda)`,
    /// with the inner integral in elementary antiderivative form.  Serves
    /// as the independent route for [`LambdaSchedule::i_integral`].
    pub fn i_integral_quadrature(&self, l: f64, u: f64) -> Result<f64> {
        self.check_interval(l, u)?;
        if u == l {
            return Ok(0.0);
        }
        let t = self.horizon;
        let integrand: Box<dyn Fn(f64) -> f64> = match self.kind {
            FamilyKind::Compact { radius } => {
                let two_r2 = 2.0 * radius * radius;
                Box::new(move |s: f64| {
                    if s >= t {
                        return 0.0;
                    }
                    let log_part = 2.0 * f64::ln_1p((s - l) / (t - s));
                    let exp_part = two_r2 * (s - l) / ((t - l) * (t - s));
                    (log_part - exp_part).exp()
                })
            }
            FamilyKind::LogConcave { alpha } => {
                let c = alpha * t * t / (alpha * t - 1.0);
                Box::new(move |s: f64| {
                    let ratio = (l - c) / (s - c);
                    ratio * ratio
                })
            }
        };
        let (value, _err) = quad::integrate_adaptive(&integrand, l, u, 1e-13, 40)?;
        Ok(value)
    }
}

/// Localization exponents `(delta, delta')` chosen from the semiconcavity
/// level of the second-marginal potential.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeltaChoice {
    pub delta: f64,
    pub delta_prime: f64,
    /// `delta / (1 - delta) = 1 / Lambda_psi`.
    pub ratio: f64,
    /// `delta' / (1 - delta') = 1 / (1 + 2 Lambda_psi)`.
    pub ratio_prime: f64,
}

/// `delta = 1/(1 + Lambda_psi)`, `delta' = delta/2`.
pub fn choose_delta(lambda_psi: f64) -> Result<DeltaChoice> {
    if !lambda_psi.is_finite() || lambda_psi <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda_psi",
            value: lambda_psi,
            reason: "semiconcavity level must be finite and positive",
        });
    }
    let delta = 1.0 / (1.0 + lambda_psi);
    let delta_prime = 0.5 * delta;
    Ok(DeltaChoice {
        delta,
        delta_prime,
        ratio: delta / (1.0 - delta),
        ratio_prime: delta_prime / (1.0 - delta_prime),
    })
}

/// Time-localization constant `C_{delta_from, delta_to} = T / I(delta_from T, delta_to T)`.
pub fn c_delta(schedule: &LambdaSchedule, delta_from: f64, delta_to: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta_from) || !(delta_from..1.0).contains(&delta_to) || delta_to <= delta_from {
        return Err(Error::InvalidParameter {
            name: "delta_to",
            value: delta_to,
            reason: "need 0 <= delta_from < delta_to < 1",
        });
    }
    let t = schedule.horizon();
    let i = schedule.i_integral(delta_from * t, delta_to * t)?;
    if i <= 0.0 {
        return Err(Error::DegenerateRun(format!(
            "nonpositive exponential integral {i} in localization constant"
        )));
    }
    Ok(t / i)
}

/// Closed-form envelope for `C_{0, delta}` at the standard delta choice:
/// `(2/(1-e^{-1})) R^2/T` (compact) or the exact `2/(alpha T)` (log-concave).
pub fn c_delta_envelope(family: &FamilySpec) -> f64 {
    let t = family.horizon();
    match family.kind {
        FamilyKind::Compact { radius } => {
            2.0 / (1.0 - (-1.0f64).exp()) * radius * radius / t
        }
        FamilyKind::LogConcave { alpha } => 2.0 / (alpha * t),
    }
}

/// Closed-form envelope for `C_{delta', delta}` at the standard choice:
/// `(2/(1-e^{-1})) (1 + R^2/T)^2` (compact) or the exact
/// `(8/(alpha T)) (1 + alpha T)/(3 + alpha T)` (log-concave).
pub fn c_delta_prime_envelope(family: &FamilySpec) -> f64 {
    let t = family.horizon();
    match family.kind {
        FamilyKind::Compact { radius } => {
            let lam = radius * radius / t;
            2.0 / (1.0 - (-1.0f64).exp()) * (1.0 + lam) * (1.0 + lam)
        }
        FamilyKind::LogConcave { alpha } => {
            let beta = alpha * t;
            8.0 / beta * (1.0 + beta) / (3.0 + beta)
        }
    }
}

/// Hessian sup-norm bound `sqrt(d) (1 + Lambda_psi) / (T Lambda_psi)`.
pub fn gamma_bound(dim: usize, horizon: f64, lambda_psi: f64) -> f64 {
    (dim as f64).sqrt() * (1.0 + lambda_psi) / (horizon * lambda_psi)
}

/// Family-specific simplification of the Hessian bound:
/// `2 sqrt(d)/T` (compact, valid once `R^2 >= T`) or the exact
/// `sqrt(d) (alpha + 1/T)` (log-concave).
pub fn gamma_family(family: &FamilySpec, dim: usize) -> f64 {
    let sd = (dim as f64).sqrt();
    let t = family.horizon();
    match family.kind {
        FamilyKind::Compact { .. } => 2.0 * sd / t,
        FamilyKind::LogConcave { alpha } => sd * (alpha + 1.0 / t),
    }
}

/// Always-valid Hessian envelope
/// `sqrt(d) * max over s in [0, tau_u] of max(1/(T-s), (-lambda(s))^+)`.
///
/// Both inner terms are monotone or interior-max-free on `[0, tau_u]`, so
/// the maximum sits at an endpoint.  This dominates the Hilbert-Schmidt
/// norm of every interpolated Hessian whose mixture satisfies the family
/// schedule, including spread discrete targets where the
/// `(1 + Lambda)/(T Lambda)` form can fail.
pub fn gamma_envelope(schedule: &LambdaSchedule, dim: usize, tau_u: f64) -> Result<f64> {
    let t = schedule.horizon();
    if !tau_u.is_finite() || tau_u < 0.0 || tau_u >= t {
        return Err(Error::InvalidParameter {
            name: "tau_u",
            value: tau_u,
            reason: "need 0 <= tau_u < horizon",
        });
    }
    let neg = |s: f64| (-schedule.lambda(s)).max(0.0);
    let candidate = (1.0 / (t - tau_u)).max(neg(0.0)).max(neg(tau_u));
    Ok((dim as f64).sqrt() * candidate)
}

/// Negative-curvature level `lambda_bar = (inf_{s in [0, tau_l]} lambda(s))^-`.
///
/// Both family schedules attain their infimum over an interval at an
/// endpoint (compact `lambda` is unimodal in `T-s` with an interior
/// maximum, log-concave `lambda` is monotone), so endpoint evaluation
/// is exact.
pub fn lambda_bar(schedule: &LambdaSchedule, tau_l: f64) -> Result<f64> {
    let t = schedule.horizon();
    if !tau_l.is_finite() || tau_l < 0.0 || tau_l >= t {
        return Err(Error::InvalidParameter {
            name: "tau_l",
            value: tau_l,
            reason: "need 0 <= tau_l < horizon",
        });
    }
    let inf = schedule.lambda(0.0).min(schedule.lambda(tau_l));
    Ok((-inf).max(0.0))
}

/// Sup-integral `sup_{s in [0, tau_l]} int_s^{tau_u} I(s, u)^{-1/2} du`,
/// by quadrature and by the family closed-form bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupIntegral {
    pub quadrature: f64,
    pub bound: f64,
}

/// Computes the sup-integral both ways and checks the quadrature value
/// against the closed-form bound.
///
/// The `u` integral substitutes `u = s + w^2`, which removes the
/// square-root singularity at `u = s`.  The bound is
/// `sqrt(2) ln 2 * T/R + sqrt(2) R tau_u / T` (compact; the `s = 0`
/// value of an explicit artanh antiderivative majorant) or
/// `2 sqrt(2) / sqrt(alpha)` (log-concave).
pub fn sup_integral(schedule: &LambdaSchedule, tau_l: f64, tau_u: f64) -> Result<SupIntegral> {
    let t = schedule.horizon();
    if !(tau_l.is_finite() && tau_u.is_finite()) || tau_l < 0.0 || tau_u <= tau_l || tau_u >= t {
        return Err(Error::InvalidParameter {
            name: "tau_u",
            value: tau_u,
            reason: "need 0 <= tau_l < tau_u < horizon",
        });
    }
    let inner = |s: f64| -> Result<f64> {
        let width = (tau_u - s).sqrt();
        let f = |w: f64| {
            let u = s + w * w;
            let i = schedule.i_integral(s, u).unwrap_or(0.0);
            if i <= 0.0 {
                // Limit of 2w / sqrt(I(s, s + w^2)) as w -> 0.
                2.0
            } else {
                2.0 * w / i.sqrt()
            }
        };
        let (value, _err) = quad::integrate_adaptive(&f, 0.0, width, 1e-12, 36)?;
        Ok(value)
    };
    let n_grid = if tau_l == 0.0 { 1 } else { 33 };
    let mut sup = f64::NEG_INFINITY;
    for k in 0..n_grid {
        let s = if n_grid == 1 {
            0.0
        } else {
            tau_l * k as f64 / (n_grid - 1) as f64
        };
        sup = sup.max(inner(s)?);
    }
    let bound = match schedule.kind {
        FamilyKind::Compact { radius } => {
            std::f64::consts::SQRT_2 * (2.0f64.ln() * t / radius + radius * tau_u / t)
        }
        FamilyKind::LogConcave { alpha } => 2.0 * std::f64::consts::SQRT_2 / alpha.sqrt(),
    };
    if sup > bound * (1.0 + 1e-8) {
        return Err(Error::DegenerateRun(format!(
            "sup-integral quadrature {sup} exceeds closed-form bound {bound}"
        )));
    }
    Ok(SupIntegral {
        quadrature: sup,
        bound,
    })
}

/// Shared bracket `3 Lambda_phi + ratio + 2 sqrt(Lambda_phi C_phi)` with
/// `ratio = delta/(1-delta)`; multiplied by `W2^2/T` it bounds the
/// time-localized corrector energy.
pub fn stability_bracket(lambda_phi: f64, c_phi: f64, ratio: f64) -> f64 {
    3.0 * lambda_phi + ratio + 2.0 * (lambda_phi * c_phi).sqrt()
}

/// Second-order stability prefactor
/// `K = 2 C_{delta' delta} B(delta) + 4 T lambda_bar B(delta')` with
/// `B(x) = 3 Lambda_phi + x/(1-x) + 2 sqrt(Lambda_phi C_phi)`.
pub fn k_constant(
    lambda_phi: f64,
    c_phi: f64,
    c_delta_prime_delta: f64,
    lambda_bar: f64,
    delta: &DeltaChoice,
    horizon: f64,
) -> f64 {
    2.0 * c_delta_prime_delta * stability_bracket(lambda_phi, c_phi, delta.ratio)
        + 4.0 * horizon * lambda_bar * stability_bracket(lambda_phi, c_phi, delta.ratio_prime)
}

/// First-order stability prefactor `C_rho_nu = C_delta B(delta)`.
pub fn c_rho_nu(lambda_phi: f64, c_phi: f64, c_delta: f64, delta: &DeltaChoice) -> f64 {
    c_delta * stability_bracket(lambda_phi, c_phi, delta.ratio)
}

/// Linear-term prefactor for the Hessian stability bound:
/// `A = (tau_l^{-1/2} + 2 tau_l^{1/2} lambda_bar) sqrt(K)/T
///    + T^{-1/2} B(delta')^{1/2} (1/(tau_u - tau_l) + 2 gamma)
///      (2 gamma tau_l / sqrt(2 pi)) S`
/// where `S` is the sup-integral value.
#[allow(clippy::too_many_arguments)]
pub fn a_constant(
    lambda_phi: f64,
    c_phi: f64,
    delta: &DeltaChoice,
    horizon: f64,
    k: f64,
    gamma: f64,
    lambda_bar: f64,
    sup_integral: f64,
    tau_l: f64,
    tau_u: f64,
) -> f64 {
    let first = (1.0 / tau_l.sqrt() + 2.0 * tau_l.sqrt() * lambda_bar) * k.sqrt() / horizon;
    let bracket = stability_bracket(lambda_phi, c_phi, delta.ratio_prime);
    let second = bracket.sqrt() / horizon.sqrt()
        * (1.0 / (tau_u - tau_l) + 2.0 * gamma)
        * (2.0 * gamma * tau_l / (2.0 * std::f64::consts::PI).sqrt())
        * sup_integral;
    first + second
}

/// All constants for a single family governing both marginals, with exact
/// prefactors alongside the printed envelopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub family: FamilySpec,
    pub dim: usize,
    pub regime_ok: bool,
    pub lambda_phi: f64,
    pub lambda_psi: f64,
    pub semiconcavity_alternative: Option<f64>,
    pub c_phi: f64,
    pub delta: DeltaChoice,
    pub c_delta_exact: f64,
    pub c_delta_envelope: f64,
    pub c_delta_prime_exact: f64,
    pub c_delta_prime_envelope: f64,
    pub gamma: f64,
    pub gamma_family: f64,
    pub gamma_envelope: f64,
    pub lambda_bar: f64,
    pub lambda_bar_envelope: f64,
    pub sup_integral: SupIntegral,
    pub tau_l: f64,
    pub tau_u: f64,
    pub k_exact: f64,
    pub k_envelope: f64,
    pub a_exact: f64,
    pub a_envelope: f64,
    pub c_rho_nu_exact: f64,
    pub c_rho_nu_envelope: f64,
}

/// Assembles every constant for a symmetric pair of marginals in `family`.
///
/// `tau_l = delta' T` and `tau_u = delta T` throughout.  The `_exact`
/// fields chain exact localization constants; the `_envelope` fields chain
/// the printed closed-form envelopes, which carry the advertised
/// asymptotic shapes (`K ~ R^6/T^3`, `A ~ R^4/T^{7/2} + d/T` compact).
pub fn full_report(family: &FamilySpec, dim: usize) -> Result<ConstantsReport> {
    family.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter {
            name: "dim",
            value: 0.0,
            reason: "dimension must be positive",
        });
    }
    let t = family.horizon();
    let schedule = family.schedule();
    let lambda = family.semiconcavity();
    let c_phi_v = family.c_phi();
    let delta = choose_delta(lambda)?;
    let tau_l = delta.delta_prime * t;
    let tau_u = delta.delta * t;

    let c_delta_exact = c_delta(&schedule, 0.0, delta.delta)?;
    let c_delta_env = c_delta_envelope(family);
    let c_dp_exact = c_delta(&schedule, delta.delta_prime, delta.delta)?;
    let c_dp_env = c_delta_prime_envelope(family);

    let gamma = gamma_bound(dim, t, lambda);
    let gamma_fam = gamma_family(family, dim);
    let gamma_env = gamma_envelope(&schedule, dim, tau_u)?;

    let lbar = lambda_bar(&schedule, tau_l)?;
    let lbar_env = match family.kind {
        FamilyKind::Compact { radius } => 4.0 * radius * radius / (t * t),
        FamilyKind::LogConcave { .. } => lbar,
    };

    let sup = sup_integral(&schedule, tau_l, tau_u)?;

    let k_exact = k_constant(lambda, c_phi_v, c_dp_exact, lbar, &delta, t);
    let k_env = k_constant(lambda, c_phi_v, c_dp_env, lbar_env, &delta, t);
    let a_exact = a_constant(
        lambda, c_phi_v, &delta, t, k_exact, gamma_env, lbar, sup.quadrature, tau_l, tau_u,
    );
    let a_env = a_constant(
        lambda, c_phi_v, &delta, t, k_env, gamma, lbar_env, sup.bound, tau_l, tau_u,
    );

    let report = ConstantsReport {
        family: *family,
        dim,
        regime_ok: family.regime_ok(),
        lambda_phi: lambda,
        lambda_psi: lambda,
        semiconcavity_alternative: family.semiconcavity_alternative(),
        c_phi: c_phi_v,
        delta,
        c_delta_exact,
        c_delta_envelope: c_delta_env,
        c_delta_prime_exact: c_dp_exact,
        c_delta_prime_envelope: c_dp_env,
        gamma,
        gamma_family: gamma_fam,
        gamma_envelope: gamma_env,
        lambda_bar: lbar,
        lambda_bar_envelope: lbar_env,
        sup_integral: sup,
        tau_l,
        tau_u,
        k_exact,
        k_envelope: k_env,
        a_exact,
        a_envelope: a_env,
        c_rho_nu_exact: c_rho_nu(lambda, c_phi_v, c_delta_exact, &delta),
        c_rho_nu_envelope: c_rho_nu(lambda, c_phi_v, c_delta_env, &delta),
    };
    if report.c_delta_exact > report.c_delta_envelope * (1.0 + 1e-12)
        || report.c_delta_prime_exact > report.c_delta_prime_envelope * (1.0 + 1e-12)
    {
        return Err(Error::DegenerateRun(
            "exact localization constant exceeds its envelope".to_string(),
        ));
    }
    Ok(report)
}

/// Formats the report as a fixed-width text table, one constant per row,
/// with exact and envelope columns.
pub fn table_report(report: &ConstantsReport) -> String {
    let family = match report.family.kind {
        FamilyKind::Compact { radius } => format!("compact(radius = {radius})"),
        FamilyKind::LogConcave { alpha } => format!("log-concave(alpha = {alpha})"),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "family: {family}, horizon = {}, dim = {}, regime_ok = {}\n",
        report.family.horizon(),
        report.dim,
        report.regime_ok
    ));
    out.push_str(&format!(
        "{:<22} {:>16} {:>16}\n",
        "constant", "exact", "envelope"
    ));
    let mut row = |name: &str, exact: f64, envelope: f64| {
        out.push_str(&format!("{name:<22} {exact:>16.8e} {envelope:>16.8e}\n"));
    };
    row("lambda_phi", report.lambda_phi, report.lambda_phi);
    row("lambda_psi", report.lambda_psi, report.lambda_psi);
    row("c_phi", report.c_phi, report.c_phi);
    row("delta", report.delta.delta, report.delta.delta);
    row(
        "delta_prime",
        report.delta.delta_prime,
        report.delta.delta_prime,
    );
    row("c_delta", report.c_delta_exact, report.c_delta_envelope);
    row(
        "c_delta_prime",
        report.c_delta_prime_exact,
        report.c_delta_prime_envelope,
    );
    row("gamma", report.gamma_envelope, report.gamma);
    row("lambda_bar", report.lambda_bar, report.lambda_bar_envelope);
    row(
        "sup_integral",
        report.sup_integral.quadrature,
        report.sup_integral.bound,
    );
    row("k", report.k_exact, report.k_envelope);
    row("a", report.a_exact, report.a_envelope);
    row("c_rho_nu", report.c_rho_nu_exact, report.c_rho_nu_envelope);
    out
}
