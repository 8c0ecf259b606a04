//! Gaussian quadrature rules and adaptive panel integration.
//!
//! Rules are built from the Jacobi matrix of the orthogonal-polynomial
//! recurrence: nodes are its eigenvalues (symmetric tridiagonal QL),
//! polished by Newton on the orthonormal recurrence, and weights come
//! from the Christoffel function `w_i = 1 / sum_k ptilde_k(x_i)^2`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Recurrence family behind a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    /// Weight 1 on [-1, 1].
    Legendre,
    /// Weight `exp(-x^2)` on the line.
    Hermite,
}

impl Family {
    /// Total mass of the weight function.
    fn mu0(self) -> f64 {
        match self {
            Family::Legendre => 2.0,
            Family::Hermite => std::f64::consts::PI.sqrt(),
        }
    }

    /// Off-diagonal entry `b_k` of the Jacobi matrix, k >= 1.
    fn offdiag(self, k: usize) -> f64 {
        let kf = k as f64;
        match self {
            Family::Legendre => kf / (4.0 * kf * kf - 1.0).sqrt(),
            Family::Hermite => (kf / 2.0).sqrt(),
        }
    }
}

impl QuadRule {
    /// Gauss-Legendre rule with `n` nodes, exact on polynomials of degree `2n - 1` over [-1, 1].
    pub fn legendre(n: usize) -> Result<QuadRule> {
        build_rule(Family::Legendre, n)
    }

    /// Gauss-Hermite rule with `n` nodes for the weight `exp(-x^2)` on the line.
    pub fn hermite(n: usize) -> Result<QuadRule> {
        build_rule(Family::Hermite, n)
    }

    /// Applies the raw rule: `sum_i w_i f(x_i)`.
    pub fn sum<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn ensure_positive_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "quad_order",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    Ok(())
}

fn build_rule(family: Family, n: usize) -> Result<QuadRule> {
    ensure_positive_order(n)?;
    let offdiag: Vec<f64> = (1..n).map(|k| family.offdiag(k)).collect();
    let mut nodes = tridiagonal_eigenvalues(&vec![0.0; n], &offdiag)?;
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    for x in &mut nodes {
        *x = newton_polish(family, n, *x);
    }
    let weights = nodes
        .iter()
        .map(|&x| 1.0 / orthonormal_sq_sum(family, n, x))
        .collect();
    Ok(QuadRule { nodes, weights })
}

/// Sum of squared orthonormal polynomials `ptilde_0..ptilde_{n-1}` at `x`.
fn orthonormal_sq_sum(family: Family, n: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0 / family.mu0().sqrt();
    let mut total = cur * cur;
    for k in 0..n - 1 {
        let b_cur = if k == 0 { 0.0 } else { family.offdiag(k) };
        let next = (x * cur - b_cur * prev) / family.offdiag(k + 1);
        prev = cur;
        cur = next;
        total += cur * cur;
    }
    total
}

/// One to three Newton steps on `ptilde_n(x) = 0` via the recurrence.
fn newton_polish(family: Family, n: usize, mut x: f64) -> f64 {
    for _ in 0..3 {
        let mut p_prev = 0.0;
        let mut p = 1.0 / family.mu0().sqrt();
        let mut d_prev = 0.0;
        let mut d = 0.0;
        for k in 0..n {
            let b_next = family.offdiag(k + 1);
            let b_cur = if k == 0 { 0.0 } else { family.offdiag(k) };
            let p_next = (x * p - b_cur * p_prev) / b_next;
            let d_next = (x * d + p - b_cur * d_prev) / b_next;
            p_prev = p;
            p = p_next;
            d_prev = d;
            d = d_next;
        }
        if d == 0.0 {
            break;
        }
        let step = p / d;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Eigenvalues of a symmetric tridiagonal matrix by the implicit QL method
/// with Wilkinson shifts.
fn tridiagonal_eigenvalues(diag: &[f64], offdiag: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    // e is padded so e[i] couples rows i and i + 1.
    let mut e = offdiag.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            // First decoupled boundary at or above l.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::NonFinite("tridiagonal QL failed to converge".into()));
            }
            // Shift from the leading 2x2 of the active block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Rotation annihilated early; restart the sweep.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tridiagonal eigenvalues".into()));
    }
    Ok(d)
}

/// Process-wide rule cache; rules are immutable once built.
fn cached(family: Family, n: usize) -> Result<Arc<QuadRule>> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Arc<QuadRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quad cache poisoned");
    if let Some(rule) = guard.get(&(family, n)) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(build_rule(family, n)?);
    guard.insert((family, n), rule.clone());
    Ok(rule)
}

/// Cached Gauss-Legendre rule.
pub fn legendre_cached(n: usize) -> Result<Arc<QuadRule>> {
    cached(Family::Legendre, n)
}

/// Cached Gauss-Hermite rule.
pub fn hermite_cached(n: usize) -> Result<Arc<QuadRule>> {
    cached(Family::Hermite, n)
}

/// Fixed-order Gauss-Legendre integral of `f` over [a, b].
pub fn integrate_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    let rule = legendre_cached(n)?;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    Ok(half * rule.sum(|x| f(mid + half * x)))
}

/// `E[f(Z)]` for `Z ~ N(mean, sd^2)` by Gauss-Hermite.
pub fn normal_expectation<F: FnMut(f64) -> f64>(
    mut f: F,
    mean: f64,
    sd: f64,
    n: usize,
) -> Result<f64> {
    let rule = hermite_cached(n)?;
    let scale = std::f64::consts::SQRT_2 * sd;
    let inv_mu0 = 1.0 / Family::Hermite.mu0();
    Ok(inv_mu0 * rule.sum(|x| f(mean + scale * x)))
}

/// Adaptive panel integration: Gauss-Legendre on a panel versus its halves,
/// bisecting until the disagreement is below the budgeted tolerance.
/// Returns the value and an error estimate (sum of final disagreements).
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "quad_tol",
            value: tol,
            reason: "must be positive",
        });
    }
    let rule = legendre_cached(16)?;
    fn panel(rule: &QuadRule, f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        half * rule.sum(|x| f(mid + half * x))
    }
    fn recurse(
        rule: &QuadRule,
        f: &mut dyn FnMut(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return (whole, 0.0);
        }
        let left = panel(rule, f, a, mid);
        let right = panel(rule, f, mid, b);
        let disagreement = (left + right - whole).abs();
        // Roundoff floor: once the disagreement is at the cancellation noise
        // of the panel sums, bisecting cannot improve it.
        let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs() + whole.abs());
        if !disagreement.is_finite() || disagreement <= tol.max(floor) || depth == 0 {
            return (left + right, disagreement);
        }
        let (lv, le) = recurse(rule, f, a, mid, left, 0.5 * tol, depth - 1);
        let (rv, re) = recurse(rule, f, mid, b, right, 0.5 * tol, depth - 1);
        (lv + rv, le + re)
    }
    let whole = panel(&rule, &mut f, a, b);
    let (value, err) = recurse(&rule, &mut f, a, b, whole, tol, max_depth);
    if !value.is_finite() {
        return Err(Error::NonFinite("adaptive integral".into()));
    }
    Ok((value, err))
}
