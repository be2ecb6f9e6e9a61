//! Small numerical toolkit for the separable convex problems the allocators
//! reduce to: golden-section line search, budget splitting by bisection on
//! the dual multiplier, level equalization of decreasing functions, and a
//! finite-difference convexity probe.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Default absolute tolerance of [`minimize_1d`].
pub const LINE_SEARCH_TOL: f64 = 1e-9;
/// Default relative tolerance of [`allocate_budget`] on the budget sum.
pub const BUDGET_TOL: f64 = 1e-7;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_LINE_ITERS: usize = 400;
const MAX_BISECTIONS: usize = 300;

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Golden-section search for the minimum of a convex `f` on `[lo, hi]`.
///
/// Returns `(x, f(x))` with `x` within `tol` of the minimizer. When the
/// minimum sits on the boundary the endpoint itself is returned.
pub fn minimize_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument("minimize_1d needs lo < hi"));
    }
    let f_lo = finite(f(lo), "minimize_1d")?;
    let f_hi = finite(f(hi), "minimize_1d")?;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = finite(f(x1), "minimize_1d")?;
    let mut f2 = finite(f(x2), "minimize_1d")?;
    for _ in 0..MAX_LINE_ITERS {
        if b - a <= tol || !(a < x1 && x1 <= x2 && x2 < b) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = finite(f(x1), "minimize_1d")?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = finite(f(x2), "minimize_1d")?;
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if f_lo <= best.1 {
        best = (lo, f_lo);
    }
    if f_hi < best.1 {
        best = (hi, f_hi);
    }
    Ok(best)
}

/// Root of `f` on `[lo, hi]` given `f(lo) > 0 > f(hi)`, by the Illinois
/// variant of regula falsi. Stops once the bracket is within `rel_tol` of
/// its upper end.
pub fn root_bracketed<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !(fa > 0.0) {
        return a;
    }
    if !(fb < 0.0) {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..MAX_BISECTIONS {
        if b - a <= rel_tol * b.abs().max(a.abs()) {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
            if !(x > a && x < b) {
                break;
            }
        }
        let fx = f(x);
        if fx > 0.0 {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else if fx < 0.0 {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            return x;
        }
    }
    0.5 * (a + b)
}

/// Solution of [`allocate_budget`].
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSplit {
    pub amounts: Vec<f64>,
    /// Dual multiplier of the budget constraint.
    pub multiplier: f64,
    pub converged: bool,
}

/// Minimizes `sum_n cost_n(x_n)` subject to `sum_n x_n <= budget` and
/// `x_n >= lower_bounds[n]`, for convex non-increasing costs.
///
/// Each cost is minimized against a price `lambda` per unit; `lambda` is
/// bisected until the demands add up to the budget within `tol * budget`.
/// Because the costs are non-increasing the budget always binds, and the
/// returned amounts are rescaled to sum to it exactly.
pub fn allocate_budget(
    costs: &[&dyn Fn(f64) -> f64],
    budget: f64,
    lower_bounds: &[f64],
    tol: f64,
) -> Result<BudgetSplit> {
    if costs.len() != lower_bounds.len() {
        return Err(Error::LengthMismatch { expected: costs.len(), got: lower_bounds.len() });
    }
    if costs.is_empty() {
        return Err(Error::InvalidArgument("no channels to allocate"));
    }
    if !(budget > 0.0) {
        return Err(Error::InvalidArgument("budget must be positive"));
    }
    let required: f64 = lower_bounds.iter().sum();
    if required > budget || lower_bounds.iter().any(|&l| l < 0.0) {
        return Err(Error::InfeasibleBudget { budget, required });
    }
    if costs.len() == 1 {
        return Ok(BudgetSplit { amounts: alloc::vec![budget], multiplier: 0.0, converged: true });
    }

    let x_tol = 1e-11 * budget;
    let demand = |price: f64| -> Result<Vec<f64>> {
        costs
            .iter()
            .zip(lower_bounds)
            .map(|(cost, &lb)| {
                if lb >= budget {
                    return Ok(lb);
                }
                minimize_1d(|x| cost(x) + price * x, lb, budget, x_tol).map(|(x, _)| x)
            })
            .collect()
    };
    let total = |xs: &[f64]| xs.iter().sum::<f64>();

    // Initial price from the average slope at the equal split.
    let equal = budget / costs.len() as f64;
    let mut hi = costs
        .iter()
        .map(|c| {
            let h = derivative_step(equal);
            -(c(equal + h) - c(equal - h)) / (2.0 * h)
        })
        .filter(|s| s.is_finite() && *s > 0.0)
        .fold(0.0, f64::max);
    if !(hi > 0.0) {
        hi = 1.0;
    }
    let mut lo = 0.0;
    let mut hi_demand = demand(hi)?;
    let mut grow = 0;
    while total(&hi_demand) > budget {
        lo = hi;
        hi *= 4.0;
        hi_demand = demand(hi)?;
        grow += 1;
        if grow > 200 {
            return Err(Error::NoConvergence("budget multiplier bracket"));
        }
    }

    let mut best = hi_demand;
    let mut price = hi;
    let mut converged = (total(&best) - budget).abs() <= tol * budget;
    for _ in 0..MAX_BISECTIONS {
        if converged {
            break;
        }
        let mid = if lo > 0.0 && hi / lo > 4.0 { math::sqrt(lo * hi) } else { 0.5 * (lo + hi) };
        if !(mid > lo && mid < hi) {
            break;
        }
        let xs = demand(mid)?;
        let s = total(&xs);
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - budget).abs() < (total(&best) - budget).abs() {
            best = xs;
            price = mid;
        }
        converged = (total(&best) - budget).abs() <= tol * budget;
    }

    rescale_to_budget(&mut best, lower_bounds, budget);
    Ok(BudgetSplit { amounts: best, multiplier: price, converged })
}

/// Spreads the residual `budget - sum` over the entries not pinned at their
/// lower bound, proportionally to their size.
fn rescale_to_budget(xs: &mut [f64], lower_bounds: &[f64], budget: f64) {
    let pinned: f64 = xs.iter().zip(lower_bounds).filter(|(x, lb)| *x <= *lb).map(|(x, _)| *x).sum();
    let free: f64 = xs.iter().zip(lower_bounds).filter(|(x, lb)| *x > *lb).map(|(x, _)| *x).sum();
    if free <= 0.0 {
        return;
    }
    let scale = (budget - pinned) / free;
    for (x, lb) in xs.iter_mut().zip(lower_bounds) {
        if *x > *lb {
            *x = (*x * scale).max(*lb);
        }
    }
}

/// Central-difference step used for bandwidth derivatives.
pub fn derivative_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-12)
}

/// Largest relative spread of the finite-difference slopes of the costs at
/// the channels strictly above their lower bound. Zero at an exact KKT point.
pub fn stationarity_spread(costs: &[&dyn Fn(f64) -> f64], amounts: &[f64], lower_bounds: &[f64]) -> f64 {
    let slopes: Vec<f64> = costs
        .iter()
        .zip(amounts)
        .zip(lower_bounds)
        .filter(|((_, x), lb)| **x > **lb * (1.0 + 1e-9))
        .map(|((c, &x), _)| {
            let h = derivative_step(x).min(0.5 * x);
            (c(x + h) - c(x - h)) / (2.0 * h)
        })
        .collect();
    if slopes.len() < 2 {
        return 0.0;
    }
    let max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    math::rel_diff(max, min)
}

/// Solution of [`equalize_budget`].
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedSplit {
    pub amounts: Vec<f64>,
    /// Common value of the functions at the split.
    pub level: f64,
}

/// Splits `budget` so that the decreasing positive functions `values[n]`
/// take a common value, i.e. solves `min max_n values[n](x_n)` subject to
/// `sum x_n = budget`, `x_n >= lower_bounds[n]`.
pub fn equalize_budget(
    values: &[&dyn Fn(f64) -> f64],
    budget: f64,
    lower_bounds: &[f64],
    tol: f64,
) -> Result<EqualizedSplit> {
    if values.len() != lower_bounds.len() {
        return Err(Error::LengthMismatch { expected: values.len(), got: lower_bounds.len() });
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no channels to allocate"));
    }
    let required: f64 = lower_bounds.iter().sum();
    if required > budget {
        return Err(Error::InfeasibleBudget { budget, required });
    }
    if values.len() == 1 {
        let level = finite(values[0](budget), "equalize_budget")?;
        return Ok(EqualizedSplit { amounts: alloc::vec![budget], level });
    }

    // Amount channel n needs to get down to `level`.
    let inverse = |n: usize, level: f64| -> Result<f64> {
        let f = values[n];
        let (a, b) = (lower_bounds[n], budget);
        if finite(f(a), "equalize_budget")? <= level {
            return Ok(a);
        }
        if finite(f(b), "equalize_budget")? >= level {
            return Ok(b);
        }
        Ok(root_bracketed(|x| f(x) - level, a, b, 1e-14))
    };
    let demand = |level: f64| -> Result<Vec<f64>> { (0..values.len()).map(|n| inverse(n, level)).collect() };

    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (n, f) in values.iter().enumerate() {
        lo = lo.min(finite(f(budget), "equalize_budget")?);
        hi = hi.max(finite(f(lower_bounds[n]), "equalize_budget")?);
    }
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument("equalize_budget needs positive decreasing functions"));
    }
    let mut amounts = demand(hi)?;
    let mut level = hi;
    for _ in 0..MAX_BISECTIONS {
        let mid = math::sqrt(lo * hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let xs = demand(mid)?;
        let s: f64 = xs.iter().sum();
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
            amounts = xs;
            level = mid;
        }
        if (s - budget).abs() <= tol * budget && s <= budget {
            break;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    rescale_to_budget(&mut amounts, lower_bounds, budget);
    Ok(EqualizedSplit { amounts, level })
}

/// Outcome of [`hessian_psd_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianCheck {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub psd: bool,
}

/// Central-difference Hessian of a function of two variables at `point`,
/// tested for positive semi-definiteness.
///
/// The Hessian is taken in coordinates scaled by `max(|x_i|, 1)` so that
/// variables of very different magnitude (a log-power and a bandwidth in Hz)
/// are comparable; definiteness is unaffected by that scaling. `step` is the
/// relative finite-difference step.
pub fn hessian_psd_check<F: Fn(f64, f64) -> f64>(f: F, point: (f64, f64), step: f64) -> Result<HessianCheck> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be positive"));
    }
    let (x, y) = point;
    let sx = x.abs().max(1.0);
    let sy = y.abs().max(1.0);
    let g = |u: f64, v: f64| finite(f(x + u * sx, y + v * sy), "hessian_psd_check");
    let h = step;
    let f0 = g(0.0, 0.0)?;
    let fxx = (g(h, 0.0)? - 2.0 * f0 + g(-h, 0.0)?) / (h * h);
    let fyy = (g(0.0, h)? - 2.0 * f0 + g(0.0, -h)?) / (h * h);
    let fxy = (g(h, h)? - g(h, -h)? - g(-h, h)? + g(-h, -h)?) / (4.0 * h * h);
    let mean = 0.5 * (fxx + fyy);
    let radius = math::sqrt(0.25 * (fxx - fyy) * (fxx - fyy) + fxy * fxy);
    let min_eigenvalue = mean - radius;
    let max_eigenvalue = mean + radius;
    let psd = min_eigenvalue >= -1e-6 * (1.0 + max_eigenvalue.abs());
    Ok(HessianCheck { min_eigenvalue, max_eigenvalue, psd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn line_search_examples() {
        let (x, _) = minimize_1d(|x| (x - 2.0) * (x - 2.0), 0.0, 5.0, 1e-8).unwrap();
        assert!((x - 2.0).abs() <= 1e-8);
        assert_eq!(minimize_1d(|x| x, 1.0, 3.0, 1e-9).unwrap(), (1.0, 1.0));
        // flat bottom: f(x) - f(0) ~ x^2 is resolvable only down to sqrt(eps)
        let (x, _) = minimize_1d(|x: f64| x.exp() + (-x).exp(), -2.0, 2.0, 1e-9).unwrap();
        assert!(x.abs() <= 1e-7);
        let (x, _) = minimize_1d(|x| -x, 1.0, 3.0, 1e-9).unwrap();
        assert_eq!(x, 3.0);
    }

    #[test]
    fn line_search_errors() {
        assert!(minimize_1d(|x| x, 3.0, 3.0, 1e-9).is_err());
        assert!(matches!(minimize_1d(|x| 1.0 / x, 0.0, 1.0, 1e-9), Err(Error::NonFinite(_))));
    }

    #[test]
    fn budget_examples() {
        let c1 = |b: f64| 1.0 / b;
        let c4 = |b: f64| 4.0 / b;
        let s = allocate_budget(&[&c1, &c1], 2.0, &[1e-3, 1e-3], BUDGET_TOL).unwrap();
        assert!(s.converged);
        assert_relative_eq!(s.amounts[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(s.amounts[1], 1.0, max_relative = 1e-6);
        // KKT: b_n proportional to sqrt(c_n)
        let s = allocate_budget(&[&c1, &c4], 3.0, &[1e-3, 1e-3], BUDGET_TOL).unwrap();
        assert_relative_eq!(s.amounts[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(s.amounts[1], 2.0, max_relative = 1e-6);
        assert_relative_eq!(s.multiplier, 1.0, max_relative = 1e-5);
        let s = allocate_budget(&[&c4], 7.0, &[0.1], BUDGET_TOL).unwrap();
        assert_eq!(s.amounts, [7.0]);
    }

    #[test]
    fn budget_errors() {
        let c = |b: f64| 1.0 / b;
        assert!(matches!(
            allocate_budget(&[&c, &c], 1.0, &[0.6, 0.6], BUDGET_TOL),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(allocate_budget(&[&c], 1.0, &[], BUDGET_TOL).is_err());
    }

    #[test]
    fn lower_bound_binds() {
        // A channel whose cost barely depends on its share sits at the bound.
        let steep = |b: f64| 100.0 / b;
        let flat = |b: f64| 1e-9 / b;
        let s = allocate_budget(&[&steep, &flat], 10.0, &[0.01, 0.01], BUDGET_TOL).unwrap();
        assert!(s.amounts[1] < 0.02);
        assert_relative_eq!(s.amounts.iter().sum::<f64>(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn equalize_examples() {
        let f1 = |b: f64| 1.0 / b;
        let f2 = |b: f64| 3.0 / b;
        let s = equalize_budget(&[&f1, &f2], 4.0, &[1e-3, 1e-3], 1e-10).unwrap();
        assert_relative_eq!(s.amounts[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(s.amounts[1], 3.0, max_relative = 1e-8);
        assert_relative_eq!(s.level, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn root_examples() {
        let r = root_bracketed(|x| 2.0 - x * x, 0.0, 2.0, 1e-15);
        assert_relative_eq!(r, core::f64::consts::SQRT_2, max_relative = 1e-14);
        let r = root_bracketed(|x: f64| (-x).exp() - 0.5, 0.0, 50.0, 1e-15);
        assert_relative_eq!(r, core::f64::consts::LN_2, max_relative = 1e-14);
        assert_eq!(root_bracketed(|x| -x, 1.0, 2.0, 1e-15), 1.0);
    }

    #[test]
    fn hessian_examples() {
        let c = hessian_psd_check(|x, y| x * x + y * y, (1.0, 1.0), 1e-4).unwrap();
        assert_relative_eq!(c.min_eigenvalue, 2.0, max_relative = 1e-5);
        assert!(c.psd);
        let c = hessian_psd_check(|x, y| x * x - y * y, (0.0, 0.0), 1e-4).unwrap();
        assert_relative_eq!(c.min_eigenvalue, -2.0, max_relative = 1e-5);
        assert!(!c.psd);
        assert!(hessian_psd_check(|x, _| 1.0 / x, (0.0, 0.0), 1e-4).is_err());
    }

    proptest! {
        #[test]
        fn budget_is_tight_and_stationary(cs in prop::collection::vec(0.1f64..50.0, 2..8), budget in 0.5f64..100.0) {
            let costs: Vec<_> = cs.iter().map(|&c| move |b: f64| c / b + 0.1 * c / (b * b)).collect();
            let refs: Vec<&dyn Fn(f64) -> f64> = costs.iter().map(|c| c as &dyn Fn(f64) -> f64).collect();
            let lb = alloc::vec![1e-3 * budget / cs.len() as f64; cs.len()];
            let s = allocate_budget(&refs, budget, &lb, BUDGET_TOL).unwrap();
            prop_assert!(s.converged);
            prop_assert!((s.amounts.iter().sum::<f64>() - budget).abs() <= BUDGET_TOL * budget);
            prop_assert!(stationarity_spread(&refs, &s.amounts, &lb) <= 10.0 * BUDGET_TOL);
        }

        #[test]
        fn line_search_beats_grid(c in -3.0f64..3.0, w in 0.1f64..4.0) {
            let f = |x: f64| w * (x - c) * (x - c) + (x - c).abs();
            let (_, fx) = minimize_1d(f, -5.0, 5.0, 1e-9).unwrap();
            for i in 0..=1000 {
                let x = -5.0 + 10.0 * i as f64 / 1000.0;
                prop_assert!(fx <= f(x) + 1e-12);
            }
        }
    }
}
