//! Bulk and boundary double-well potentials, their structural checks, and the
//! convex-concave split used by the energy-stable time stepping.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

type SmoothFn = dyn Fn(f64, usize) -> f64 + Send + Sync;

/// A scalar potential with derivatives through order four.
#[derive(Clone)]
pub enum Potential {
    /// Coefficients in ascending degree.
    Polynomial(Vec<f64>),
    /// User-supplied smooth function `(r, order) -> f^(order)(r)`, together with
    /// a known lower bound for its second derivative.
    Smooth {
        name: String,
        eval: Arc<SmoothFn>,
        second_derivative_lower_bound: f64,
    },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Potential::Smooth { name, .. } => f.debug_struct("Smooth").field("name", name).finish(),
        }
    }
}

/// ¼(r² − 1)² in ascending coefficients.
pub const REGULAR_DOUBLE_WELL: [f64; 5] = [0.25, 0.0, -0.5, 0.0, 0.25];

impl Potential {
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return invalid("polynomial potential needs finite coefficients");
        }
        Ok(Potential::Polynomial(coeffs))
    }

    pub fn regular() -> Self {
        Potential::Polynomial(REGULAR_DOUBLE_WELL.to_vec())
    }

    pub fn smooth(
        name: impl Into<String>,
        second_derivative_lower_bound: f64,
        eval: impl Fn(f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Potential::Smooth {
            name: name.into(),
            eval: Arc::new(eval),
            second_derivative_lower_bound,
        }
    }

    /// `order`-th derivative at `r`, for `order` in 0..=4.
    pub fn eval(&self, r: f64, order: usize) -> Result<f64> {
        if order > 4 {
            return invalid(format!("derivative order {order} exceeds 4"));
        }
        Ok(self.d(r, order))
    }

    /// Unchecked evaluation; `order` must be at most 4.
    #[inline]
    pub fn d(&self, r: f64, order: usize) -> f64 {
        match self {
            Potential::Polynomial(c) => poly_derivative(c, r, order),
            Potential::Smooth { eval, .. } => eval(r, order),
        }
    }

    /// Coefficients scaled by `s` (polynomials only).
    pub fn scaled(&self, s: f64) -> Option<Self> {
        match self {
            Potential::Polynomial(c) => Some(Potential::Polynomial(c.iter().map(|v| s * v).collect())),
            Potential::Smooth { .. } => None,
        }
    }

    /// Minimum of `f''` over `[lo, hi]`.
    ///
    /// Polynomials are minimized exactly up to root-finding tolerance: the
    /// candidates are the endpoints and the zeros of `f'''` bracketed on a
    /// uniform sample. Smooth functions return their declared bound.
    pub fn second_derivative_min(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Potential::Polynomial(c) => {
                let fppp = |r: f64| poly_derivative(c, r, 3);
                let fpp = |r: f64| poly_derivative(c, r, 2);
                let mut best = fpp(lo).min(fpp(hi));
                let samples = 4096;
                let step = (hi - lo) / samples as f64;
                let mut a = lo;
                let mut fa = fppp(a);
                for k in 1..=samples {
                    let b = if k == samples { hi } else { lo + k as f64 * step };
                    let fb = fppp(b);
                    if fa == 0.0 {
                        best = best.min(fpp(a));
                    }
                    if fa * fb < 0.0 {
                        let (mut x0, mut x1, mut f0) = (a, b, fa);
                        for _ in 0..200 {
                            let m = 0.5 * (x0 + x1);
                            let fm = fppp(m);
                            if fm == 0.0 || (x1 - x0) < 1e-15 * (1.0 + m.abs()) {
                                x0 = m;
                                x1 = m;
                                break;
                            }
                            if f0 * fm < 0.0 {
                                x1 = m;
                            } else {
                                x0 = m;
                                f0 = fm;
                            }
                        }
                        best = best.min(fpp(0.5 * (x0 + x1)));
                    }
                    a = b;
                    fa = fb;
                }
                best
            }
            Potential::Smooth {
                second_derivative_lower_bound,
                ..
            } => *second_derivative_lower_bound,
        }
    }
}

fn poly_derivative(c: &[f64], r: f64, order: usize) -> f64 {
    if order >= c.len() {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in (order..c.len()).rev() {
        let falling: f64 = ((k - order + 1)..=k).map(|m| m as f64).product();
        acc = acc * r + c[k] * falling;
    }
    acc
}

/// The bulk potential `f` and boundary potential `f_Γ` with the constants of
/// the domination inequality `|f'(r)| ≤ eta·|f_Γ'(r)| + c_compat`.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub bulk: Potential,
    pub boundary: Potential,
    pub eta: f64,
    pub c_compat: f64,
    pub lower_bound_fpp: f64,
    pub lower_bound_fgpp: f64,
}

/// Range on which curvature bounds are computed when none is given.
pub const DEFAULT_VALIDATION_RANGE: (f64, f64) = (-3.0, 3.0);

/// Both potentials equal to ¼(r² − 1)².
pub fn regular_double_well() -> PotentialPair {
    PotentialPair {
        bulk: Potential::regular(),
        boundary: Potential::regular(),
        eta: 1.0,
        c_compat: 0.0,
        lower_bound_fpp: -1.0,
        lower_bound_fgpp: -1.0,
    }
}

impl PotentialPair {
    /// Builds a pair, computing the curvature lower bounds on `range`.
    pub fn new(bulk: Potential, boundary: Potential, eta: f64, c_compat: f64, range: (f64, f64)) -> Result<Self> {
        if !(eta >= 0.0 && c_compat >= 0.0) {
            return invalid("eta and the compatibility constant must be nonnegative");
        }
        if !(range.0 < range.1) {
            return invalid(format!("empty validation range [{}, {}]", range.0, range.1));
        }
        let lower_bound_fpp = bulk.second_derivative_min(range.0, range.1);
        let lower_bound_fgpp = boundary.second_derivative_min(range.0, range.1);
        Ok(Self {
            bulk,
            boundary,
            eta,
            c_compat,
            lower_bound_fpp,
            lower_bound_fgpp,
        })
    }

    pub fn bulk_split(&self, range: (f64, f64)) -> Result<ConvexConcaveSplit> {
        convex_concave_split_with_bound(&self.bulk, self.lower_bound_fpp, range)
    }

    pub fn boundary_split(&self, range: (f64, f64)) -> Result<ConvexConcaveSplit> {
        convex_concave_split_with_bound(&self.boundary, self.lower_bound_fgpp, range)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub range: (f64, f64),
    pub samples: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Samples the structural assumptions on `[r_lo, r_hi]`. Failures are report
/// entries; only malformed arguments are errors.
pub fn check_assumptions(pair: &PotentialPair, range: (f64, f64), samples: usize) -> Result<AssumptionReport> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return invalid(format!("empty validation range [{lo}, {hi}]"));
    }
    if samples < 3 {
        return invalid("at least 3 samples are needed");
    }
    let grid: Vec<f64> = (0..samples)
        .map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64)
        .collect();
    let (f, g) = (&pair.bulk, &pair.boundary);
    let mut checks = Vec::new();

    let worst_value = grid
        .iter()
        .map(|&r| f.d(r, 0).min(g.d(r, 0)))
        .fold(f64::INFINITY, f64::min);
    checks.push(AssumptionCheck {
        name: "nonnegativity",
        passed: worst_value >= 0.0,
        detail: format!("min(f, f_G) = {worst_value:.6e}"),
    });

    let (s_bulk, s_bnd) = (f.d(0.0, 1), g.d(0.0, 1));
    checks.push(AssumptionCheck {
        name: "zero_slope_at_origin",
        passed: s_bulk == 0.0 && s_bnd == 0.0,
        detail: format!("f'(0) = {s_bulk:.6e}, f_G'(0) = {s_bnd:.6e}"),
    });

    let min_fpp = grid.iter().map(|&r| f.d(r, 2)).fold(f64::INFINITY, f64::min);
    let min_gpp = grid.iter().map(|&r| g.d(r, 2)).fold(f64::INFINITY, f64::min);
    let curvature_slack = 1e-12 * (1.0 + pair.lower_bound_fpp.abs().max(pair.lower_bound_fgpp.abs()));
    checks.push(AssumptionCheck {
        name: "curvature_lower_bound",
        passed: min_fpp >= pair.lower_bound_fpp - curvature_slack
            && min_gpp >= pair.lower_bound_fgpp - curvature_slack,
        detail: format!(
            "min f'' = {min_fpp:.6e} (bound {:.6e}), min f_G'' = {min_gpp:.6e} (bound {:.6e})",
            pair.lower_bound_fpp, pair.lower_bound_fgpp
        ),
    });

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_r = lo;
    for &r in &grid {
        let lhs = f.d(r, 1).abs();
        let rhs = pair.eta * g.d(r, 1).abs() + pair.c_compat;
        let excess = lhs - rhs - 1e-12 * (1.0 + lhs);
        if excess > worst_excess {
            worst_excess = excess;
            worst_r = r;
        }
    }
    checks.push(AssumptionCheck {
        name: "boundary_domination",
        passed: worst_excess <= 0.0,
        detail: format!(
            "max(|f'| - eta|f_G'| - C) = {worst_excess:.6e} at r = {worst_r:.4} (eta = {}, C = {})",
            pair.eta, pair.c_compat
        ),
    });

    let coercive = f.d(lo, 1) < 0.0 && f.d(hi, 1) > 0.0 && g.d(lo, 1) < 0.0 && g.d(hi, 1) > 0.0;
    checks.push(AssumptionCheck {
        name: "coercivity",
        passed: coercive,
        detail: format!(
            "f'(lo) = {:.3e}, f'(hi) = {:.3e}, f_G'(lo) = {:.3e}, f_G'(hi) = {:.3e}",
            f.d(lo, 1),
            f.d(hi, 1),
            g.d(lo, 1),
            g.d(hi, 1)
        ),
    });

    Ok(AssumptionReport { range, samples, checks })
}

/// `f = f_cx + f_cc` with `f_cx = f + ρr²/2` convex and `f_cc = −ρr²/2`
/// concave on the validation range.
#[derive(Debug, Clone)]
pub struct ConvexConcaveSplit {
    pub potential: Potential,
    pub rho: f64,
}

impl ConvexConcaveSplit {
    #[inline]
    pub fn convex_value(&self, r: f64) -> f64 {
        self.potential.d(r, 0) + 0.5 * self.rho * r * r
    }

    #[inline]
    pub fn convex_d1(&self, r: f64) -> f64 {
        self.potential.d(r, 1) + self.rho * r
    }

    #[inline]
    pub fn convex_d2(&self, r: f64) -> f64 {
        self.potential.d(r, 2) + self.rho
    }

    #[inline]
    pub fn concave_value(&self, r: f64) -> f64 {
        -0.5 * self.rho * r * r
    }

    #[inline]
    pub fn concave_d1(&self, r: f64) -> f64 {
        -self.rho * r
    }
}

/// Split with `ρ = max(0, −min f'')`, the minimum taken over `range`.
pub fn convex_concave_split(p: &Potential, range: (f64, f64)) -> Result<ConvexConcaveSplit> {
    let bound = p.second_derivative_min(range.0, range.1);
    convex_concave_split_with_bound(p, bound, range)
}

fn convex_concave_split_with_bound(p: &Potential, bound: f64, range: (f64, f64)) -> Result<ConvexConcaveSplit> {
    if let Potential::Polynomial(c) = p {
        let degree = c.iter().rposition(|&v| v != 0.0).unwrap_or(0);
        if degree % 2 == 1 || c[degree] < 0.0 {
            return invalid(format!(
                "f'' is unbounded below for a polynomial of degree {degree} with leading coefficient {}",
                c[degree]
            ));
        }
    }
    if !bound.is_finite() {
        return invalid(format!("f'' has no finite lower bound on [{}, {}]", range.0, range.1));
    }
    Ok(ConvexConcaveSplit {
        potential: p.clone(),
        rho: (-bound).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regular_values() {
        let f = Potential::regular();
        assert_eq!(f.eval(1.0, 0).unwrap(), 0.0);
        assert_eq!(f.eval(1.0, 1).unwrap(), 0.0);
        assert_eq!(f.eval(0.0, 0).unwrap(), 0.25);
        assert_eq!(f.eval(0.0, 1).unwrap(), 0.0);
        assert_eq!(f.eval(0.0, 2).unwrap(), -1.0);
        assert_eq!(f.eval(0.0, 3).unwrap(), 0.0);
        for r in [-2.0, 0.3, 1.7] {
            assert_eq!(f.eval(r, 4).unwrap(), 6.0);
        }
        assert_eq!(f.eval(2.0, 1).unwrap(), 6.0);
    }

    #[test]
    fn order_above_four_rejected() {
        assert!(Potential::regular().eval(0.5, 5).is_err());
    }

    #[test]
    fn regular_pair_passes_checks() {
        let report = check_assumptions(&regular_double_well(), (-3.0, 3.0), 601).unwrap();
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn nonzero_slope_at_origin_fails() {
        let bulk = Potential::polynomial(vec![0.25, 1.0, -0.5, 0.0, 0.25]).unwrap();
        let pair = PotentialPair::new(bulk, Potential::regular(), 1.0, 5.0, (-3.0, 3.0)).unwrap();
        let report = check_assumptions(&pair, (-3.0, 3.0), 601).unwrap();
        assert!(!report.check("zero_slope_at_origin").unwrap().passed);
    }

    #[test]
    fn domination_needs_large_eta() {
        let bulk = Potential::regular().scaled(10.0).unwrap();
        let pair = PotentialPair::new(bulk.clone(), Potential::regular(), 1.0, 0.0, (-3.0, 3.0)).unwrap();
        let report = check_assumptions(&pair, (-3.0, 3.0), 601).unwrap();
        assert!(!report.check("boundary_domination").unwrap().passed);

        let pair = PotentialPair::new(bulk, Potential::regular(), 10.0, 0.0, (-3.0, 3.0)).unwrap();
        let report = check_assumptions(&pair, (-3.0, 3.0), 601).unwrap();
        assert!(report.check("boundary_domination").unwrap().passed, "{report}");
    }

    #[test]
    fn malformed_ranges_are_errors() {
        let pair = regular_double_well();
        assert!(check_assumptions(&pair, (1.0, -1.0), 10).is_err());
        assert!(check_assumptions(&pair, (-1.0, 1.0), 2).is_err());
    }

    #[test]
    fn computed_curvature_bound_of_regular_well() {
        let lb = Potential::regular().second_derivative_min(-3.0, 3.0);
        assert!((lb + 1.0).abs() < 1e-14, "{lb}");
        let pair = PotentialPair::new(Potential::regular(), Potential::regular(), 1.0, 0.0, (-3.0, 3.0)).unwrap();
        assert!((pair.lower_bound_fpp + 1.0).abs() < 1e-14);
    }

    #[test]
    fn split_of_regular_well() {
        let s = convex_concave_split(&Potential::regular(), (-3.0, 3.0)).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-14);
        for r in [-1.5, -0.2, 0.0, 0.7, 2.0] {
            assert!((s.convex_d1(r) - r * r * r).abs() < 1e-12);
            assert!((s.concave_d1(r) + r).abs() < 1e-14);
        }
    }

    #[test]
    fn convex_potential_has_no_concave_part() {
        let p = Potential::polynomial(vec![0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = convex_concave_split(&p, (-3.0, 3.0)).unwrap();
        assert_eq!(s.rho, 0.0);
        assert_eq!(s.concave_d1(1.3), 0.0);
    }

    #[test]
    fn odd_degree_is_refused() {
        let p = Potential::polynomial(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(convex_concave_split(&p, (-3.0, 3.0)).is_err());
        let p = Potential::polynomial(vec![0.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(convex_concave_split(&p, (-3.0, 3.0)).is_err());
    }

    #[test]
    fn smooth_hook_uses_declared_bound() {
        let p = Potential::smooth("cosh", 1.0, |r, k| if k % 2 == 0 { r.cosh() } else { r.sinh() });
        assert_eq!(p.eval(0.0, 2).unwrap(), 1.0);
        let s = convex_concave_split(&p, (-3.0, 3.0)).unwrap();
        assert_eq!(s.rho, 0.0);
    }

    proptest! {
        #[test]
        fn even_symmetry(r in -5.0f64..5.0) {
            let f = Potential::regular();
            prop_assert_eq!(f.d(r, 0), f.d(-r, 0));
        }

        #[test]
        fn split_sums_to_derivative(r in -3.0f64..3.0) {
            let f = Potential::regular();
            let s = convex_concave_split(&f, (-3.0, 3.0)).unwrap();
            prop_assert!((s.convex_d1(r) + s.concave_d1(r) - f.d(r, 1)).abs() < 1e-12);
            prop_assert!((s.convex_value(r) + s.concave_value(r) - f.d(r, 0)).abs() < 1e-12);
        }

        #[test]
        fn convex_part_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s = convex_concave_split(&Potential::regular(), (-3.0, 3.0)).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(s.convex_d1(lo) <= s.convex_d1(hi));
            prop_assert!(s.convex_d2(a) >= -1e-14);
        }

        #[test]
        fn derivatives_match_finite_differences(r in -2.0f64..2.0, k in 1usize..=4) {
            let f = Potential::polynomial(vec![0.3, 0.0, -0.7, 0.2, 0.4]).unwrap();
            let step = 1e-5;
            let fd = (f.d(r + step, k - 1) - f.d(r - step, k - 1)) / (2.0 * step);
            let exact = f.d(r, k);
            prop_assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "k={} fd={} exact={}", k, fd, exact);
        }
    }
}
