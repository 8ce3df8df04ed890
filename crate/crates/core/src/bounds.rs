//! Closed-form tolerance bounds built from DKW-type tail inequalities, the
//! matching-probability lower bound, and the normal-location matching
//! probability `G` used to check monotonicity in `theta*`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::normal_cdf;

/// Which tail inequality produced a bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Both samples random; discrepancy is `d_K(F_theta, F_theta*)`.
    Unconditional,
    /// Observed sample fixed; discrepancy is `d_K(F_hat_x, F_theta*)`.
    ConditionalOnX,
    /// Explicit multivariate bound, valid for `n eps^2 >= d^2`.
    DevroyeMultivariate { d: usize },
    /// Generic `c1 exp(-c2 n eps^2)` tail with user constants.
    Exponential { c1: f64, c2: f64 },
}

/// An upper bound on the tolerance: `epsilon_b = discrepancy + confidence`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBound {
    pub epsilon_b: f64,
    pub discrepancy_term: f64,
    pub confidence_term: f64,
    pub regime: Regime,
    /// False when the underlying inequality is outside its stated range.
    pub valid: bool,
}

impl ToleranceBound {
    fn new(discrepancy: f64, confidence: f64, regime: Regime, valid: bool) -> Self {
        Self {
            epsilon_b: discrepancy + confidence,
            discrepancy_term: discrepancy,
            confidence_term: confidence,
            regime,
            valid,
        }
    }

    /// Distances never exceed 1, so that is what gets used in practice.
    pub fn reported(&self) -> f64 {
        self.epsilon_b.min(1.0)
    }
}

/// `min(1, 2 exp(-2 n eps^2))`.
pub fn dkw_tail(n: usize, eps: f64) -> f64 {
    if eps <= 0.0 {
        return 1.0;
    }
    (2.0 * (-2.0 * n as f64 * eps * eps).exp()).min(1.0)
}

fn check(n: usize, alpha: f64, discrepancy: f64) -> Result<()> {
    if n == 0 {
        return Err(domain("sample size must be >= 1"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(domain(format!(
            "matching support probability must lie in [0, 1), got {alpha}"
        )));
    }
    if !(0.0..=1.0).contains(&discrepancy) {
        return Err(domain(format!(
            "discrepancy must lie in [0, 1], got {discrepancy}"
        )));
    }
    Ok(())
}

/// `d_K(F_theta, F_theta*) + sqrt((2/n) ln(4/(1-alpha)))`.
pub fn epsilon_upper_unconditional(
    n: usize,
    alpha: f64,
    model_discrepancy: f64,
) -> Result<ToleranceBound> {
    check(n, alpha, model_discrepancy)?;
    let c = (2.0 / n as f64 * (4.0 / (1.0 - alpha)).ln()).sqrt();
    Ok(ToleranceBound::new(
        model_discrepancy,
        c,
        Regime::Unconditional,
        true,
    ))
}

/// `d_K(F_hat_x, F_theta*) + sqrt((1/2n) ln(2/(1-alpha)))`.
pub fn epsilon_upper_conditional(
    n: usize,
    alpha: f64,
    ecdf_discrepancy: f64,
) -> Result<ToleranceBound> {
    check(n, alpha, ecdf_discrepancy)?;
    let c = ((2.0 / (1.0 - alpha)).ln() / (2.0 * n as f64)).sqrt();
    Ok(ToleranceBound::new(
        ecdf_discrepancy,
        c,
        Regime::ConditionalOnX,
        true,
    ))
}

/// `discrepancy + sqrt((1/2n) [ln(2/(1-alpha)) + 2 + d ln(2n)])`, from the
/// tail `2 e^2 (2n)^d exp(-2 n eps^2)`; `valid` records `n c^2 >= d^2`.
pub fn epsilon_upper_devroye(
    n: usize,
    alpha: f64,
    d: usize,
    ecdf_discrepancy: f64,
) -> Result<ToleranceBound> {
    check(n, alpha, ecdf_discrepancy)?;
    if d == 0 {
        return Err(domain("dimension must be >= 1"));
    }
    let nf = n as f64;
    let c2 = ((2.0 / (1.0 - alpha)).ln() + 2.0 + d as f64 * (2.0 * nf).ln()) / (2.0 * nf);
    let valid = nf * c2 >= (d * d) as f64;
    Ok(ToleranceBound::new(
        ecdf_discrepancy,
        c2.sqrt(),
        Regime::DevroyeMultivariate { d },
        valid,
    ))
}

/// `discrepancy + sqrt(ln(c1/(1-alpha)) / (c2 n))` for a tail
/// `c1 exp(-c2 n eps^2)` with constants supplied by the caller.
pub fn epsilon_upper_exponential(
    n: usize,
    alpha: f64,
    discrepancy: f64,
    c1: f64,
    c2: f64,
) -> Result<ToleranceBound> {
    check(n, alpha, discrepancy)?;
    if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
        return Err(domain("tail constants must be positive"));
    }
    let c = ((c1 / (1.0 - alpha)).ln().max(0.0) / (c2 * n as f64)).sqrt();
    Ok(ToleranceBound::new(
        discrepancy,
        c,
        Regime::Exponential { c1, c2 },
        true,
    ))
}

/// The tail `U(n, eps)` whose inversion at `1 - alpha` gives `bound`.
pub fn tail_for(bound: &ToleranceBound, n: usize, eps: f64) -> f64 {
    let gap = eps - bound.discrepancy_term;
    let nf = n as f64;
    match bound.regime {
        Regime::Unconditional => 4.0 * (-0.5 * nf * gap * gap).exp(),
        Regime::ConditionalOnX => 2.0 * (-2.0 * nf * gap * gap).exp(),
        Regime::DevroyeMultivariate { d } => {
            2.0 * (2.0 + d as f64 * (2.0 * nf).ln() - 2.0 * nf * gap * gap).exp()
        }
        Regime::Exponential { c1, c2 } => c1 * (-c2 * nf * gap * gap).exp(),
    }
}

/// Kolmogorov distance between `N(mu, sd^2)` and `N(mu + delta, sd^2)`:
/// the cdf gap at the midpoint, `2 Phi(|delta| / 2sd) - 1`.
pub fn normal_location_discrepancy(delta: f64, sd: f64) -> f64 {
    let z = delta.abs() / (2.0 * sd);
    // 2 Phi(z) - 1 = 1 - 2 Phi(-z), without cancellation for small z
    1.0 - 2.0 * normal_cdf(-z)
}

/// Lower bound on the matching probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PMatchBound {
    pub value: f64,
    /// Set when `eps <= discrepancy`, where the inequality says nothing.
    pub vacuous: bool,
}

/// `1 - c1 exp(-n c2 (eps - discrepancy)^2)`, clamped to `[0, 1]`.
pub fn pmatch_lower_bound(
    n: usize,
    eps: f64,
    discrepancy: f64,
    c1: f64,
    c2: f64,
) -> Result<PMatchBound> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(domain("tail constants must be positive"));
    }
    if n == 0 {
        return Err(domain("sample size must be >= 1"));
    }
    if eps <= discrepancy {
        return Ok(PMatchBound {
            value: 0.0,
            vacuous: true,
        });
    }
    let gap = eps - discrepancy;
    let value = 1.0 - c1 * (-(n as f64) * c2 * gap * gap).exp();
    Ok(PMatchBound {
        value: value.clamp(0.0, 1.0),
        vacuous: false,
    })
}

/// `P(Z in [lo, hi])` for standard normal `Z`, evaluated on the tail that
/// avoids cancellation.
fn normal_interval(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        normal_cdf(-lo) - normal_cdf(-hi)
    } else if hi <= 0.0 {
        normal_cdf(hi) - normal_cdf(lo)
    } else {
        1.0 - normal_cdf(lo) - normal_cdf(-hi)
    }
}

/// `G(theta*) = Phi(sqrt(n)(eps + theta - theta*)) - Phi(sqrt(n)(-eps + theta - theta*))`:
/// the probability that the mean of `n` draws from `N(theta*, 1)` lands
/// within `eps` of `theta`.
pub fn g_function(theta: f64, theta_star: f64, eps: f64, n: usize) -> f64 {
    let s = (n as f64).sqrt();
    let shift = theta - theta_star;
    normal_interval(s * (-eps + shift), s * (eps + shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values evaluated at 40 significant digits
    const TOL: f64 = 1e-10;

    #[test]
    fn dkw_examples() {
        assert!((dkw_tail(100, 0.2) - 6.709252558050237e-4).abs() < TOL);
        assert!((dkw_tail(100, 0.1) - 0.2706705664732254).abs() < TOL);
        assert_eq!(dkw_tail(100, 0.0), 1.0);
        assert_eq!(dkw_tail(100, 1e-9), 1.0);
    }

    #[test]
    fn unconditional_examples() {
        let b = epsilon_upper_unconditional(100, 0.0, 0.0).unwrap();
        assert!((b.epsilon_b - 0.16651092223153955).abs() < TOL);
        let b = epsilon_upper_unconditional(100, 0.95, 0.0).unwrap();
        assert!((b.epsilon_b - 0.2960414374601597).abs() < TOL);
        let b3 = epsilon_upper_unconditional(100, 0.95, 0.3).unwrap();
        assert_eq!(b3.confidence_term, b.confidence_term);
        assert!((b3.epsilon_b - 0.5960414374601597).abs() < TOL);
        assert!(epsilon_upper_unconditional(100, 1.0, 0.0).is_err());
        assert!(epsilon_upper_unconditional(100, -0.1, 0.0).is_err());
    }

    #[test]
    fn conditional_examples() {
        let b = epsilon_upper_conditional(100, 0.95, 0.1).unwrap();
        assert!((b.epsilon_b - 0.23581015157406196).abs() < TOL);
        let b = epsilon_upper_conditional(100, 0.0, 0.0).unwrap();
        assert!((b.epsilon_b - 0.05887050112577373).abs() < TOL);
        let q = epsilon_upper_conditional(400, 0.0, 0.0).unwrap();
        assert!((q.confidence_term * 2.0 - b.confidence_term).abs() < 1e-15);
    }

    #[test]
    fn devroye_examples() {
        let b = epsilon_upper_devroye(200, 0.95, 2, 0.0).unwrap();
        assert!((b.epsilon_b - 0.2101892513208626).abs() < TOL);
        assert!(b.valid);
        let b1 = epsilon_upper_devroye(200, 0.95, 1, 0.0).unwrap();
        assert!(b1.epsilon_b < b.epsilon_b);
        assert!(!epsilon_upper_devroye(4, 0.0, 3, 0.0).unwrap().valid);
    }

    #[test]
    fn reported_value_is_capped() {
        let b = epsilon_upper_unconditional(2, 0.99, 0.9).unwrap();
        assert!(b.epsilon_b > 1.0);
        assert_eq!(b.reported(), 1.0);
    }

    #[test]
    fn bounds_invert_their_tails() {
        for &n in &[10usize, 100, 1000] {
            for &alpha in &[0.0, 0.5, 0.9, 0.95, 0.99] {
                for bound in [
                    epsilon_upper_unconditional(n, alpha, 0.1).unwrap(),
                    epsilon_upper_conditional(n, alpha, 0.1).unwrap(),
                    epsilon_upper_devroye(n, alpha, 3, 0.1).unwrap(),
                    epsilon_upper_exponential(n, alpha, 0.1, 3.0, 1.5).unwrap(),
                ] {
                    let u = tail_for(&bound, n, bound.epsilon_b);
                    assert!((u - (1.0 - alpha)).abs() < 1e-12, "{bound:?}: {u}");
                }
            }
        }
    }

    #[test]
    fn exponential_matches_conditional_for_dkw_constants() {
        let a = epsilon_upper_exponential(150, 0.9, 0.05, 2.0, 2.0).unwrap();
        let b = epsilon_upper_conditional(150, 0.9, 0.05).unwrap();
        assert!((a.epsilon_b - b.epsilon_b).abs() < 1e-15);
    }

    #[test]
    fn bounds_are_monotone() {
        let alphas = [0.0, 0.3, 0.6, 0.9, 0.99];
        for w in alphas.windows(2) {
            assert!(
                epsilon_upper_unconditional(100, w[0], 0.1)
                    .unwrap()
                    .epsilon_b
                    < epsilon_upper_unconditional(100, w[1], 0.1)
                        .unwrap()
                        .epsilon_b
            );
            assert!(
                epsilon_upper_devroye(100, w[0], 2, 0.1).unwrap().epsilon_b
                    < epsilon_upper_devroye(100, w[1], 2, 0.1).unwrap().epsilon_b
            );
        }
        assert!(
            epsilon_upper_conditional(100, 0.9, 0.1).unwrap().epsilon_b
                < epsilon_upper_conditional(100, 0.9, 0.2).unwrap().epsilon_b
        );
        assert!(
            epsilon_upper_conditional(200, 0.9, 0.1)
                .unwrap()
                .confidence_term
                < epsilon_upper_conditional(100, 0.9, 0.1)
                    .unwrap()
                    .confidence_term
        );
    }

    #[test]
    fn pmatch_bound_examples() {
        let b = pmatch_lower_bound(100, 0.3, 0.1, 2.0, 2.0).unwrap();
        assert!((b.value - 0.999329074744195).abs() < TOL);
        assert!(!b.vacuous);
        let v = pmatch_lower_bound(100, 0.1, 0.1, 2.0, 2.0).unwrap();
        assert_eq!(
            v,
            PMatchBound {
                value: 0.0,
                vacuous: true
            }
        );
        let mut last = 0.0;
        for k in 1..30 {
            let b = pmatch_lower_bound(100, 0.1 + k as f64 * 0.01, 0.1, 2.0, 2.0).unwrap();
            assert!(b.value >= last);
            last = b.value;
        }
        assert!(pmatch_lower_bound(100, 0.3, 0.1, 0.0, 2.0).is_err());
    }

    #[test]
    fn g_examples() {
        assert!((g_function(0.0, 0.5, 0.1, 100) - 3.167025524547488e-5).abs() < TOL);
        let far = g_function(0.0, 1.0, 0.1, 100);
        assert!((far / 1.128588404043181e-19 - 1.0).abs() < 1e-9);
        assert!(g_function(0.0, 0.5, 0.1, 100) > far);
        let peak = g_function(0.0, 0.0, 0.1, 100);
        assert!((peak - (2.0 * normal_cdf(1.0) - 1.0)).abs() < 1e-15);
        assert!((peak - 0.6826894921370859).abs() < TOL);
    }

    #[test]
    fn g_reflection_symmetry() {
        for &theta in &[-1.0, 0.0, 0.7] {
            for k in 0..40 {
                let ts = theta - 2.0 + 0.1 * k as f64;
                let a = g_function(theta, ts, 0.2, 100);
                let b = g_function(theta, 2.0 * theta - ts, 0.2, 100);
                assert!(
                    (a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-300,
                    "{a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn location_discrepancy() {
        assert_eq!(normal_location_discrepancy(0.0, 1.0), 0.0);
        // 2 Phi(0.25) - 1
        assert!((normal_location_discrepancy(0.5, 1.0) - 0.19741265136584).abs() < 1e-12);
        assert_eq!(
            normal_location_discrepancy(-0.5, 1.0),
            normal_location_discrepancy(0.5, 1.0)
        );
    }
}
