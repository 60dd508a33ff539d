//! Minimum order statistic of `T` i.i.d. Gaussian gradients and the
//! probability that the ERM minimum is not below the DuRM minimum.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normal;
use super::quadrature::{integrate, QuadOptions};
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, Stream};

/// Residual above which a quadrature result is reported as non-convergent.
pub const QUADRATURE_RESIDUAL_LIMIT: f64 = 1e-8;
/// Half-width of the integration window, in standard deviations.
pub const WINDOW_SIGMAS: f64 = 12.0;
const MC_CHUNK: usize = 4096;

/// `g ~ N(mu, sigma^2)` sampled `steps` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStatsSpec {
    pub mu: f64,
    pub sigma: f64,
    pub steps: u32,
}

impl OrderStatsSpec {
    pub fn new(mu: f64, sigma: f64, steps: u32) -> Result<Self> {
        let s = Self { mu, sigma, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need finite mu and positive sigma, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        Ok(())
    }

    /// `ln P(g > x)`.
    fn ln_sf(&self, x: f64) -> f64 {
        normal::sf(x, self.mu, self.sigma).ln()
    }
}

/// `n * ln_s` with `0 * (-inf)` taken as 0.
#[inline]
fn scaled_log(n: u32, ln_s: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        f64::from(n) * ln_s
    }
}

/// Density of the minimum: `T [1 - F(g)]^(T-1) f(g)`, evaluated in log space.
pub fn min_order_pdf(spec: &OrderStatsSpec, g: f64) -> f64 {
    let t = spec.steps;
    let ln = f64::from(t).ln()
        + scaled_log(t - 1, spec.ln_sf(g))
        + normal::ln_pdf(g, spec.mu, spec.sigma);
    ln.exp()
}

/// Distribution of the minimum: `1 - [1 - F(g)]^T`.
pub fn min_order_cdf(spec: &OrderStatsSpec, g: f64) -> f64 {
    -scaled_log(spec.steps, spec.ln_sf(g)).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub method: Method,
    pub value: f64,
    /// Quadrature: summed error estimate. Monte Carlo: standard error.
    pub uncertainty: f64,
    /// Integrand evaluations or replicas used.
    pub budget_used: usize,
}

/// `P(g_(1) >= g_hat_(1))` for the minima of `T` draws from `erm` and `durm`.
///
/// `budget` is the integrand-evaluation cap for quadrature and the replica
/// count for Monte Carlo. Monte Carlo splits replicas into fixed chunks, each
/// with its own seeded stream, so the result does not depend on the thread
/// count.
pub fn prob_min_ge(
    erm: &OrderStatsSpec,
    durm: &OrderStatsSpec,
    method: Method,
    budget: usize,
    seed: u64,
) -> Result<ProbEstimate> {
    erm.validate()?;
    durm.validate()?;
    if erm.steps != durm.steps {
        return Err(Error::InvalidConfig(format!(
            "step counts differ: {} vs {}",
            erm.steps, durm.steps
        )));
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("budget must be positive".into()));
    }
    match method {
        Method::Quadrature => by_quadrature(erm, durm, budget),
        Method::MonteCarlo => Ok(by_monte_carlo(erm, durm, budget, seed)),
    }
}

// T * integral of [1 - F_g(x)]^T [1 - F_ghat(x)]^(T-1) f_ghat(x) dx
fn by_quadrature(erm: &OrderStatsSpec, durm: &OrderStatsSpec, budget: usize) -> Result<ProbEstimate> {
    let t = erm.steps;
    let smax = erm.sigma.max(durm.sigma);
    let lo = erm.mu.min(durm.mu) - WINDOW_SIGMAS * smax;
    let hi = erm.mu.max(durm.mu) + WINDOW_SIGMAS * smax;
    let ln_t = f64::from(t).ln();
    let integrand = |x: f64| {
        let ln = ln_t
            + scaled_log(t, erm.ln_sf(x))
            + scaled_log(t - 1, durm.ln_sf(x))
            + normal::ln_pdf(x, durm.mu, durm.sigma);
        ln.exp()
    };
    let opts = QuadOptions {
        max_evaluations: budget,
        ..QuadOptions::default()
    };
    let r = integrate(integrand, lo, hi, &opts);
    if r.residual > QUADRATURE_RESIDUAL_LIMIT {
        return Err(Error::Quadrature {
            residual: r.residual,
            tolerance: QUADRATURE_RESIDUAL_LIMIT,
        });
    }
    Ok(ProbEstimate {
        method: Method::Quadrature,
        value: r.value,
        uncertainty: r.residual,
        budget_used: r.evaluations,
    })
}

fn by_monte_carlo(erm: &OrderStatsSpec, durm: &OrderStatsSpec, replicas: usize, seed: u64) -> ProbEstimate {
    let chunks = replicas.div_ceil(MC_CHUNK);
    let erm_dist = Normal::new(erm.mu, erm.sigma).expect("validated");
    let durm_dist = Normal::new(durm.mu, durm.sigma).expect("validated");
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = indexed_stream(seed, Stream::MonteCarlo, c as u64);
            let n = MC_CHUNK.min(replicas - c * MC_CHUNK);
            let mut hits = 0u64;
            for _ in 0..n {
                let mut g_min = f64::INFINITY;
                for _ in 0..erm.steps {
                    g_min = g_min.min(erm_dist.sample(&mut rng));
                }
                let mut h_min = f64::INFINITY;
                for _ in 0..durm.steps {
                    h_min = h_min.min(durm_dist.sample(&mut rng));
                }
                // ties count toward the >= event
                if g_min >= h_min {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / replicas as f64;
    ProbEstimate {
        method: Method::MonteCarlo,
        value: p,
        uncertainty: (p * (1.0 - p) / replicas as f64).sqrt(),
        budget_used: replicas,
    }
}

/// Default quadrature budget (integrand evaluations).
pub const DEFAULT_QUADRATURE_BUDGET: usize = 15 * 20_000;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(mu: f64, sigma: f64, t: u32) -> OrderStatsSpec {
        OrderStatsSpec::new(mu, sigma, t).unwrap()
    }

    fn quad(a: &OrderStatsSpec, b: &OrderStatsSpec) -> f64 {
        prob_min_ge(a, b, Method::Quadrature, DEFAULT_QUADRATURE_BUDGET, 0)
            .unwrap()
            .value
    }

    #[test]
    fn single_step_is_the_base_density() {
        let s = spec(0.3, 1.7, 1);
        for g in [-4.0, -1.0, 0.3, 2.5] {
            assert!((min_order_pdf(&s, g) - normal::pdf(g, 0.3, 1.7)).abs() < 1e-15);
            assert!((min_order_cdf(&s, g) - normal::cdf(g, 0.3, 1.7)).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_at_the_mean() {
        let s = spec(1.5, 0.4, 10);
        let want = 1.0 - 2f64.powi(-10);
        assert!((min_order_cdf(&s, 1.5) - want).abs() < 1e-15);
        assert!((want - 0.999_023).abs() < 1e-6);
    }

    #[test]
    fn pdf_integrates_to_one() {
        for t in [1, 10, 100, 1000, 10_000] {
            let s = spec(-0.5, 2.0, t);
            let r = integrate(
                |g| min_order_pdf(&s, g),
                -0.5 - 20.0,
                -0.5 + 20.0,
                &QuadOptions::default(),
            );
            assert!((r.value - 1.0).abs() < 1e-6, "T={t}: {}", r.value);
        }
    }

    #[test]
    fn identical_specs_give_one_half() {
        for t in [1, 10, 100, 1000, 10_000] {
            let s = spec(0.0, 1.0, t);
            assert!((quad(&s, &s) - 0.5).abs() < 1e-8, "T={t}");
        }
    }

    #[test]
    fn narrower_erm_distribution_wins() {
        // 0.998140178962666 from 40-digit quadrature
        let p = quad(&spec(0.0, 0.5, 100), &spec(0.0, 1.0, 100));
        assert!((p - 0.998_140_178_962_666).abs() < 1e-9, "{p}");
        let p = quad(&spec(0.0, 0.9, 10), &spec(0.0, 1.0, 10));
        assert!((p - 0.576_063_817_379_073).abs() < 1e-9, "{p}");
    }

    #[test]
    fn monotone_in_erm_sigma() {
        let durm = spec(0.0, 1.0, 100);
        let mut last = f64::INFINITY;
        for s1 in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let p = quad(&spec(0.0, s1, 100), &durm);
            assert!(p <= last + 1e-12, "sigma1={s1}: {p} > {last}");
            last = p;
        }
    }

    #[test]
    fn monte_carlo_agrees_and_is_reproducible() {
        let a = spec(0.0, 1.0, 20);
        let mc = prob_min_ge(&a, &a, Method::MonteCarlo, 50_000, 3).unwrap();
        assert!((mc.value - 0.5).abs() < 3.0 * mc.uncertainty.max(1e-3));
        let again = prob_min_ge(&a, &a, Method::MonteCarlo, 50_000, 3).unwrap();
        assert_eq!(mc, again);

        let b = spec(0.0, 0.8, 20);
        let c = spec(0.0, 1.0, 20);
        let q = quad(&b, &c);
        let mc = prob_min_ge(&b, &c, Method::MonteCarlo, 50_000, 4).unwrap();
        assert!((q - mc.value).abs() < 4.0 * mc.uncertainty, "{q} vs {}", mc.value);
    }

    #[test]
    fn argument_errors() {
        let a = spec(0.0, 1.0, 10);
        let b = spec(0.0, 1.0, 11);
        assert!(prob_min_ge(&a, &b, Method::Quadrature, 1000, 0).is_err());
        assert!(prob_min_ge(&a, &a, Method::MonteCarlo, 0, 0).is_err());
        assert!(OrderStatsSpec::new(0.0, 0.0, 1).is_err());
        assert!(OrderStatsSpec::new(0.0, 1.0, 0).is_err());
        let err = prob_min_ge(&a, &spec(0.0, 0.3, 10), Method::Quadrature, 45, 0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cdf_is_integral_of_pdf(
            mu in -2.0f64..2.0,
            sigma in 0.2f64..3.0,
            t in 1u32..2000,
            a in -3.0f64..3.0,
            w in 0.0f64..3.0,
        ) {
            let s = spec(mu, sigma, t);
            let (lo, hi) = (mu + sigma * a - sigma * w, mu + sigma * a);
            let r = integrate(|g| min_order_pdf(&s, g), lo, hi, &QuadOptions { initial_panels: 16, ..QuadOptions::default() });
            let diff = min_order_cdf(&s, hi) - min_order_cdf(&s, lo);
            prop_assert!((diff - r.value).abs() < 1e-8, "{} vs {}", diff, r.value);
        }

        #[test]
        fn identical_specs_any_t(mu in -3.0f64..3.0, sigma in 0.1f64..5.0, t in 1u32..=10_000) {
            let s = spec(mu, sigma, t);
            prop_assert!((quad(&s, &s) - 0.5).abs() < 1e-8);
        }
    }
}
