//! The two-component Gaussian model of per-class logit gradients, its
//! dummy-perturbed variant and the Gaussian-product identity used to show the
//! perturbation is uncorrelated with the gradient.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::normal;
use super::quadrature::{integrate, QuadOptions};
use crate::error::{Error, Result};

/// `alpha * N(-mu_n, sigma_n^2) + (1 - alpha) * N(1 - mu_p, sigma_p^2)`, plus
/// an independent zero-mean dummy perturbation with std `sigma_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientMixture {
    pub alpha: f64,
    pub mu_n: f64,
    pub sigma_n: f64,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub sigma_d: f64,
}

impl GradientMixture {
    pub fn new(alpha: f64, mu_n: f64, sigma_n: f64, mu_p: f64, sigma_p: f64, sigma_d: f64) -> Result<Self> {
        let m = Self {
            alpha,
            mu_n,
            sigma_n,
            mu_p,
            sigma_p,
            sigma_d,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.mu_n, self.sigma_n, self.mu_p, self.sigma_p, self.sigma_d]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("mixture parameters must be finite".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.sigma_n > 0.0 && self.sigma_p > 0.0) {
            return Err(Error::InvalidConfig("sigma_n and sigma_p must be positive".into()));
        }
        if self.sigma_d < 0.0 {
            return Err(Error::InvalidConfig("sigma_d must be non-negative".into()));
        }
        Ok(())
    }

    /// Density of the ERM gradient.
    pub fn pdf(&self, g: f64) -> f64 {
        self.alpha * normal::pdf(g, -self.mu_n, self.sigma_n)
            + (1.0 - self.alpha) * normal::pdf(g, 1.0 - self.mu_p, self.sigma_p)
    }

    /// Density of the DuRM gradient `g + g_d`: each component convolved
    /// with `N(0, sigma_d^2)`.
    pub fn durm_pdf(&self, g: f64) -> f64 {
        let sd2 = self.sigma_d * self.sigma_d;
        let sn = (self.sigma_n * self.sigma_n + sd2).sqrt();
        let sp = (self.sigma_p * self.sigma_p + sd2).sqrt();
        self.alpha * normal::pdf(g, -self.mu_n, sn)
            + (1.0 - self.alpha) * normal::pdf(g, 1.0 - self.mu_p, sp)
    }

    /// Closed-form mean, shared by the ERM and DuRM gradients.
    pub fn mean(&self) -> f64 {
        self.alpha * (-self.mu_n) + (1.0 - self.alpha) * (1.0 - self.mu_p)
    }
}

/// Density of the mixture at `g` (ERM form).
pub fn mixture_pdf(m: &GradientMixture, g: f64) -> f64 {
    m.pdf(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub var_erm: f64,
    pub var_durm: f64,
}

/// `var_erm = alpha^2 sigma_n^2 + (1 - alpha)^2 sigma_p^2`,
/// `var_durm = var_erm + sigma_d^2` (the cross terms vanish).
pub fn durm_variance(m: &GradientMixture) -> VariancePair {
    let a = m.alpha;
    let var_erm = a * a * m.sigma_n * m.sigma_n + (1.0 - a) * (1.0 - a) * m.sigma_p * m.sigma_p;
    VariancePair {
        var_erm,
        var_durm: var_erm + m.sigma_d * m.sigma_d,
    }
}

/// `f1(g) * f2(g) = scale * N(g; mean, var)` for Gaussian densities `f1`, `f2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProduct {
    pub mean: f64,
    pub var: f64,
    pub scale: f64,
}

pub fn gaussian_product_params(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<GaussianProduct> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::InvalidConfig("standard deviations must be positive".into()));
    }
    let v1 = s1 * s1;
    let v2 = s2 * s2;
    let mean = (mu1 * v2 + mu2 * v1) / (v1 + v2);
    let var = v1 * v2 / (v1 + v2);
    let d = mu1 - mu2;
    let scale = (-d * d / (2.0 * v1 + 2.0 * v2)).exp() / (2.0 * PI * s1 * s2) * (2.0 * PI * var).sqrt();
    Ok(GaussianProduct { mean, var, scale })
}

impl GaussianProduct {
    pub fn eval(&self, g: f64) -> f64 {
        self.scale * normal::pdf(g, self.mean, self.var.sqrt())
    }
}

/// `integral of g * f1(g) * f2(g) dg` by adaptive quadrature over
/// `+-12` standard deviations of the wider factor.
pub fn product_first_moment(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::InvalidConfig("standard deviations must be positive".into()));
    }
    let smax = s1.max(s2);
    let lo = mu1.min(mu2) - 12.0 * smax;
    let hi = mu1.max(mu2) + 12.0 * smax;
    let opts = QuadOptions {
        tolerance: 1e-13,
        ..QuadOptions::default()
    };
    let r = integrate(
        |g| g * normal::pdf(g, mu1, s1) * normal::pdf(g, mu2, s2),
        lo,
        hi,
        &opts,
    );
    Ok(r.value)
}
