//! Closed-form and numerical checks of the gradient-variance and
//! order-statistic arguments.

pub mod mixture;
pub mod normal;
pub mod order_stats;
pub mod quadrature;

pub use mixture::{
    durm_variance, gaussian_product_params, mixture_pdf, product_first_moment, GaussianProduct,
    GradientMixture, VariancePair,
};
pub use order_stats::{
    min_order_cdf, min_order_pdf, prob_min_ge, Method, OrderStatsSpec, ProbEstimate,
    DEFAULT_QUADRATURE_BUDGET,
};
pub use quadrature::{integrate, QuadOptions, QuadResult};
