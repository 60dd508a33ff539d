use anyhow::Result;
use clap::{Args, Subcommand};
use durm::theory::{
    durm_variance, gaussian_product_params, normal, prob_min_ge, product_first_moment, GradientMixture,
    Method, OrderStatsSpec, DEFAULT_QUADRATURE_BUDGET,
};

/// Relative slack allowed on the variance identity (a few ulps).
const VARIANCE_TOL: f64 = 4.0 * f64::EPSILON;
const SYMMETRY_TOL: f64 = 1e-8;
const EXCESS_TOL: f64 = 1e-6;
const MC_AGREEMENT: f64 = 0.005;
const PRODUCT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Subcommand)]
pub enum TheoryCommand {
    /// Variance of the logit-gradient mixture with and without dummy classes.
    Variance(VarianceArgs),
    /// Probability that the DuRM minimum gradient is at least the ERM one.
    OrderStats(OrderStatsArgs),
    /// Product of two Gaussian densities as a scaled Gaussian.
    Product(ProductArgs),
}

#[derive(Debug, Clone, Args)]
pub struct VarianceArgs {
    /// Weight of the negative component.
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mun: f64,
    #[arg(long)]
    pub sn: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mup: f64,
    #[arg(long)]
    pub sp: f64,
    #[arg(long)]
    pub sd: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OrderStatsArgs {
    /// ERM gradient standard deviation.
    #[arg(long)]
    pub s1: f64,
    /// DuRM gradient standard deviation.
    #[arg(long)]
    pub s2: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu2: f64,
    /// Number of steps.
    #[arg(long = "T", alias = "steps")]
    pub steps: u32,
    /// Monte Carlo replicas (0 skips the Monte Carlo estimate).
    #[arg(long, default_value_t = 0)]
    pub mc: usize,
    #[arg(long, env = "DURM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ProductArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu1: f64,
    #[arg(long)]
    pub s1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu2: f64,
    #[arg(long)]
    pub s2: f64,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn run(cmd: &TheoryCommand) -> Result<bool> {
    match cmd {
        TheoryCommand::Variance(a) => variance(a),
        TheoryCommand::OrderStats(a) => order_stats(a),
        TheoryCommand::Product(a) => product(a),
    }
}

fn variance(a: &VarianceArgs) -> Result<bool> {
    let m = GradientMixture::new(a.alpha, a.mun, a.sn, a.mup, a.sp, a.sd)?;
    let v = durm_variance(&m);
    let s2 = a.sd * a.sd;
    let diff = v.var_durm - v.var_erm;
    let ok = (diff - s2).abs() <= VARIANCE_TOL * v.var_durm.max(s2);
    println!("var_erm={}", v.var_erm);
    println!("var_durm={}", v.var_durm);
    println!("var_durm-var_erm={diff} sigma_d^2={s2}");
    println!("{}", verdict(ok));
    Ok(ok)
}

fn order_stats(a: &OrderStatsArgs) -> Result<bool> {
    let erm = OrderStatsSpec::new(a.mu1, a.s1, a.steps)?;
    let durm = OrderStatsSpec::new(a.mu2, a.s2, a.steps)?;
    let q = prob_min_ge(&erm, &durm, Method::Quadrature, DEFAULT_QUADRATURE_BUDGET, a.seed)?;
    println!("quadrature={:.12} residual={:.2e}", q.value, q.uncertainty);
    let mut ok = if a.mu1 != a.mu2 {
        println!("bound: none checked (means differ)");
        true
    } else if a.s1 == a.s2 {
        println!("bound: p = 0.5 within {SYMMETRY_TOL:e}");
        (q.value - 0.5).abs() <= SYMMETRY_TOL
    } else if a.s1 < a.s2 {
        println!("bound: p >= 0.5 (sigma1 < sigma2)");
        q.value >= 0.5 - EXCESS_TOL
    } else {
        println!("bound: p <= 0.5 (sigma1 > sigma2)");
        q.value <= 0.5 + EXCESS_TOL
    };
    if a.mc > 0 {
        let mc = prob_min_ge(&erm, &durm, Method::MonteCarlo, a.mc, a.seed)?;
        println!(
            "monte_carlo={:.6} stderr={:.2e} replicas={}",
            mc.value, mc.uncertainty, mc.budget_used
        );
        let gap = (q.value - mc.value).abs();
        println!("|quadrature - monte_carlo|={gap:.2e} (tolerance {MC_AGREEMENT})");
        ok &= gap < MC_AGREEMENT;
    }
    println!("{}", verdict(ok));
    Ok(ok)
}

fn product(a: &ProductArgs) -> Result<bool> {
    let p = gaussian_product_params(a.mu1, a.s1, a.mu2, a.s2)?;
    println!("mean={} var={} scale={}", p.mean, p.var, p.scale);
    let lo = a.mu1.min(a.mu2) - 8.0 * a.s1.max(a.s2);
    let hi = a.mu1.max(a.mu2) + 8.0 * a.s1.max(a.s2);
    let worst = (0..=1000)
        .map(|i| {
            let g = lo + (hi - lo) * i as f64 / 1000.0;
            (p.eval(g) - normal::pdf(g, a.mu1, a.s1) * normal::pdf(g, a.mu2, a.s2)).abs()
        })
        .fold(0.0, f64::max);
    let moment = product_first_moment(a.mu1, a.s1, a.mu2, a.s2)?;
    let closed = p.scale * p.mean;
    println!("max_pointwise_error={worst:.2e}");
    println!("first_moment quadrature={moment:.6e} closed_form={closed:.6e}");
    let ok = worst <= PRODUCT_TOL && (moment - closed).abs() <= PRODUCT_TOL;
    println!("{}", verdict(ok));
    Ok(ok)
}
