//! Scalar denoisers for both sides of the message-passing iteration.
//!
//! Output-side denoisers take `(p̂, ν^p)` and input-side denoisers take
//! `(r̂, ν^r)`; both return the estimate and its derivative with respect to
//! the first argument. MAP denoisers are proximal operators of a penalty,
//! MMSE denoisers are posterior means under a Gaussian-corrupted observation.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::quadrature::integrate;

/// Estimation flavor of a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Map,
    Mmse,
    /// MAP and MMSE coincide (Gaussian-conjugate or trivial priors).
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserEval {
    pub value: f64,
    pub derivative: f64,
}

impl DenoiserEval {
    pub fn new(value: f64, derivative: f64) -> Self {
        Self { value, derivative }
    }
}

/// A scalar denoiser applied elementwise over a contiguous block of indices.
///
/// `index` is the position within the block; only denoisers that carry
/// per-element data (measurements) look at it.
pub trait ScalarDenoiser: Send + Sync + fmt::Debug {
    fn denoise(&self, index: usize, mean: f64, var: f64) -> DenoiserEval;

    fn flavor(&self) -> Flavor;

    /// The penalty `-ln p(value)` up to a constant, if it is a proper
    /// function. `None` for priors with point masses or without a closed form.
    fn penalty(&self, _index: usize, _value: f64) -> Option<f64> {
        None
    }

    /// Prior variance, when the penalty corresponds to a proper prior.
    fn prior_variance(&self) -> Option<f64> {
        None
    }
}

fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnipeParams {
    pub omega: f64,
}

/// The SNIPE shrinkage `q̂ / (1 + exp(ω - q̂²/(2ν)))` and its derivative
/// `s (1 + (q̂²/ν)(1 - s))` with `s = 1 / (1 + exp(ω - q̂²/(2ν)))`.
pub fn snipe(q_hat: f64, nu_q: f64, params: SnipeParams) -> DenoiserEval {
    let ratio = q_hat * q_hat / nu_q;
    let a = params.omega - 0.5 * ratio;
    let s = logistic(-a);
    let one_minus_s = logistic(a);
    DenoiserEval::new(q_hat * s, s * (1.0 + ratio * one_minus_s))
}

/// Posterior mean of `u` under the spike-and-slab prior
/// `β p₀(u/σ)/σ + (1-β) δ(u)` with a standard-normal slab `p₀` and
/// `β = σ / (σ + p₀(0) √(2πν) e^ω)`, evaluated by quadrature at finite `σ`.
/// As `σ → ∞` it converges to [`snipe`].
pub fn snipe_from_slab_limit(q_hat: f64, nu_q: f64, omega: f64, sigma: f64) -> Result<f64> {
    if !(nu_q > 0.0 && sigma > 0.0) {
        return Err(invalid("snipe slab oracle needs positive nu and sigma"));
    }
    if q_hat == 0.0 {
        // symmetric prior and likelihood
        return Ok(0.0);
    }
    let p0_at_zero = 1.0 / (2.0 * PI).sqrt();
    let beta = sigma / (sigma + p0_at_zero * (2.0 * PI * nu_q).sqrt() * omega.exp());
    // Point mass relative to the continuous density p₀(u/σ).
    let atom = sigma * (1.0 - beta) / beta;
    let slab_penalty = move |u: f64| {
        let t = u / sigma;
        0.5 * t * t + 0.5 * (2.0 * PI).ln()
    };
    let prior = QuadraturePrior::new(&slab_penalty).with_atom(0.0, atom);
    Ok(quadrature_mmse_with(&prior, q_hat, nu_q)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliGaussianParams {
    pub beta: f64,
    pub sigma_sq: f64,
}

impl BernoulliGaussianParams {
    pub fn new(beta: f64, sigma_sq: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("Bernoulli-Gaussian beta must lie in (0, 1]"));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(invalid("Bernoulli-Gaussian slab variance must be positive"));
        }
        Ok(Self { beta, sigma_sq })
    }
}

/// Posterior mean under `(1-β) δ(x) + β N(x; 0, σ²)` from `r̂ ~ N(x, ν)`.
pub fn bernoulli_gaussian_mmse(r_hat: f64, nu_r: f64, params: BernoulliGaussianParams) -> DenoiserEval {
    let BernoulliGaussianParams { beta, sigma_sq } = params;
    let total = sigma_sq + nu_r;
    // log of [(1-β) N(r; 0, ν)] / [β N(r; 0, σ²+ν)]
    let log_odds_zero =
        ((1.0 - beta) / beta).ln() + 0.5 * (total / nu_r).ln() - 0.5 * r_hat * r_hat * (1.0 / nu_r - 1.0 / total);
    let active = logistic(-log_odds_zero);
    let gain = sigma_sq / total;
    let slab_mean = r_hat * gain;
    let slab_var = nu_r * gain;
    let value = active * slab_mean;
    let second = active * (slab_mean * slab_mean + slab_var);
    let posterior_var = (second - value * value).max(0.0);
    DenoiserEval::new(value, posterior_var / nu_r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwgnChannelParams {
    pub y: f64,
    pub noise_var: f64,
}

/// Posterior mean of `z ~ N(p̂, ν^p)` given `y = z + N(0, σ_w²)`; also the
/// proximal operator of `(y - z)²/(2σ_w²)`.
pub fn awgn_output_mmse(p_hat: f64, nu_p: f64, params: AwgnChannelParams) -> DenoiserEval {
    let total = nu_p + params.noise_var;
    let value = p_hat + nu_p / total * (params.y - p_hat);
    DenoiserEval::new(value, params.noise_var / total)
}

/// Proximal operator of `λ|x|` with step `ν`.
pub fn soft_threshold_map(r_hat: f64, nu_r: f64, lambda: f64) -> DenoiserEval {
    let threshold = lambda * nu_r;
    if r_hat.abs() > threshold {
        DenoiserEval::new(r_hat - threshold * r_hat.signum(), 1.0)
    } else {
        DenoiserEval::new(0.0, 0.0)
    }
}

/// Projection onto `[0, ∞)`. The boundary `r̂ = 0` counts as clipped.
pub fn nonneg_map(r_hat: f64, _nu_r: f64) -> DenoiserEval {
    if r_hat > 0.0 {
        DenoiserEval::new(r_hat, 1.0)
    } else {
        DenoiserEval::new(0.0, 0.0)
    }
}

/// `Φc(α) / φ(α)` for large `α` via its continued fraction.
fn mills_ratio_cf(alpha: f64) -> f64 {
    // Modified Lentz on R = 1/(α + 1/(α + 2/(α + 3/(α + ...))))
    let tiny = 1e-300;
    let mut f = alpha;
    let mut c = alpha;
    let mut d = 0.0;
    for k in 1..2000 {
        let a = k as f64;
        d = alpha + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = alpha + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Inverse Mills ratio `φ(α) / Φc(α)`.
fn inverse_mills(alpha: f64) -> f64 {
    if alpha < 5.0 {
        let pdf = (-0.5 * alpha * alpha).exp() / (2.0 * PI).sqrt();
        let tail = 0.5 * libm::erfc(alpha / std::f64::consts::SQRT_2);
        pdf / tail
    } else {
        1.0 / mills_ratio_cf(alpha)
    }
}

/// Mean of `N(r̂, ν)` truncated to `[0, ∞)` and its derivative in `r̂`.
pub fn nonneg_mmse(r_hat: f64, nu_r: f64) -> DenoiserEval {
    let sd = nu_r.sqrt();
    let alpha = -r_hat / sd;
    let lambda = inverse_mills(alpha);
    let gap = lambda - alpha;
    let value = (sd * gap).max(0.0);
    // 1 + αλ - λ² written around λ - α to limit cancellation.
    let derivative = (1.0 - alpha * gap - gap * gap).clamp(0.0, 1.0);
    DenoiserEval::new(value, derivative)
}

/// A prior for the quadrature oracle: continuous density `exp(-penalty)`
/// plus optional point masses, with known kinks as breakpoints.
pub struct QuadraturePrior<'a> {
    penalty: &'a dyn Fn(f64) -> f64,
    atoms: Vec<(f64, f64)>,
    breakpoints: Vec<f64>,
}

impl<'a> QuadraturePrior<'a> {
    pub fn new(penalty: &'a dyn Fn(f64) -> f64) -> Self {
        Self {
            penalty,
            atoms: Vec::new(),
            breakpoints: Vec::new(),
        }
    }

    /// Adds `mass · δ(x - location)` on the same scale as `exp(-penalty)`.
    pub fn with_atom(mut self, location: f64, mass: f64) -> Self {
        self.atoms.push((location, mass));
        self.breakpoints.push(location);
        self
    }

    pub fn with_breakpoint(mut self, x: f64) -> Self {
        self.breakpoints.push(x);
        self
    }
}

const QUAD_HALF_WIDTH: f64 = 12.0;
const QUAD_TOL: f64 = 1e-12;

/// Posterior mean and its derivative (posterior variance over `variance`)
/// for `x ~ exp(-penalty(x))` observed as `center ~ N(x, variance)`, by
/// adaptive quadrature over `center ± 12 √variance`.
pub fn quadrature_mmse(penalty: impl Fn(f64) -> f64, center: f64, variance: f64) -> Result<DenoiserEval> {
    quadrature_mmse_with(&QuadraturePrior::new(&penalty), center, variance)
}

pub fn quadrature_mmse_with(prior: &QuadraturePrior<'_>, center: f64, variance: f64) -> Result<DenoiserEval> {
    if !(variance > 0.0 && variance.is_finite() && center.is_finite()) {
        return Err(invalid("quadrature needs finite center and positive variance"));
    }
    let sd = variance.sqrt();
    let lo = center - QUAD_HALF_WIDTH * sd;
    let hi = center + QUAD_HALF_WIDTH * sd;
    let log_weight = |x: f64| -(prior.penalty)(x) - 0.5 * (x - center) * (x - center) / variance;

    // Shift so the largest sampled weight is O(1).
    let mut shift = f64::NEG_INFINITY;
    for j in 0..=400 {
        let x = lo + (hi - lo) * j as f64 / 400.0;
        shift = shift.max(log_weight(x));
    }
    for &(loc, mass) in &prior.atoms {
        if mass > 0.0 {
            let d = loc - center;
            shift = shift.max(mass.ln() - 0.5 * d * d / variance);
        }
    }
    if !shift.is_finite() {
        return Err(Error::NumericFailure(
            "prior has no mass near the observation".to_string(),
        ));
    }

    let integrand = |x: f64| {
        let w = (log_weight(x) - shift).exp();
        let d = x - center;
        [w, d * w, d * d * w]
    };
    let abs = [QUAD_TOL * sd, QUAD_TOL * variance, QUAD_TOL * variance * sd];
    let r = integrate(integrand, lo, hi, &prior.breakpoints, abs, QUAD_TOL, 4000)?;
    let mut moments = r.value;
    for &(loc, mass) in &prior.atoms {
        let d = loc - center;
        let w = (mass.ln() - 0.5 * d * d / variance - shift).exp();
        moments[0] += w;
        moments[1] += d * w;
        moments[2] += d * d * w;
    }
    if !(moments[0] > 0.0) {
        return Err(Error::NumericFailure("zero posterior mass".to_string()));
    }
    let offset = moments[1] / moments[0];
    let var = (moments[2] / moments[0] - offset * offset).max(0.0);
    Ok(DenoiserEval::new(center + offset, var / variance))
}

/// Quadratic-loss output channel with one measurement per row.
#[derive(Debug, Clone)]
pub struct AwgnOutput {
    pub y: Vec<f64>,
    pub noise_var: f64,
}

impl ScalarDenoiser for AwgnOutput {
    fn denoise(&self, index: usize, mean: f64, var: f64) -> DenoiserEval {
        awgn_output_mmse(
            mean,
            var,
            AwgnChannelParams {
                y: self.y[index],
                noise_var: self.noise_var,
            },
        )
    }
    fn flavor(&self) -> Flavor {
        Flavor::Both
    }
    fn penalty(&self, index: usize, value: f64) -> Option<f64> {
        let r = self.y[index] - value;
        Some(0.5 * r * r / self.noise_var)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Snipe(pub SnipeParams);

impl ScalarDenoiser for Snipe {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        snipe(mean, var, self.0)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Mmse
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SoftThreshold {
    pub lambda: f64,
}

impl ScalarDenoiser for SoftThreshold {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        soft_threshold_map(mean, var, self.lambda)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Map
    }
    fn penalty(&self, _index: usize, value: f64) -> Option<f64> {
        Some(self.lambda * value.abs())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BernoulliGaussian(pub BernoulliGaussianParams);

impl ScalarDenoiser for BernoulliGaussian {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        bernoulli_gaussian_mmse(mean, var, self.0)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Mmse
    }
    fn prior_variance(&self) -> Option<f64> {
        Some(self.0.beta * self.0.sigma_sq)
    }
}

fn nonneg_penalty(value: f64) -> f64 {
    if value >= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NonnegMap;

impl ScalarDenoiser for NonnegMap {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        nonneg_map(mean, var)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Map
    }
    fn penalty(&self, _index: usize, value: f64) -> Option<f64> {
        Some(nonneg_penalty(value))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NonnegMmse;

impl ScalarDenoiser for NonnegMmse {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        nonneg_mmse(mean, var)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Mmse
    }
    fn penalty(&self, _index: usize, value: f64) -> Option<f64> {
        Some(nonneg_penalty(value))
    }
}

/// Trivial prior: `G(r̂) = r̂`, `G' = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl ScalarDenoiser for Identity {
    fn denoise(&self, _index: usize, mean: f64, _var: f64) -> DenoiserEval {
        DenoiserEval::new(mean, 1.0)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Both
    }
    fn penalty(&self, _index: usize, _value: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// Forces the estimate to zero.
#[derive(Debug, Clone, Copy)]
pub struct FixedZero;

impl ScalarDenoiser for FixedZero {
    fn denoise(&self, _index: usize, _mean: f64, _var: f64) -> DenoiserEval {
        DenoiserEval::new(0.0, 0.0)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Both
    }
    fn penalty(&self, _index: usize, value: f64) -> Option<f64> {
        Some(if value == 0.0 { 0.0 } else { f64::INFINITY })
    }
}

/// Gaussian prior `N(mean, var)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPrior {
    pub mean: f64,
    pub var: f64,
}

impl ScalarDenoiser for GaussianPrior {
    fn denoise(&self, _index: usize, mean: f64, var: f64) -> DenoiserEval {
        let total = self.var + var;
        DenoiserEval::new((mean * self.var + self.mean * var) / total, self.var / total)
    }
    fn flavor(&self) -> Flavor {
        Flavor::Both
    }
    fn penalty(&self, _index: usize, value: f64) -> Option<f64> {
        let d = value - self.mean;
        Some(0.5 * d * d / self.var)
    }
    fn prior_variance(&self) -> Option<f64> {
        Some(self.var)
    }
}
