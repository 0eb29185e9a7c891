//! Damped generalized approximate message passing.
//!
//! One iteration `t` performs, with `β = 1` at `t = 1` and `β = β₀` after:
//!
//! ```text
//! ν^p = β |A|² ν^x + (1-β) ν^p_prev
//! p̂   = A x̂ - ν^p ∘ ŝ_prev
//! ẑ, ν^z = F(p̂, ν^p), ν^p F'(p̂, ν^p)
//! ν^s = β (1 - ν^z/ν^p) / ν^p + (1-β) ν^s_prev
//! ŝ   = β (ẑ - p̂) / ν^p + (1-β) ŝ_prev
//! x̃   = β x̂ + (1-β) x̃_prev
//! ν^r = β / (|A|²ᵀ ν^s) + (1-β) ν^r_prev
//! r̂   = x̃ + ν^r ∘ Aᵀ ŝ
//! x̂', ν^x' = G(r̂, ν^r), ν^r G'(r̂, ν^r)
//! ```
//!
//! and stops once `‖x̂ - x̂'‖ / ‖x̂'‖ < ε` or `t = T_max`. Variances are clamped
//! into `[floor, ceiling]` after the ν^p, ν^s, ν^r and ν^x updates.

use std::sync::Arc;

use crate::denoisers::{Flavor, ScalarDenoiser};
use crate::error::{check_len, invalid, Error, Result};
use crate::linops::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Map,
    Mmse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GampConfig {
    /// Damping β₀ in (0, 1].
    pub beta0: f64,
    pub t_max: usize,
    /// Relative-change stop tolerance ε.
    pub eps: f64,
    /// Lower variance clamp, relative to the largest initial ν^x.
    pub variance_floor: f64,
    /// Upper variance clamp, relative to the largest initial ν^x.
    pub variance_ceiling: f64,
    pub mode: Mode,
    pub record_trace: bool,
}

impl Default for GampConfig {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            t_max: 500,
            eps: 1e-8,
            variance_floor: 1e-14,
            variance_ceiling: 1e14,
            mode: Mode::Mmse,
            record_trace: false,
        }
    }
}

impl GampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(invalid("beta0 must lie in (0, 1]"));
        }
        if self.t_max == 0 {
            return Err(invalid("t_max must be at least 1"));
        }
        if !(self.eps >= 0.0) {
            return Err(invalid("eps must be nonnegative"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor < self.variance_ceiling) {
            return Err(invalid("need 0 < variance_floor < variance_ceiling"));
        }
        Ok(())
    }
}

/// A denoiser applied to a contiguous run of `len` indices.
#[derive(Debug, Clone)]
pub struct DenoiserBlock {
    pub len: usize,
    pub denoiser: Arc<dyn ScalarDenoiser>,
}

impl DenoiserBlock {
    pub fn new(len: usize, denoiser: impl ScalarDenoiser + 'static) -> Self {
        Self {
            len,
            denoiser: Arc::new(denoiser),
        }
    }
}

fn blocks_len(blocks: &[DenoiserBlock]) -> usize {
    blocks.iter().map(|b| b.len).sum()
}

/// Applies each block's denoiser to its slice of `(mean, var)`, writing
/// estimates to `value` and `var * derivative` to `out_var`.
fn apply_blocks(blocks: &[DenoiserBlock], mean: &[f64], var: &[f64], value: &mut [f64], out_var: &mut [f64]) {
    let mut start = 0;
    for block in blocks {
        let end = start + block.len;
        for (k, i) in (start..end).enumerate() {
            let e = block.denoiser.denoise(k, mean[i], var[i]);
            value[i] = e.value;
            out_var[i] = var[i] * e.derivative;
        }
        start = end;
    }
}

/// Every iterate of the algorithm.
///
/// `x_hat`/`nu_x` are the inputs of iteration `t`; the remaining vectors
/// hold the values produced by iteration `t - 1` (zero before the first).
#[derive(Debug, Clone, PartialEq)]
pub struct GampState {
    pub x_hat: Vec<f64>,
    pub nu_x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub nu_s: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub nu_p: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub nu_z: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub nu_r: Vec<f64>,
    pub t: usize,
}

impl GampState {
    fn is_finite(&self) -> bool {
        [
            &self.x_hat,
            &self.nu_x,
            &self.x_tilde,
            &self.s_hat,
            &self.nu_s,
            &self.p_hat,
            &self.nu_p,
            &self.z_hat,
            &self.nu_z,
            &self.r_hat,
            &self.nu_r,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Undamped candidates computed during one iteration, before blending with
/// the previous values.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCandidates {
    pub beta: f64,
    pub nu_p: Vec<f64>,
    pub nu_s: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub nu_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub beta: f64,
    pub relative_change: f64,
}

#[derive(Debug, Clone)]
pub struct GampResult {
    pub x_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Option<Vec<TraceEntry>>,
    pub state: GampState,
}

/// A configured solver instance bound to an operator and denoiser blocks.
#[derive(Debug)]
pub struct Gamp<'a> {
    op: &'a dyn LinearOperator,
    output: &'a [DenoiserBlock],
    input: &'a [DenoiserBlock],
    config: GampConfig,
    floor: f64,
    ceiling: f64,
}

impl<'a> Gamp<'a> {
    /// `nu_x_scale` is the largest initial ν^x; the clamps are relative to it.
    pub fn new(
        op: &'a dyn LinearOperator,
        output: &'a [DenoiserBlock],
        input: &'a [DenoiserBlock],
        config: GampConfig,
        nu_x_scale: f64,
    ) -> Result<Self> {
        config.validate()?;
        check_len(blocks_len(output), op.rows())?;
        check_len(blocks_len(input), op.cols())?;
        let wanted = match config.mode {
            Mode::Map => Flavor::Map,
            Mode::Mmse => Flavor::Mmse,
        };
        for block in output.iter().chain(input) {
            let flavor = block.denoiser.flavor();
            if flavor != Flavor::Both && flavor != wanted {
                return Err(invalid(format!(
                    "denoiser {:?} cannot run in {:?} mode",
                    block.denoiser, config.mode
                )));
            }
        }
        if !(nu_x_scale > 0.0 && nu_x_scale.is_finite()) {
            return Err(invalid("initial variances must be positive and finite"));
        }
        Ok(Self {
            op,
            output,
            input,
            floor: config.variance_floor * nu_x_scale,
            ceiling: config.variance_ceiling * nu_x_scale,
            config,
        })
    }

    pub fn config(&self) -> &GampConfig {
        &self.config
    }

    /// Absolute `(floor, ceiling)` variance clamps.
    pub fn variance_bounds(&self) -> (f64, f64) {
        (self.floor, self.ceiling)
    }

    pub fn initial_state(&self, init_x: &[f64], init_nu_x: &[f64]) -> Result<GampState> {
        let n = self.op.cols();
        let m = self.op.rows();
        check_len(init_x.len(), n)?;
        check_len(init_nu_x.len(), n)?;
        if init_nu_x.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("initial variances must be positive"));
        }
        Ok(GampState {
            x_hat: init_x.to_vec(),
            nu_x: init_nu_x.to_vec(),
            x_tilde: vec![0.0; n],
            s_hat: vec![0.0; m],
            nu_s: vec![0.0; m],
            p_hat: vec![0.0; m],
            nu_p: vec![0.0; m],
            z_hat: vec![0.0; m],
            nu_z: vec![0.0; m],
            r_hat: vec![0.0; n],
            nu_r: vec![0.0; n],
            t: 1,
        })
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.floor, self.ceiling)
    }

    /// One full sweep of iteration `state.t`.
    pub fn step(&self, state: &GampState) -> GampState {
        self.step_detailed(state).0
    }

    pub fn step_detailed(&self, state: &GampState) -> (GampState, StepCandidates) {
        let op = self.op;
        let (m, n) = (op.rows(), op.cols());
        let beta = if state.t == 1 { 1.0 } else { self.config.beta0 };
        let keep = 1.0 - beta;

        let mut cand_nu_p = vec![0.0; m];
        op.apply_squared_forward(&state.nu_x, &mut cand_nu_p);
        let nu_p: Vec<f64> = cand_nu_p
            .iter()
            .zip(&state.nu_p)
            .map(|(c, prev)| self.clamp(beta * c + keep * prev))
            .collect();

        let mut p_hat = vec![0.0; m];
        op.apply_forward(&state.x_hat, &mut p_hat);
        for i in 0..m {
            p_hat[i] -= nu_p[i] * state.s_hat[i];
        }

        let mut z_hat = vec![0.0; m];
        let mut nu_z = vec![0.0; m];
        apply_blocks(self.output, &p_hat, &nu_p, &mut z_hat, &mut nu_z);

        let mut cand_nu_s = vec![0.0; m];
        let mut cand_s_hat = vec![0.0; m];
        let mut nu_s = vec![0.0; m];
        let mut s_hat = vec![0.0; m];
        for i in 0..m {
            let shrink = 1.0 - nu_z[i] / nu_p[i];
            cand_nu_s[i] = if shrink < 0.0 { self.floor } else { shrink / nu_p[i] };
            nu_s[i] = self.clamp(beta * cand_nu_s[i] + keep * state.nu_s[i]);
            cand_s_hat[i] = (z_hat[i] - p_hat[i]) / nu_p[i];
            s_hat[i] = beta * cand_s_hat[i] + keep * state.s_hat[i];
        }

        let x_tilde: Vec<f64> = state
            .x_hat
            .iter()
            .zip(&state.x_tilde)
            .map(|(x, prev)| beta * x + keep * prev)
            .collect();

        let mut precision = vec![0.0; n];
        op.apply_squared_adjoint(&nu_s, &mut precision);
        let cand_nu_r: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
        let nu_r: Vec<f64> = cand_nu_r
            .iter()
            .zip(&state.nu_r)
            .map(|(c, prev)| self.clamp(beta * c + keep * prev))
            .collect();

        let mut back = vec![0.0; n];
        op.apply_adjoint(&s_hat, &mut back);
        let r_hat: Vec<f64> = (0..n).map(|j| x_tilde[j] + nu_r[j] * back[j]).collect();

        let mut x_next = vec![0.0; n];
        let mut nu_x_next = vec![0.0; n];
        apply_blocks(self.input, &r_hat, &nu_r, &mut x_next, &mut nu_x_next);
        for v in nu_x_next.iter_mut() {
            *v = self.clamp(*v);
        }

        let candidates = StepCandidates {
            beta,
            nu_p: cand_nu_p,
            nu_s: cand_nu_s,
            s_hat: cand_s_hat,
            x_tilde: state.x_hat.clone(),
            nu_r: cand_nu_r,
        };
        let next = GampState {
            x_hat: x_next,
            nu_x: nu_x_next,
            x_tilde,
            s_hat,
            nu_s,
            p_hat,
            nu_p,
            z_hat,
            nu_z,
            r_hat,
            nu_r,
            t: state.t + 1,
        };
        (next, candidates)
    }

    /// Iterates from `state` until the stop rule fires or `t_max` iterations
    /// have been performed in total.
    pub fn run_from(&self, mut state: GampState) -> Result<GampResult> {
        let mut trace = self.config.record_trace.then(Vec::new);
        let mut converged = false;
        while state.t <= self.config.t_max {
            let beta = if state.t == 1 { 1.0 } else { self.config.beta0 };
            let next = self.step(&state);
            if !next.is_finite() {
                return Err(Error::Diverged {
                    iteration: state.t,
                    last_state: Box::new(state),
                });
            }
            let change = relative_change(&state.x_hat, &next.x_hat);
            if let Some(trace) = trace.as_mut() {
                trace.push(TraceEntry {
                    iteration: state.t,
                    beta,
                    relative_change: change,
                });
            }
            state = next;
            if change < self.config.eps {
                converged = true;
                break;
            }
        }
        Ok(GampResult {
            x_hat: state.x_hat.clone(),
            iterations: state.t - 1,
            converged,
            trace,
            state,
        })
    }

    pub fn run(&self, init_x: &[f64], init_nu_x: &[f64]) -> Result<GampResult> {
        let state = self.initial_state(init_x, init_nu_x)?;
        self.run_from(state)
    }
}

/// `‖a - b‖ / ‖b‖`, or infinity when `b = 0` so a zero iterate never stops
/// the iteration.
fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).sqrt()
    }
}

/// Runs the damped iteration from `init_x`, `init_nu_x`.
pub fn gamp_run(
    op: &dyn LinearOperator,
    output: &[DenoiserBlock],
    input: &[DenoiserBlock],
    init_x: &[f64],
    init_nu_x: &[f64],
    config: &GampConfig,
) -> Result<GampResult> {
    let scale = init_nu_x.iter().copied().fold(0.0, f64::max);
    let gamp = Gamp::new(op, output, input, config.clone(), scale)?;
    gamp.run(init_x, init_nu_x)
}

/// `Σ f_i([Ax]_i) + Σ g_n(x_n)` from the blocks' penalties. NaN when some
/// block has no penalty.
pub fn map_cost(op: &dyn LinearOperator, output: &[DenoiserBlock], input: &[DenoiserBlock], x: &[f64]) -> Result<f64> {
    check_len(x.len(), op.cols())?;
    check_len(blocks_len(output), op.rows())?;
    check_len(blocks_len(input), op.cols())?;
    let mut z = vec![0.0; op.rows()];
    op.apply_forward(x, &mut z);
    Ok(block_penalty(output, &z) + block_penalty(input, x))
}

fn block_penalty(blocks: &[DenoiserBlock], values: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    for block in blocks {
        for k in 0..block.len {
            total += block.denoiser.penalty(k, values[start + k]).unwrap_or(f64::NAN);
        }
        start += block.len;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::{AwgnOutput, GaussianPrior, Identity, SoftThreshold};
    use crate::linops::DenseOperator;

    #[test]
    fn config_validation() {
        let mut c = GampConfig::default();
        assert!(c.validate().is_ok());
        c.beta0 = 0.0;
        assert!(c.validate().is_err());
        c.beta0 = 1.0;
        c.t_max = 0;
        assert!(c.validate().is_err());
        c.t_max = 5;
        c.variance_floor = 1e20;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_mismatch_rejected() {
        let op = DenseOperator::identity(2).unwrap();
        let out = [DenoiserBlock::new(2, SoftThreshold { lambda: 1.0 })];
        let inp = [DenoiserBlock::new(2, Identity)];
        let cfg = GampConfig {
            mode: Mode::Mmse,
            ..GampConfig::default()
        };
        assert!(Gamp::new(&op, &out, &inp, cfg, 1.0).is_err());
    }

    #[test]
    fn identity_problem_reaches_measurements() {
        // With a flat input prior and A = I the first sweep already lands on
        // y, but undamped iterates then cycle with period six; damping turns
        // the cycle into a contraction.
        let y = vec![0.3, -1.2, 2.5, 0.0, 4.0];
        let op = DenseOperator::identity(5).unwrap();
        let out = [DenoiserBlock::new(
            5,
            AwgnOutput {
                y: y.clone(),
                noise_var: 1e-14,
            },
        )];
        let inp = [DenoiserBlock::new(5, Identity)];
        let gamp = Gamp::new(&op, &out, &inp, GampConfig::default(), 1.0).unwrap();
        let first = gamp.step(&gamp.initial_state(&[0.0; 5], &[1.0; 5]).unwrap());
        for (a, b) in first.x_hat.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let cfg = GampConfig {
            beta0: 0.6,
            t_max: 400,
            eps: 1e-11,
            ..GampConfig::default()
        };
        let r = gamp_run(&op, &out, &inp, &[0.0; 5], &[1.0; 5], &cfg).unwrap();
        assert!(r.converged);
        for (a, b) in r.x_hat.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_conjugate_gaussian() {
        let op = DenseOperator::identity(1).unwrap();
        let out = [DenoiserBlock::new(
            1,
            AwgnOutput {
                y: vec![1.8],
                noise_var: 1.0,
            },
        )];
        let inp = [DenoiserBlock::new(1, GaussianPrior { mean: 0.0, var: 1.0 })];
        let cfg = GampConfig {
            t_max: 200,
            eps: 1e-13,
            ..GampConfig::default()
        };
        let r = gamp_run(&op, &out, &inp, &[0.0], &[1.0], &cfg).unwrap();
        assert!((r.x_hat[0] - 0.9).abs() < 1e-10, "{}", r.x_hat[0]);
    }

    #[test]
    fn first_step_uses_plain_forward() {
        let op = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let out = [DenoiserBlock::new(
            3,
            AwgnOutput {
                y: vec![1.0, 0.0, 2.0],
                noise_var: 0.1,
            },
        )];
        let inp = [DenoiserBlock::new(2, Identity)];
        let gamp = Gamp::new(&op, &out, &inp, GampConfig::default(), 1.0).unwrap();
        let s0 = gamp.initial_state(&[0.4, -0.7], &[1.0, 1.0]).unwrap();
        let s1 = gamp.step(&s0);
        let ax = crate::linops::OperatorExt::forward(&op, &[0.4, -0.7]).unwrap();
        assert_eq!(s1.p_hat, ax);
    }

    #[test]
    fn stationary_state_is_fixed_under_damping() {
        let op = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let out = [DenoiserBlock::new(
            3,
            AwgnOutput {
                y: vec![1.0, 0.0, 2.0],
                noise_var: 0.1,
            },
        )];
        let inp = [DenoiserBlock::new(2, GaussianPrior { mean: 0.0, var: 2.0 })];
        let cfg = GampConfig {
            beta0: 0.5,
            ..GampConfig::default()
        };
        let gamp = Gamp::new(&op, &out, &inp, cfg, 1.0).unwrap();
        let mut state = gamp.initial_state(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        for _ in 0..3000 {
            state = gamp.step(&state);
        }
        let next = gamp.step(&state);
        for (a, b) in next.x_hat.iter().zip(&state.x_hat) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in next.nu_r.iter().zip(&state.nu_r) {
            assert!((a - b).abs() < 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn map_cost_of_zero() {
        let op = DenseOperator::identity(3).unwrap();
        let inp = [DenoiserBlock::new(3, Identity)];
        let zero_y = [DenoiserBlock::new(
            3,
            AwgnOutput {
                y: vec![0.0; 3],
                noise_var: 0.5,
            },
        )];
        assert_eq!(map_cost(&op, &zero_y, &inp, &[0.0; 3]).unwrap(), 0.0);
        let y = vec![1.0, -2.0, 0.5];
        let out = [DenoiserBlock::new(3, AwgnOutput { y, noise_var: 0.5 })];
        let c = map_cost(&op, &out, &inp, &[0.0; 3]).unwrap();
        assert!((c - 5.25 / (2.0 * 0.5)).abs() < 1e-14);
    }
}
