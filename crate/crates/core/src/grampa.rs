//! Analysis compressive sensing through the stacked operator `A = [Φ; Ω]`.
//!
//! Rows of `Φ` carry the quadratic measurement loss, rows of `Ω` carry the
//! analysis regularizer, and the columns carry the pixel regularizer.

use crate::denoisers::{
    AwgnOutput, BernoulliGaussian, BernoulliGaussianParams, FixedZero, Identity, NonnegMap, NonnegMmse, Snipe,
    SnipeParams, SoftThreshold,
};
use crate::error::{check_len, invalid, Result};
use crate::gamp::{gamp_run, map_cost, DenoiserBlock, GampConfig, GampResult, Mode};
use crate::linops::{stack, Operator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalysisReg {
    /// SNIPE with log-odds parameter ω (MMSE only).
    Snipe { omega: f64 },
    /// `λ |u|` (MAP only).
    L1 { lambda: f64 },
    /// Bernoulli-Gaussian prior (MMSE only).
    Bg { beta: f64, sigma_sq: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelReg {
    #[default]
    None,
    Nonneg,
    FixedZero,
}

/// `y = Φx + w` with `w ~ N(0, noise_var I)`.
#[derive(Debug, Clone)]
pub struct AwgnLoss {
    pub y: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisProblem {
    pub phi: Operator,
    pub omega: Operator,
    pub loss: AwgnLoss,
    pub analysis_reg: AnalysisReg,
    pub pixel_reg: PixelReg,
    pub mode: Mode,
}

/// The stacked operator with its output and input denoiser blocks.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub op: Operator,
    pub output: Vec<DenoiserBlock>,
    pub input: Vec<DenoiserBlock>,
    /// Number of measurement rows; analysis rows start here.
    pub boundary: usize,
}

impl Assembled {
    /// The MAP objective `Σ f_i([Ax]_i) + Σ g_n(x_n)`.
    pub fn map_cost(&self, x: &[f64]) -> Result<f64> {
        map_cost(self.op.as_ref(), &self.output, &self.input, x)
    }
}

impl AnalysisProblem {
    fn validate(&self) -> Result<()> {
        if self.phi.cols() != self.omega.cols() {
            return Err(invalid(format!(
                "phi has {} columns but omega has {}",
                self.phi.cols(),
                self.omega.cols()
            )));
        }
        check_len(self.loss.y.len(), self.phi.rows())?;
        if !(self.loss.noise_var > 0.0 && self.loss.noise_var.is_finite()) {
            return Err(invalid("noise variance must be positive and finite"));
        }
        match (self.mode, self.analysis_reg) {
            (Mode::Map, AnalysisReg::Snipe { .. }) | (Mode::Map, AnalysisReg::Bg { .. }) => {
                Err(invalid("SNIPE and Bernoulli-Gaussian regularizers need MMSE mode"))
            }
            (Mode::Mmse, AnalysisReg::L1 { .. }) => Err(invalid("the l1 regularizer needs MAP mode")),
            (_, AnalysisReg::L1 { lambda }) if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(invalid("lambda must be finite and nonnegative"))
            }
            (_, AnalysisReg::Snipe { omega }) if !omega.is_finite() => Err(invalid("omega must be finite")),
            _ => Ok(()),
        }
    }

    /// Default `ν^x(1)`: `‖y‖² N / (M ‖Φ‖_F²)`, or the noise variance when
    /// that is zero.
    pub fn default_nu_x(&self) -> f64 {
        let n = self.phi.cols() as f64;
        let m = self.phi.rows() as f64;
        let energy: f64 = self.loss.y.iter().map(|v| v * v).sum();
        let fro = self.phi.frobenius_norm_sq();
        let v = energy * n / (m * fro);
        if v > 0.0 && v.is_finite() {
            v
        } else {
            self.loss.noise_var
        }
    }
}

pub fn assemble(problem: &AnalysisProblem) -> Result<Assembled> {
    problem.validate()?;
    let m = problem.phi.rows();
    let d = problem.omega.rows();
    let n = problem.phi.cols();
    let op = stack(problem.phi.clone(), problem.omega.clone())?;
    let loss = DenoiserBlock::new(
        m,
        AwgnOutput {
            y: problem.loss.y.clone(),
            noise_var: problem.loss.noise_var,
        },
    );
    let analysis = match problem.analysis_reg {
        AnalysisReg::Snipe { omega } => DenoiserBlock::new(d, Snipe(SnipeParams { omega })),
        AnalysisReg::L1 { lambda } => DenoiserBlock::new(d, SoftThreshold { lambda }),
        AnalysisReg::Bg { beta, sigma_sq } => {
            DenoiserBlock::new(d, BernoulliGaussian(BernoulliGaussianParams::new(beta, sigma_sq)?))
        }
    };
    let pixel = match (problem.pixel_reg, problem.mode) {
        (PixelReg::None, _) => DenoiserBlock::new(n, Identity),
        (PixelReg::Nonneg, Mode::Map) => DenoiserBlock::new(n, NonnegMap),
        (PixelReg::Nonneg, Mode::Mmse) => DenoiserBlock::new(n, NonnegMmse),
        (PixelReg::FixedZero, _) => DenoiserBlock::new(n, FixedZero),
    };
    Ok(Assembled {
        op,
        output: vec![loss, analysis],
        input: vec![pixel],
        boundary: m,
    })
}

/// Runs the solver from `x̂ = 0`, `ν^x =` [`AnalysisProblem::default_nu_x`].
/// The problem's mode overrides `config.mode`.
pub fn solve(problem: &AnalysisProblem, config: &GampConfig) -> Result<GampResult> {
    let n = problem.phi.cols();
    let nu_x = problem.default_nu_x();
    solve_from(problem, config, &vec![0.0; n], &vec![nu_x; n])
}

pub fn solve_from(
    problem: &AnalysisProblem,
    config: &GampConfig,
    init_x: &[f64],
    init_nu_x: &[f64],
) -> Result<GampResult> {
    let assembled = assemble(problem)?;
    let config = GampConfig {
        mode: problem.mode,
        ..config.clone()
    };
    gamp_run(
        assembled.op.as_ref(),
        &assembled.output,
        &assembled.input,
        init_x,
        init_nu_x,
        &config,
    )
}
