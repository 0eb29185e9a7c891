//! Experiment description read from a JSON document.

use std::fmt;
use std::path::Path;

use grampa::gamp::{GampConfig, Mode};
use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// Bernoulli-Gaussian finite-difference signals, Gaussian Φ, 1D differences.
    BgFd,
    /// Cosparse signals on random almost-tight frames, noiseless by default.
    Ptc,
    /// Shepp-Logan phantom, radial Fourier lines, 2D differences.
    Phantom,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::BgFd => "bg-fd",
            Kind::Ptc => "ptc",
            Kind::Phantom => "phantom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgFdPoint {
    pub m_over_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtcPoint {
    pub delta: f64,
    pub rho: f64,
    pub d_over_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomPoint {
    pub lines: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepPoint {
    BgFd(BgFdPoint),
    Ptc(PtcPoint),
    Phantom(PhantomPoint),
}

impl SweepPoint {
    pub fn kind(&self) -> Kind {
        match self {
            SweepPoint::BgFd(_) => Kind::BgFd,
            SweepPoint::Ptc(_) => Kind::Ptc,
            SweepPoint::Phantom(_) => Kind::Phantom,
        }
    }

    pub fn field_names(kind: Kind) -> &'static [&'static str] {
        match kind {
            Kind::BgFd => &["m_over_n"],
            Kind::Ptc => &["delta", "rho", "d_over_n"],
            Kind::Phantom => &["lines"],
        }
    }

    /// Field values in the order of [`SweepPoint::field_names`], formatted
    /// with shortest round-trip representation.
    pub fn field_values(&self) -> Vec<String> {
        match self {
            SweepPoint::BgFd(p) => vec![p.m_over_n.to_string()],
            SweepPoint::Ptc(p) => vec![p.delta.to_string(), p.rho.to_string(), p.d_over_n.to_string()],
            SweepPoint::Phantom(p) => vec![p.lines.to_string()],
        }
    }

    /// Canonical text identifying the point; hashed into trial seeds.
    pub fn key(&self) -> String {
        let names = SweepPoint::field_names(self.kind());
        let values = self.field_values();
        let parts: Vec<String> = names.iter().zip(values).map(|(n, v)| format!("{n}={v}")).collect();
        format!("{}:{}", self.kind(), parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// SNIPE, MMSE mode, tuned over ω.
    #[default]
    Snipe,
    /// `λ|u|`, MAP mode, tuned over λ.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelPrior {
    #[default]
    None,
    Nonneg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Tuning {
    /// Every trial keeps the NSNR-maximizing grid value for itself.
    PerTrial,
    /// One value per sweep point, maximizing median NSNR over separate
    /// tuning trials, then used for every trial.
    PerPoint { trials: usize },
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning::PerTrial
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub beta0: f64,
    pub t_max: usize,
    pub eps: f64,
    pub variance_floor: f64,
    pub variance_ceiling: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            beta0: 0.5,
            t_max: 1000,
            eps: 1e-8,
            variance_floor: 1e-14,
            variance_ceiling: 1e14,
        }
    }
}

impl SolverSettings {
    pub fn gamp_config(&self, mode: Mode) -> GampConfig {
        GampConfig {
            beta0: self.beta0,
            t_max: self.t_max,
            eps: self.eps,
            variance_floor: self.variance_floor,
            variance_ceiling: self.variance_ceiling,
            mode,
            record_trace: false,
        }
    }
}

/// Problem-family parameters; unset fields take per-kind defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSettings {
    /// Signal length (`bg-fd`, `ptc`) or image side (`phantom`).
    pub n: Option<usize>,
    /// Nonzero rate of the finite differences (`bg-fd`).
    pub sparsity_rate: Option<f64>,
    /// Measurement SNR in dB; `null` means noiseless.
    #[serde(default, deserialize_with = "nullable")]
    pub snr_db: Option<Option<f64>>,
    /// Noise variance of noiseless runs, relative to the mean squared
    /// measurement.
    pub noiseless_floor: Option<f64>,
}

fn nullable<'de, D>(d: D) -> std::result::Result<Option<Option<f64>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<f64>::deserialize(d).map(Some)
}

/// Resolved problem parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemParams {
    pub n: usize,
    pub sparsity_rate: f64,
    pub snr_db: Option<f64>,
    pub noiseless_floor: f64,
}

impl ProblemSettings {
    pub fn resolve(&self, kind: Kind) -> ProblemParams {
        let (n, snr) = match kind {
            Kind::BgFd => (500, Some(60.0)),
            Kind::Ptc => (200, None),
            Kind::Phantom => (64, Some(80.0)),
        };
        ProblemParams {
            n: self.n.unwrap_or(n),
            sparsity_rate: self.sparsity_rate.unwrap_or(0.05),
            snr_db: self.snr_db.unwrap_or(snr),
            noiseless_floor: self.noiseless_floor.unwrap_or(1e-12),
        }
    }
}

/// Settings of the `ptc` subcommand's 50%-level search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtcCurveSettings {
    pub deltas: Vec<f64>,
    pub d_over_n: f64,
    #[serde(default = "default_ptc_trials")]
    pub trials: usize,
    #[serde(default = "default_bisection_steps")]
    pub bisection_steps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
}

fn default_ptc_trials() -> usize {
    50
}
fn default_bisection_steps() -> usize {
    6
}
fn default_level() -> f64 {
    0.5
}
fn default_rho_min() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub kind: Kind,
    #[serde(default)]
    pub grid: Vec<SweepPoint>,
    pub trials: usize,
    pub tuning_grid: Vec<f64>,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub pixel_prior: PixelPrior,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub problem: ProblemSettings,
    /// Linear NSNR at or above which a trial counts as a success.
    #[serde(default = "default_success")]
    pub success_nsnr: f64,
    pub seed_base: u64,
    #[serde(default)]
    pub ptc_curve: Option<PtcCurveSettings>,
}

fn default_success() -> f64 {
    1e6
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn mode(&self) -> Mode {
        match self.regularizer {
            Regularizer::Snipe => Mode::Mmse,
            Regularizer::L1 => Mode::Map,
        }
    }

    pub fn problem_params(&self) -> ProblemParams {
        self.problem.resolve(self.kind)
    }

    /// Tuning grid in ascending order.
    pub fn sorted_tuning_grid(&self) -> Vec<f64> {
        let mut g = self.tuning_grid.clone();
        g.sort_by(f64::total_cmp);
        g
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(config_error("trials must be at least 1"));
        }
        if self.tuning_grid.is_empty() || self.tuning_grid.iter().any(|v| !v.is_finite()) {
            return Err(config_error("tuning_grid must be a nonempty list of finite values"));
        }
        if self.regularizer == Regularizer::L1 && self.tuning_grid.iter().any(|&v| v < 0.0) {
            return Err(config_error("l1 weights in tuning_grid must be nonnegative"));
        }
        if let Tuning::PerPoint { trials: 0 } = self.tuning {
            return Err(config_error("per-point tuning needs at least one tuning trial"));
        }
        if !(self.success_nsnr > 0.0) {
            return Err(config_error("success_nsnr must be positive"));
        }
        self.solver
            .gamp_config(self.mode())
            .validate()
            .map_err(|e| config_error(format!("solver: {e}")))?;
        let params = self.problem_params();
        match self.kind {
            Kind::BgFd if params.n < 2 => return Err(config_error("bg-fd needs n >= 2")),
            Kind::Ptc if params.n < 2 => return Err(config_error("ptc needs n >= 2")),
            Kind::Phantom if params.n < 8 || !params.n.is_power_of_two() => {
                return Err(config_error("phantom needs n a power of two, at least 8"))
            }
            _ => {}
        }
        if !(params.sparsity_rate > 0.0 && params.sparsity_rate < 1.0) {
            return Err(config_error("sparsity_rate must lie in (0, 1)"));
        }
        if !(params.noiseless_floor > 0.0) {
            return Err(config_error("noiseless_floor must be positive"));
        }
        for point in &self.grid {
            self.validate_point(point)?;
        }
        if let Some(curve) = &self.ptc_curve {
            if self.kind != Kind::Ptc {
                return Err(config_error("ptc_curve is only valid for kind ptc"));
            }
            if curve.deltas.is_empty() || curve.trials == 0 {
                return Err(config_error("ptc_curve needs deltas and trials"));
            }
            if !(curve.level > 0.0 && curve.level <= 1.0) {
                return Err(config_error("ptc_curve.level must lie in (0, 1]"));
            }
            if !(curve.rho_min > 0.0 && curve.rho_min < 1.0) {
                return Err(config_error("ptc_curve.rho_min must lie in (0, 1)"));
            }
            for &delta in &curve.deltas {
                self.validate_point(&SweepPoint::Ptc(PtcPoint {
                    delta,
                    rho: 1.0,
                    d_over_n: curve.d_over_n,
                }))?;
            }
        }
        Ok(())
    }

    pub fn validate_point(&self, point: &SweepPoint) -> Result<()> {
        if point.kind() != self.kind {
            return Err(config_error(format!(
                "sweep point {} does not belong to a {} experiment",
                point.key(),
                self.kind
            )));
        }
        let n = self.problem_params().n;
        match *point {
            SweepPoint::BgFd(p) => {
                if !(p.m_over_n > 0.0 && p.m_over_n <= 1.0) || (p.m_over_n * n as f64).round() < 1.0 {
                    return Err(config_error(format!("bad m_over_n {}", p.m_over_n)));
                }
            }
            SweepPoint::Ptc(p) => {
                if !(p.delta > 0.0 && p.delta <= 1.0) || (p.delta * n as f64).round() < 1.0 {
                    return Err(config_error(format!("bad delta {}", p.delta)));
                }
                if !(p.rho > 0.0 && p.rho <= 1.0) {
                    return Err(config_error(format!("bad rho {}", p.rho)));
                }
                if !(p.d_over_n >= 1.0 && p.d_over_n.is_finite()) {
                    return Err(config_error(format!("d_over_n {} must be at least 1", p.d_over_n)));
                }
            }
            SweepPoint::Phantom(p) => {
                if p.lines == 0 || p.lines > 2 * n {
                    return Err(config_error(format!("bad line count {}", p.lines)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "kind": "bg-fd",
        "grid": [{"m_over_n": 0.5}],
        "trials": 2,
        "tuning_grid": [0, 2],
        "seed_base": 7
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let spec = ExperimentSpec::from_json(MINIMAL).unwrap();
        assert_eq!(spec.kind, Kind::BgFd);
        assert_eq!(spec.tuning, Tuning::PerTrial);
        assert_eq!(spec.problem_params().n, 500);
        assert_eq!(spec.problem_params().snr_db, Some(60.0));
        assert_eq!(spec.grid[0], SweepPoint::BgFd(BgFdPoint { m_over_n: 0.5 }));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"seed_base\": 7", "\"seed_base\": 7, \"extra\": 1");
        assert!(ExperimentSpec::from_json(&text).is_err());
        let text = MINIMAL.replace("{\"m_over_n\": 0.5}", "{\"m_over_n\": 0.5, \"oops\": 2}");
        assert!(ExperimentSpec::from_json(&text).is_err());
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            ExperimentSpec::from_json(&text),
            Err(crate::HarnessError::Config(_))
        ));
    }

    #[test]
    fn mismatched_point_kind_rejected() {
        let text = MINIMAL.replace("{\"m_over_n\": 0.5}", "{\"lines\": 8}");
        assert!(ExperimentSpec::from_json(&text).is_err());
    }

    #[test]
    fn null_snr_means_noiseless() {
        let text = r#"{
            "schema_version": 1, "kind": "ptc",
            "grid": [{"delta": 0.5, "rho": 0.5, "d_over_n": 1.2}],
            "trials": 1, "tuning_grid": [1], "seed_base": 0,
            "problem": {"snr_db": null, "n": 40}
        }"#;
        let spec = ExperimentSpec::from_json(text).unwrap();
        assert_eq!(spec.problem_params().snr_db, None);
        assert_eq!(spec.problem_params().n, 40);
    }

    #[test]
    fn point_keys_are_canonical() {
        let p = SweepPoint::Ptc(PtcPoint {
            delta: 0.9,
            rho: 0.5,
            d_over_n: 1.2,
        });
        assert_eq!(p.key(), "ptc:delta=0.9,rho=0.5,d_over_n=1.2");
    }
}
