//! Trial generation, parameter tuning and parallel execution.

use std::time::Instant;

use grampa::gamp::GampConfig;
use grampa::grampa::{solve, AnalysisProblem, AnalysisReg, AwgnLoss, PixelReg};
use grampa::linops::{make_fd1d, make_fd2d, make_partial_fourier_radial, Direction, OperatorExt};
use grampa::problems::{
    add_awgn, awgn_noise_var, gaussian_operator, gen_bg_fd_signal, gen_cosparse_signal, gen_tight_frame, nsnr,
    shepp_logan, to_db,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentSpec, Kind, PixelPrior, Regularizer, SweepPoint, Tuning};
use crate::error::{config_error, Result};

/// Seed of one trial: `seed_base` XOR the first eight bytes (little-endian)
/// of SHA-256 over `"<point key>|<tag>|<trial>"`.
pub fn trial_seed(seed_base: u64, point: &SweepPoint, tag: &str, trial: usize) -> u64 {
    let digest = Sha256::digest(format!("{}|{tag}|{trial}", point.key()).as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed_base ^ u64::from_le_bytes(bytes)
}

/// A generated problem instance with its ground truth. The analysis
/// regularizer is a placeholder until a tuning value is applied.
pub struct Instance {
    pub problem: AnalysisProblem,
    pub x: Vec<f64>,
}

impl Instance {
    pub fn with_param(&self, regularizer: Regularizer, value: f64) -> AnalysisProblem {
        let mut p = self.problem.clone();
        p.analysis_reg = match regularizer {
            Regularizer::Snipe => AnalysisReg::Snipe { omega: value },
            Regularizer::L1 => AnalysisReg::L1 { lambda: value },
        };
        p
    }
}

/// Builds the instance of `point` drawn from `seed`.
pub fn generate_instance(spec: &ExperimentSpec, point: &SweepPoint, seed: u64) -> Result<Instance> {
    spec.validate_point(point)?;
    let params = spec.problem_params();
    let n = params.n;
    let (phi, omega, x) = match *point {
        SweepPoint::BgFd(p) => {
            let m = (p.m_over_n * n as f64).round() as usize;
            let x = gen_bg_fd_signal(n, params.sparsity_rate, seed)?;
            (gaussian_operator(m, n, seed)?, make_fd1d(n)?, x)
        }
        SweepPoint::Ptc(p) => {
            let m = (p.delta * n as f64).round() as usize;
            let d = (p.d_over_n * n as f64).round() as usize;
            let k = (p.rho * m as f64).round() as usize;
            if k == 0 || k > n {
                return Err(config_error(format!(
                    "{} gives n - L = {k} outside [1, n]",
                    point.key()
                )));
            }
            let omega = gen_tight_frame(n, d, seed)?.operator.into_operator();
            let x = gen_cosparse_signal(omega.as_ref(), n - k, seed)?.x;
            (gaussian_operator(m, n, seed)?, omega, x)
        }
        SweepPoint::Phantom(p) => {
            let phi = make_partial_fourier_radial(n, p.lines, seed)?;
            (phi, make_fd2d(n, n, &Direction::ALL)?, shepp_logan(n)?)
        }
    };
    let z = phi.forward(&x)?;
    let (y, noise_var) = match params.snr_db {
        Some(snr) => (add_awgn(&z, snr, seed)?, awgn_noise_var(&z, snr)),
        None => {
            let mean_sq = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            (z, params.noiseless_floor * mean_sq)
        }
    };
    let pixel_reg = match spec.pixel_prior {
        PixelPrior::None => PixelReg::None,
        PixelPrior::Nonneg => PixelReg::Nonneg,
    };
    let problem = AnalysisProblem {
        phi,
        omega,
        loss: AwgnLoss { y, noise_var },
        analysis_reg: AnalysisReg::L1 { lambda: 0.0 },
        pixel_reg,
        mode: spec.mode(),
    };
    Ok(Instance { problem, x })
}

/// Outcome of one solve.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub param: f64,
    pub nsnr: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub x_hat: Option<Vec<f64>>,
}

/// Solves `instance` with the regularizer set to `param`. Divergence and
/// other solver failures score an NSNR of zero.
pub fn attempt(spec: &ExperimentSpec, instance: &Instance, config: &GampConfig, param: f64) -> Attempt {
    let problem = instance.with_param(spec.regularizer, param);
    let start = Instant::now();
    let outcome = solve(&problem, config);
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(res) => {
            let score = nsnr(&instance.x, &res.x_hat).unwrap_or(0.0);
            Attempt {
                param,
                nsnr: if score.is_nan() { 0.0 } else { score },
                iterations: res.iterations,
                wall_time_s,
                x_hat: Some(res.x_hat),
            }
        }
        Err(grampa::Error::Diverged { iteration, .. }) => Attempt {
            param,
            nsnr: 0.0,
            iterations: iteration,
            wall_time_s,
            x_hat: None,
        },
        Err(_) => Attempt {
            param,
            nsnr: 0.0,
            iterations: 0,
            wall_time_s,
            x_hat: None,
        },
    }
}

/// Tries every value of `grid` (ascending) and keeps the best NSNR; ties
/// go to the smaller value. Wall time is summed over the whole search.
pub fn best_over_grid(spec: &ExperimentSpec, instance: &Instance, config: &GampConfig, grid: &[f64]) -> Attempt {
    let mut best: Option<Attempt> = None;
    let mut total_time = 0.0;
    for &param in grid {
        let a = attempt(spec, instance, config, param);
        total_time += a.wall_time_s;
        if best.as_ref().is_none_or(|b| a.nsnr > b.nsnr) {
            best = Some(a);
        }
    }
    let mut best = best.expect("tuning grid is nonempty");
    best.wall_time_s = total_time;
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub point: SweepPoint,
    pub trial: usize,
    pub seed: u64,
    pub tuned_param: f64,
    pub nsnr_db: f64,
    pub success: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub generation_failed: bool,
    #[serde(skip)]
    pub x_hat: Option<Vec<f64>>,
}

/// Runs one trial of `point` with the given tuning grid.
pub fn run_trial(spec: &ExperimentSpec, point: &SweepPoint, trial: usize, grid: &[f64], keep_x: bool) -> TrialRecord {
    let seed = trial_seed(spec.seed_base, point, "trial", trial);
    let config = spec.solver.gamp_config(spec.mode());
    match generate_instance(spec, point, seed) {
        Ok(instance) => {
            let best = best_over_grid(spec, &instance, &config, grid);
            TrialRecord {
                point: *point,
                trial,
                seed,
                tuned_param: best.param,
                nsnr_db: to_db(best.nsnr),
                success: best.nsnr >= spec.success_nsnr,
                iterations: best.iterations,
                wall_time_s: best.wall_time_s,
                generation_failed: false,
                x_hat: if keep_x { best.x_hat } else { None },
            }
        }
        Err(_) => TrialRecord {
            point: *point,
            trial,
            seed,
            tuned_param: grid[0],
            nsnr_db: f64::NEG_INFINITY,
            success: false,
            iterations: 0,
            wall_time_s: 0.0,
            generation_failed: true,
            x_hat: None,
        },
    }
}

/// Median of finite-or-infinite values; `NaN` entries are ignored.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else if v[mid - 1] == v[mid] {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// The grid value maximizing median NSNR over `trials` tuning trials at
/// `point`; ties go to the smaller value.
pub fn tune_point(spec: &ExperimentSpec, point: &SweepPoint, trials: usize) -> f64 {
    let config = spec.solver.gamp_config(spec.mode());
    let instances: Vec<Option<Instance>> = (0..trials)
        .map(|t| generate_instance(spec, point, trial_seed(spec.seed_base, point, "tune", t)).ok())
        .collect();
    let grid = spec.sorted_tuning_grid();
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &param in &grid {
        let scores: Vec<f64> = instances
            .iter()
            .map(|inst| inst.as_ref().map_or(0.0, |i| attempt(spec, i, &config, param).nsnr))
            .collect();
        let m = median(&scores);
        if m > best.1 {
            best = (param, m);
        }
    }
    best.0
}

pub fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let threads = workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_error(format!("cannot start worker pool: {e}")))
}

/// Runs `trials` trials at every point, in parallel. Records come back
/// ordered by point, then trial, whatever the scheduling.
pub fn run_points(
    spec: &ExperimentSpec,
    points: &[SweepPoint],
    trials: usize,
    pool: &rayon::ThreadPool,
    keep_first_x: bool,
) -> Vec<TrialRecord> {
    pool.install(|| {
        let grids: Vec<Vec<f64>> = match spec.tuning {
            Tuning::PerTrial => vec![spec.sorted_tuning_grid(); points.len()],
            Tuning::PerPoint { trials } => points.par_iter().map(|p| vec![tune_point(spec, p, trials)]).collect(),
        };
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| (0..trials).map(move |t| (p, t)))
            .collect();
        jobs.par_iter()
            .map(|&(p, t)| run_trial(spec, &points[p], t, &grids[p], keep_first_x && t == 0))
            .collect()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub point: SweepPoint,
    pub trials: usize,
    pub median_nsnr_db: f64,
    pub success_rate: f64,
    pub failed: usize,
    pub median_iterations: f64,
    pub median_tuned_param: f64,
    pub median_wall_time_s: f64,
}

pub fn summarize(points: &[SweepPoint], records: &[TrialRecord]) -> Vec<PointSummary> {
    points
        .iter()
        .map(|point| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.point == *point).collect();
            let col = |f: fn(&TrialRecord) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            PointSummary {
                point: *point,
                trials: rows.len(),
                median_nsnr_db: col(|r| r.nsnr_db),
                success_rate: rows.iter().filter(|r| r.success).count() as f64 / rows.len().max(1) as f64,
                failed: rows.iter().filter(|r| r.generation_failed).count(),
                median_iterations: col(|r| r.iterations as f64),
                median_tuned_param: col(|r| r.tuned_param),
                median_wall_time_s: col(|r| r.wall_time_s),
            }
        })
        .collect()
}

/// Whole-experiment result.
pub struct RunOutput {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<PointSummary>,
}

pub fn run_experiment(spec: &ExperimentSpec, workers: Option<usize>) -> Result<RunOutput> {
    if spec.grid.is_empty() {
        return Err(config_error("grid is empty"));
    }
    let pool = thread_pool(workers)?;
    let records = run_points(spec, &spec.grid, spec.trials, &pool, spec.kind == Kind::Phantom);
    let summaries = summarize(&spec.grid, &records);
    Ok(RunOutput { records, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BgFdPoint, PtcPoint};

    #[test]
    fn seeds_depend_on_point_and_trial() {
        let a = SweepPoint::BgFd(BgFdPoint { m_over_n: 0.3 });
        let b = SweepPoint::BgFd(BgFdPoint { m_over_n: 0.5 });
        assert_eq!(trial_seed(1, &a, "trial", 0), trial_seed(1, &a, "trial", 0));
        assert_ne!(trial_seed(1, &a, "trial", 0), trial_seed(1, &a, "trial", 1));
        assert_ne!(trial_seed(1, &a, "trial", 0), trial_seed(1, &b, "trial", 0));
        assert_ne!(trial_seed(1, &a, "trial", 0), trial_seed(2, &a, "trial", 0));
        assert_ne!(trial_seed(1, &a, "trial", 0), trial_seed(1, &a, "tune", 0));
    }

    #[test]
    fn median_handles_parity_and_infinities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[f64::INFINITY, f64::INFINITY, 1.0, 0.0]), f64::INFINITY);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn ptc_instance_has_requested_cosparsity() {
        let spec = ExperimentSpec::from_json(
            r#"{"schema_version": 1, "kind": "ptc", "trials": 1, "tuning_grid": [0],
                "seed_base": 3, "problem": {"n": 30}}"#,
        )
        .unwrap();
        let point = SweepPoint::Ptc(PtcPoint {
            delta: 0.5,
            rho: 0.4,
            d_over_n: 1.2,
        });
        let inst = generate_instance(&spec, &point, 11).unwrap();
        assert_eq!(inst.problem.phi.rows(), 15);
        assert_eq!(inst.problem.omega.rows(), 36);
        let u = inst.problem.omega.forward(&inst.x).unwrap();
        let zeros = u.iter().filter(|v| v.abs() < 1e-9).count();
        assert_eq!(zeros, 30 - 6);
    }
}
