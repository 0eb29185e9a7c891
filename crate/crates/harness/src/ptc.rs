//! Location of the success-rate transition along ρ for fixed δ.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentSpec, PtcCurveSettings, PtcPoint, SweepPoint};
use crate::error::{config_error, Result};
use crate::experiment::{run_points, thread_pool};
use crate::output::write_dat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// The rate at ρ = 1 already reaches the level; ρ50 is reported as 1.
    AtUpper,
    /// The rate at `rho_min` is below the level; ρ50 is at most `rho_min`.
    BelowLower,
}

#[derive(Debug, Clone, Serialize)]
pub struct PtcEstimate {
    pub delta: f64,
    pub d_over_n: f64,
    pub rho50: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub boundary: Option<Boundary>,
    /// Set when the evaluated success rates increase somewhere along ρ.
    pub non_monotone: bool,
    /// Every `(ρ, success rate)` evaluated, sorted by ρ.
    pub evaluations: Vec<(f64, f64)>,
}

/// Success rate over `trials` seeded trials at `(δ, ρ)`.
pub fn success_rate(
    spec: &ExperimentSpec,
    curve: &PtcCurveSettings,
    delta: f64,
    rho: f64,
    pool: &rayon::ThreadPool,
) -> f64 {
    let point = SweepPoint::Ptc(PtcPoint {
        delta,
        rho,
        d_over_n: curve.d_over_n,
    });
    let records = run_points(spec, &[point], curve.trials, pool, false);
    records.iter().filter(|r| r.success).count() as f64 / records.len() as f64
}

/// Finds ρ50 for one δ given a rate function. Bisection over
/// `[rho_min, 1]` assumes the rate falls with ρ; the estimate interpolates
/// linearly inside the final bracket.
pub fn locate_transition(curve: &PtcCurveSettings, mut rate: impl FnMut(f64) -> f64) -> PtcEstimate {
    let level = curve.level;
    let mut evals: Vec<(f64, f64)> = Vec::new();
    let mut eval = |rho: f64, evals: &mut Vec<(f64, f64)>| {
        let r = rate(rho);
        evals.push((rho, r));
        r
    };
    let r_hi = eval(1.0, &mut evals);
    let mut estimate = PtcEstimate {
        delta: f64::NAN,
        d_over_n: curve.d_over_n,
        rho50: 1.0,
        bracket_lo: 1.0,
        bracket_hi: 1.0,
        boundary: None,
        non_monotone: false,
        evaluations: Vec::new(),
    };
    if r_hi >= level {
        estimate.boundary = Some(Boundary::AtUpper);
    } else {
        let r_lo = eval(curve.rho_min, &mut evals);
        if r_lo < level {
            estimate.boundary = Some(Boundary::BelowLower);
            estimate.rho50 = curve.rho_min;
            estimate.bracket_lo = 0.0;
            estimate.bracket_hi = curve.rho_min;
        } else {
            let (mut lo, mut hi) = ((curve.rho_min, r_lo), (1.0, r_hi));
            for _ in 0..curve.bisection_steps {
                let mid = 0.5 * (lo.0 + hi.0);
                let r = eval(mid, &mut evals);
                if r >= level {
                    lo = (mid, r);
                } else {
                    hi = (mid, r);
                }
            }
            let frac = if lo.1 > hi.1 {
                (lo.1 - level) / (lo.1 - hi.1)
            } else {
                0.5
            };
            estimate.rho50 = lo.0 + frac.clamp(0.0, 1.0) * (hi.0 - lo.0);
            estimate.bracket_lo = lo.0;
            estimate.bracket_hi = hi.0;
        }
    }
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    estimate.non_monotone = evals.windows(2).any(|w| w[1].1 > w[0].1);
    if estimate.non_monotone && estimate.boundary.is_none() {
        // widest bracket consistent with all evaluations
        let first_fail = evals.iter().find(|e| e.1 < level).map_or(1.0, |e| e.0);
        let last_pass = evals.iter().rev().find(|e| e.1 >= level).map_or(curve.rho_min, |e| e.0);
        estimate.bracket_lo = first_fail.min(last_pass);
        estimate.bracket_hi = first_fail.max(last_pass);
    }
    estimate.evaluations = evals;
    estimate
}

/// ρ50 for every δ of the config's `ptc_curve` section.
pub fn estimate_ptc(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<PtcEstimate>> {
    let curve = spec
        .ptc_curve
        .as_ref()
        .ok_or_else(|| config_error("the ptc command needs a ptc_curve section"))?;
    let pool = thread_pool(workers)?;
    let estimates = pool.install(|| {
        curve
            .deltas
            .par_iter()
            .map(|&delta| {
                let mut e = locate_transition(curve, |rho| success_rate(spec, curve, delta, rho, &pool));
                e.delta = delta;
                e
            })
            .collect()
    });
    Ok(estimates)
}

pub fn write_ptc(dir: &Path, estimates: &[PtcEstimate]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ptc_curve.csv"))?;
    w.write_record([
        "delta",
        "d_over_n",
        "rho50",
        "bracket_lo",
        "bracket_hi",
        "boundary",
        "non_monotone",
    ])?;
    let mut ev = csv::Writer::from_path(dir.join("ptc_evaluations.csv"))?;
    ev.write_record(["delta", "d_over_n", "rho", "success_rate"])?;
    for e in estimates {
        let boundary = match e.boundary {
            Some(Boundary::AtUpper) => "at-upper",
            Some(Boundary::BelowLower) => "below-lower",
            None => "",
        };
        w.write_record([
            e.delta.to_string(),
            e.d_over_n.to_string(),
            e.rho50.to_string(),
            e.bracket_lo.to_string(),
            e.bracket_hi.to_string(),
            boundary.to_string(),
            e.non_monotone.to_string(),
        ])?;
        for (rho, rate) in &e.evaluations {
            ev.write_record([
                e.delta.to_string(),
                e.d_over_n.to_string(),
                rho.to_string(),
                rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    ev.flush()?;
    let rows: Vec<(f64, f64)> = estimates.iter().map(|e| (e.delta, e.rho50)).collect();
    write_dat(&dir.join("ptc_curve.dat"), "delta rho50", &rows)?;
    Ok(())
}
