//! Results on disk: per-trial CSV, JSON summary, `.dat` curves, images.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use grampa::io::{save_pgm16, save_vector};
use grampa::problems::shepp_logan;

use crate::config::{ExperimentSpec, Kind, SweepPoint};
use crate::error::Result;
use crate::experiment::{PointSummary, RunOutput, TrialRecord};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Column names of the per-trial CSV for `kind`.
pub fn csv_header(kind: Kind) -> Vec<String> {
    let mut h = vec!["kind".to_string()];
    h.extend(SweepPoint::field_names(kind).iter().map(|s| s.to_string()));
    h.extend(
        ["seed", "tuned_param", "nsnr_db", "success", "iterations", "wall_time_s"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

pub fn write_results_csv(path: &Path, kind: Kind, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(kind))?;
    for r in records {
        let mut row = vec![kind.to_string()];
        row.extend(r.point.field_values());
        row.extend([
            r.seed.to_string(),
            r.tuned_param.to_string(),
            r.nsnr_db.to_string(),
            r.success.to_string(),
            r.iterations.to_string(),
            r.wall_time_s.to_string(),
        ]);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Infinite medians are written as strings so the document stays valid JSON.
fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::String(x.to_string())
    }
}

fn summary_value(s: &PointSummary) -> serde_json::Value {
    let mut point = serde_json::to_value(s.point).unwrap_or_default();
    if let serde_json::Value::Object(map) = &mut point {
        map.insert("trials".into(), serde_json::json!(s.trials));
        map.insert("median_nsnr_db".into(), json_f64(s.median_nsnr_db));
        map.insert("success_rate".into(), json_f64(s.success_rate));
        map.insert("failed".into(), serde_json::json!(s.failed));
        map.insert("median_iterations".into(), json_f64(s.median_iterations));
        map.insert("median_tuned_param".into(), json_f64(s.median_tuned_param));
        map.insert("median_wall_time_s".into(), json_f64(s.median_wall_time_s));
    }
    point
}

pub fn write_summary_json(path: &Path, spec: &ExperimentSpec, summaries: &[PointSummary]) -> Result<()> {
    let doc = serde_json::json!({
        "spec": serde_json::to_value(spec)?,
        "points": summaries.iter().map(summary_value).collect::<Vec<_>>(),
    });
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    Ok(())
}

/// Writes a two-column whitespace-separated data file.
pub fn write_dat(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {header}")?;
    for (a, b) in rows {
        writeln!(w, "{a} {b}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_curves(dir: &Path, kind: Kind, summaries: &[PointSummary]) -> Result<()> {
    match kind {
        Kind::BgFd => {
            let rows: Vec<(f64, f64)> = summaries
                .iter()
                .filter_map(|s| match s.point {
                    SweepPoint::BgFd(p) => Some((p.m_over_n, s.median_nsnr_db)),
                    _ => None,
                })
                .collect();
            write_dat(
                &dir.join("median_nsnr_vs_m_over_n.dat"),
                "m_over_n median_nsnr_db",
                &rows,
            )?;
        }
        Kind::Phantom => {
            let rows: Vec<(f64, f64)> = summaries
                .iter()
                .filter_map(|s| match s.point {
                    SweepPoint::Phantom(p) => Some((p.lines as f64, s.median_nsnr_db)),
                    _ => None,
                })
                .collect();
            write_dat(&dir.join("median_nsnr_vs_lines.dat"), "lines median_nsnr_db", &rows)?;
        }
        Kind::Ptc => {
            // one success-rate-vs-rho curve per (delta, d_over_n)
            let mut keys: Vec<(f64, f64)> = Vec::new();
            for s in summaries {
                if let SweepPoint::Ptc(p) = s.point {
                    if !keys.contains(&(p.delta, p.d_over_n)) {
                        keys.push((p.delta, p.d_over_n));
                    }
                }
            }
            for (delta, d_over_n) in keys {
                let rows: Vec<(f64, f64)> = summaries
                    .iter()
                    .filter_map(|s| match s.point {
                        SweepPoint::Ptc(p) if p.delta == delta && p.d_over_n == d_over_n => {
                            Some((p.rho, s.success_rate))
                        }
                        _ => None,
                    })
                    .collect();
                let name = format!("success_rate_delta{delta}_dn{d_over_n}.dat");
                write_dat(&dir.join(name), "rho success_rate", &rows)?;
            }
        }
    }
    Ok(())
}

fn write_images(dir: &Path, spec: &ExperimentSpec, records: &[TrialRecord]) -> Result<()> {
    let n = spec.problem_params().n;
    save_pgm16(dir.join("phantom_truth.pgm"), &shepp_logan(n)?, n, n)?;
    for r in records {
        if let (SweepPoint::Phantom(p), Some(x)) = (&r.point, &r.x_hat) {
            save_pgm16(dir.join(format!("recon_lines{}.pgm", p.lines)), x, n, n)?;
            save_vector(dir.join(format!("recon_lines{}.bin", p.lines)), x)?;
        }
    }
    Ok(())
}

/// Writes every artifact of a completed run into `dir`.
pub fn write_run(dir: &Path, spec: &ExperimentSpec, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(&dir.join(RESULTS_CSV), spec.kind, &out.records)?;
    write_summary_json(&dir.join(SUMMARY_JSON), spec, &out.summaries)?;
    write_curves(dir, spec.kind, &out.summaries)?;
    if spec.kind == Kind::Phantom {
        write_images(dir, spec, &out.records)?;
    }
    Ok(())
}
