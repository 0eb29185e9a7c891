//! Independent reference implementations used to check the solver.
//!
//! Nothing here is called by the solver itself: the dense transcription of
//! the damped iteration, the convex `ℓ1`-analysis solvers and the 1D search
//! exist so tests can compare against them.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Error, Result};
use crate::gamp::{DenoiserBlock, GampConfig, GampState};
use crate::linops::{materialize, LinearOperator};

/// Per-index view of a block list: `(block, index within block)`.
fn index_map(blocks: &[DenoiserBlock]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        for k in 0..block.len {
            out.push((b, k));
        }
    }
    out
}

/// Line-by-line dense transcription of the damped iteration with explicit
/// loops over rows `i` and columns `n`. Returns the state after each of the
/// `iterations` sweeps (no early stopping).
pub fn dense_gamp_reference(
    a: &[Vec<f64>],
    output: &[DenoiserBlock],
    input: &[DenoiserBlock],
    init_x: &[f64],
    init_nu_x: &[f64],
    config: &GampConfig,
    iterations: usize,
) -> Result<Vec<GampState>> {
    let rows = a.len();
    let cols = init_x.len();
    if a.iter().any(|r| r.len() != cols) {
        return Err(invalid("ragged reference matrix"));
    }
    check_len(init_nu_x.len(), cols)?;
    let out_map = index_map(output);
    let in_map = index_map(input);
    check_len(out_map.len(), rows)?;
    check_len(in_map.len(), cols)?;

    let scale = init_nu_x.iter().copied().fold(0.0, f64::max);
    let floor = config.variance_floor * scale;
    let ceiling = config.variance_ceiling * scale;
    let clamp = |v: f64| {
        if v < floor {
            floor
        } else if v > ceiling {
            ceiling
        } else {
            v
        }
    };

    let mut x_hat = init_x.to_vec();
    let mut nu_x = init_nu_x.to_vec();
    let mut s_hat = vec![0.0; rows];
    let mut nu_s = vec![0.0; rows];
    let mut nu_p = vec![0.0; rows];
    let mut x_tilde = vec![0.0; cols];
    let mut nu_r = vec![0.0; cols];
    let mut history = Vec::with_capacity(iterations);

    for t in 1..=iterations {
        let beta = if t == 1 { 1.0 } else { config.beta0 };
        let mut p_hat = vec![0.0; rows];
        let mut z_hat = vec![0.0; rows];
        let mut nu_z = vec![0.0; rows];
        for i in 0..rows {
            let mut acc = 0.0;
            for n in 0..cols {
                acc += a[i][n] * a[i][n] * nu_x[n];
            }
            nu_p[i] = clamp(beta * acc + (1.0 - beta) * nu_p[i]);
        }
        for i in 0..rows {
            let mut acc = 0.0;
            for n in 0..cols {
                acc += a[i][n] * x_hat[n];
            }
            p_hat[i] = acc - nu_p[i] * s_hat[i];
        }
        for i in 0..rows {
            let (b, k) = out_map[i];
            let e = output[b].denoiser.denoise(k, p_hat[i], nu_p[i]);
            nu_z[i] = nu_p[i] * e.derivative;
            z_hat[i] = e.value;
        }
        for i in 0..rows {
            let ratio = 1.0 - nu_z[i] / nu_p[i];
            let fresh = if ratio < 0.0 { floor } else { ratio / nu_p[i] };
            nu_s[i] = clamp(beta * fresh + (1.0 - beta) * nu_s[i]);
        }
        for i in 0..rows {
            s_hat[i] = beta * (z_hat[i] - p_hat[i]) / nu_p[i] + (1.0 - beta) * s_hat[i];
        }
        for n in 0..cols {
            x_tilde[n] = beta * x_hat[n] + (1.0 - beta) * x_tilde[n];
        }
        for n in 0..cols {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += a[i][n] * a[i][n] * nu_s[i];
            }
            nu_r[n] = clamp(beta * (1.0 / acc) + (1.0 - beta) * nu_r[n]);
        }
        let mut r_hat = vec![0.0; cols];
        for n in 0..cols {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += a[i][n] * s_hat[i];
            }
            r_hat[n] = x_tilde[n] + nu_r[n] * acc;
        }
        for n in 0..cols {
            let (b, k) = in_map[n];
            let e = input[b].denoiser.denoise(k, r_hat[n], nu_r[n]);
            nu_x[n] = clamp(nu_r[n] * e.derivative);
            x_hat[n] = e.value;
        }
        history.push(GampState {
            x_hat: x_hat.clone(),
            nu_x: nu_x.clone(),
            x_tilde: x_tilde.clone(),
            s_hat: s_hat.clone(),
            nu_s: nu_s.clone(),
            p_hat,
            nu_p: nu_p.clone(),
            z_hat,
            nu_z,
            r_hat,
            nu_r: nu_r.clone(),
            t: t + 1,
        });
    }
    Ok(history)
}

/// Result of a convex reference solve.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Objective after each iteration (proximal-gradient path only).
    pub objective_history: Vec<f64>,
}

pub const ORACLE_TOL: f64 = 1e-8;
pub const ORACLE_MAX_ITER: usize = 100_000;

fn to_matrix(op: &dyn LinearOperator) -> DMatrix<f64> {
    let dense = materialize(op);
    DMatrix::from_row_slice(op.rows(), op.cols(), dense.data())
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `½ σ_w⁻² ‖y - Φx‖² + λ ‖Ωx‖₁`.
pub fn l1_analysis_objective(
    phi: &dyn LinearOperator,
    omega: &dyn LinearOperator,
    y: &[f64],
    lambda: f64,
    sigma_w_sq: f64,
    x: &[f64],
) -> Result<f64> {
    use crate::linops::OperatorExt;
    let r = phi.forward(x)?;
    check_len(y.len(), r.len())?;
    let fit: f64 = r.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let u = omega.forward(x)?;
    Ok(0.5 * fit / sigma_w_sq + lambda * u.iter().map(|v| v.abs()).sum::<f64>())
}

/// Solves `min_x ½ σ_w⁻² ‖y - Φx‖² + λ ‖Ωx‖₁`.
///
/// When `Ω` is the identity this is proximal gradient with backtracking
/// (monotone objective). Otherwise an alternating-direction method on the
/// split `u = Ωx` is used, which needs `σ_w⁻² ΦᵀΦ + ΩᵀΩ` to be positive
/// definite. The reported `kkt_residual` is the larger of the relative
/// stationarity residual `‖∇f + Ωᵀv‖ / (1 + ‖∇f‖)` with the dual `v` the
/// solver produced, and the relative split residual.
pub fn prox_gradient_l1(
    phi: &dyn LinearOperator,
    omega: &dyn LinearOperator,
    y: &[f64],
    lambda: f64,
    sigma_w_sq: f64,
    tol: f64,
) -> Result<ReferenceSolution> {
    if phi.cols() != omega.cols() {
        return Err(invalid("phi and omega disagree on signal length"));
    }
    check_len(y.len(), phi.rows())?;
    if !(lambda >= 0.0 && sigma_w_sq > 0.0 && tol > 0.0) {
        return Err(invalid("need lambda >= 0, sigma_w_sq > 0, tol > 0"));
    }
    let p = to_matrix(phi);
    let o = to_matrix(omega);
    let y = DVector::from_column_slice(y);
    let n = phi.cols();
    let is_identity = o.nrows() == n && o == DMatrix::identity(n, n);
    let sol = if is_identity {
        ista(&p, &y, lambda, sigma_w_sq, tol)?
    } else {
        admm(&p, &o, &y, lambda, sigma_w_sq, tol)?
    };
    Ok(sol)
}

fn smooth_part(p: &DMatrix<f64>, y: &DVector<f64>, w: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let r = p * x - y;
    (0.5 * w * r.norm_squared(), p.transpose() * r * w)
}

fn ista(p: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, sigma_w_sq: f64, tol: f64) -> Result<ReferenceSolution> {
    let w = 1.0 / sigma_w_sq;
    let n = p.ncols();
    let mut x = DVector::zeros(n);
    let mut step_l = 1.0;
    let objective = |x: &DVector<f64>| smooth_part(p, y, w, x).0 + lambda * x.lp_norm(1);
    let mut current = objective(&x);
    let mut history = vec![current];
    for it in 1..=ORACLE_MAX_ITER {
        let (f, g) = smooth_part(p, y, w, &x);
        let mut next;
        loop {
            next = (&x - &g / step_l).map(|v| soft(v, lambda / step_l));
            let d = &next - &x;
            let (f_next, _) = smooth_part(p, y, w, &next);
            if f_next <= f + g.dot(&d) + 0.5 * step_l * d.norm_squared() + 1e-15 * f.abs() {
                break;
            }
            step_l *= 2.0;
        }
        current = objective(&next);
        history.push(current);
        x = next;
        let (_, g_new) = smooth_part(p, y, w, &x);
        let kkt = l1_stationarity(&g_new, &x, lambda);
        if kkt <= tol {
            return Ok(ReferenceSolution {
                x_star: x.iter().copied().collect(),
                objective: current,
                iterations: it,
                kkt_residual: kkt,
                objective_history: history,
            });
        }
        step_l = (step_l / 1.5).max(1e-300);
    }
    Err(Error::NumericFailure(format!(
        "proximal gradient did not reach tol {tol} in {ORACLE_MAX_ITER} iterations"
    )))
}

/// Relative residual of `0 ∈ g + λ ∂‖x‖₁`.
fn l1_stationarity(g: &DVector<f64>, x: &DVector<f64>, lambda: f64) -> f64 {
    let r: f64 = g
        .iter()
        .zip(x.iter())
        .map(|(&gi, &xi)| {
            if xi != 0.0 {
                gi + lambda * xi.signum()
            } else {
                (gi.abs() - lambda).max(0.0)
            }
        })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    r / (1.0 + g.norm())
}

fn admm(
    p: &DMatrix<f64>,
    o: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    sigma_w_sq: f64,
    tol: f64,
) -> Result<ReferenceSolution> {
    let w = 1.0 / sigma_w_sq;
    let ptp = p.transpose() * p * w;
    let oto = o.transpose() * o;
    let pty = p.transpose() * y * w;
    let objective = |x: &DVector<f64>| 0.5 * w * (p * x - y).norm_squared() + lambda * (o * x).lp_norm(1);
    let mut rho = ptp.trace().max(1e-300) / oto.trace().max(1e-300);
    let factor = |rho: f64| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        (&ptp + &oto * rho)
            .cholesky()
            .ok_or_else(|| invalid("σ⁻²ΦᵀΦ + ρΩᵀΩ is not positive definite"))
    };
    let mut chol = factor(rho)?;
    let d = o.nrows();
    let mut u = DVector::zeros(d);
    let mut scaled_dual = DVector::zeros(d);
    let mut last_pattern: Vec<i8> = Vec::new();
    for it in 1..=ORACLE_MAX_ITER {
        let rhs = &pty + o.transpose() * (&u - &scaled_dual) * rho;
        let x = chol.solve(&rhs);
        let ox = o * &x;
        let u_prev = u.clone();
        let shifted = &ox + &scaled_dual;
        u = shifted.map(|v| soft(v, lambda / rho));
        let primal = &ox - &u;
        scaled_dual += &primal;
        let dual_res = (o.transpose() * (&u - &u_prev)).norm() * rho;
        let primal_res = primal.norm();

        if it % 10 == 0 {
            let g = &ptp * &x - &pty;
            let v = &scaled_dual * rho;
            let stat = (&g + o.transpose() * &v).norm() / (1.0 + g.norm());
            let split = primal_res / (1.0 + ox.norm());
            if stat.max(split) <= tol && dual_res <= tol * (1.0 + g.norm()) {
                return Ok(ReferenceSolution {
                    x_star: x.iter().copied().collect(),
                    objective: objective(&x),
                    iterations: it,
                    kkt_residual: stat.max(split),
                    objective_history: Vec::new(),
                });
            }
            // Once the sign pattern settles, try the exact solve on it.
            let pattern: Vec<i8> = u.iter().map(|&v| v.signum() as i8 * (v != 0.0) as i8).collect();
            if pattern == last_pattern {
                if let Some((xp, kkt)) = polish(&ptp, &pty, o, lambda, &pattern) {
                    if kkt <= tol {
                        return Ok(ReferenceSolution {
                            objective: objective(&xp),
                            x_star: xp.iter().copied().collect(),
                            iterations: it,
                            kkt_residual: kkt,
                            objective_history: Vec::new(),
                        });
                    }
                }
            }
            last_pattern = pattern;
        }
        // residual balancing, frozen after a warm-up so the iteration settles
        if it % 50 == 0 && it <= 2000 {
            let scale_p = primal_res / (1.0 + ox.norm());
            let scale_d = dual_res / (1.0 + (o.transpose() * &scaled_dual * rho).norm());
            let new_rho = if scale_p > 10.0 * scale_d {
                rho * 2.0
            } else if scale_d > 10.0 * scale_p {
                rho / 2.0
            } else {
                rho
            };
            if new_rho != rho {
                scaled_dual *= rho / new_rho;
                rho = new_rho;
                chol = factor(rho)?;
            }
        }
    }
    Err(Error::NumericFailure(format!(
        "ADMM did not reach tol {tol} in {ORACLE_MAX_ITER} iterations"
    )))
}

/// Solves the problem restricted to a sign pattern of `Ωx` (`0` entries are
/// constrained to vanish) and returns the solution with its relative
/// stationarity residual, or `None` if the pattern is inconsistent.
fn polish(
    ptp: &DMatrix<f64>,
    pty: &DVector<f64>,
    o: &DMatrix<f64>,
    lambda: f64,
    pattern: &[i8],
) -> Option<(DVector<f64>, f64)> {
    let n = o.ncols();
    let zero: Vec<usize> = (0..pattern.len()).filter(|&k| pattern[k] == 0).collect();
    let mut sign_term = DVector::zeros(n);
    for (k, &s) in pattern.iter().enumerate() {
        if s != 0 {
            sign_term += o.row(k).transpose() * (lambda * s as f64);
        }
    }
    // null-space basis of the zero rows
    let basis = if zero.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let oz = DMatrix::from_fn(zero.len(), n, |r, c| o[(zero[r], c)]);
        let svd = oz.svd(false, true);
        let v_t = svd.v_t?;
        let s_max = svd.singular_values.amax();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * s_max).count();
        if rank >= n {
            return None;
        }
        // rows of v_t beyond the rank span the null space; v_t has min(|Z|, n) rows
        let full = if v_t.nrows() == n {
            v_t
        } else {
            let padded = DMatrix::from_fn(n, n, |r, c| if r < v_t.nrows() { v_t[(r, c)] } else { 0.0 });
            let qr = padded.transpose().qr();
            qr.q().transpose()
        };
        DMatrix::from_fn(n, n - rank, |r, c| full[(rank + c, r)])
    };
    let h = basis.transpose() * ptp * &basis;
    let rhs = basis.transpose() * (pty - &sign_term);
    let c = h.cholesky()?.solve(&rhs);
    let x = &basis * c;
    let u = o * &x;
    for (k, &s) in pattern.iter().enumerate() {
        if s != 0 && u[k] * s as f64 <= 0.0 {
            return None;
        }
    }
    let g = ptp * &x - pty;
    let fixed = &g + &sign_term;
    let mut v = DVector::zeros(pattern.len());
    if !zero.is_empty() {
        let bz = DMatrix::from_fn(n, zero.len(), |r, c| o[(zero[c], r)]);
        let vz = bz.clone().svd(true, true).solve(&(-&fixed), 1e-14).ok()?;
        for (j, &k) in zero.iter().enumerate() {
            v[k] = vz[j].clamp(-lambda, lambda);
        }
    }
    for (k, &s) in pattern.iter().enumerate() {
        if s != 0 {
            v[k] = lambda * s as f64;
        }
    }
    let residual = (&g + o.transpose() * v).norm() / (1.0 + g.norm());
    Some((x, residual))
}

/// Distance from `0` to the subdifferential of the `ℓ1`-analysis objective at
/// `x`, relative to `max(1, ‖∇f‖)` with `f = ½ σ_w⁻² ‖y - Φx‖²`.
///
/// Entries of `Ωx` with magnitude at most `zero_tol · max|Ωx|` are treated as
/// zero (free subgradient in `[-λ, λ]`); the free part is fitted by projected
/// gradient on the box.
pub fn l1_analysis_subgradient_residual(
    phi: &dyn LinearOperator,
    omega: &dyn LinearOperator,
    y: &[f64],
    lambda: f64,
    sigma_w_sq: f64,
    x: &[f64],
    zero_tol: f64,
) -> Result<f64> {
    let p = to_matrix(phi);
    let o = to_matrix(omega);
    let y = DVector::from_column_slice(y);
    let xv = DVector::from_column_slice(x);
    let (_, g) = smooth_part(&p, &y, 1.0 / sigma_w_sq, &xv);
    let u = &o * &xv;
    let u_max = u.amax();
    let free: Vec<usize> = (0..u.len()).filter(|&k| u[k].abs() <= zero_tol * u_max).collect();
    let mut fixed = g.clone();
    for k in 0..u.len() {
        if u[k].abs() > zero_tol * u_max {
            fixed += o.row(k).transpose() * (lambda * u[k].signum());
        }
    }
    let scale = g.norm().max(1.0);
    if free.is_empty() {
        return Ok(fixed.norm() / scale);
    }
    // min_v ‖fixed + B v‖, B = Ω_freeᵀ, |v| ≤ λ, by accelerated projected gradient
    let b = DMatrix::from_fn(o.ncols(), free.len(), |r, c| o[(free[c], r)]);
    let lip = (b.transpose() * &b).symmetric_eigenvalues().amax().max(1e-300);
    let mut v = DVector::zeros(free.len());
    let mut z = v.clone();
    let mut t = 1.0f64;
    let mut best = fixed.norm();
    for _ in 0..20_000 {
        let r = &fixed + &b * &z;
        let grad = b.transpose() * r;
        let v_next = (&z - grad / lip).map(|s| s.clamp(-lambda, lambda));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &v_next + (&v_next - &v) * ((t - 1.0) / t_next);
        v = v_next;
        t = t_next;
        best = best.min((&fixed + &b * &v).norm());
    }
    Ok(best / scale)
}

/// Minimizer of `f` on `[lo, hi]` by a dense grid followed by golden-section
/// refinement around the best grid point.
pub fn dense_1d_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> f64 {
    let grid = grid.max(3);
    let h = (hi - lo) / grid as f64;
    let mut best = lo;
    let mut best_val = f(lo);
    for j in 1..=grid {
        let x = lo + h * j as f64;
        let v = f(x);
        if v < best_val {
            best = x;
            best_val = v;
        }
    }
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
        if b - a < 1e-13 * (1.0 + a.abs()) {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    // The grid point may beat the bracket for piecewise functions with kinks.
    [mid, best]
        .into_iter()
        .min_by(|p, q| f(*p).total_cmp(&f(*q)))
        .unwrap_or(mid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{DenseOperator, OperatorExt};
    use crate::problems::gen_gaussian_matrix;

    #[test]
    fn dense_argmin_of_parabola() {
        let x = dense_1d_argmin(|x| (x - 0.3).powi(2), -2.0, 2.0, 1000);
        assert!((x - 0.3).abs() < 1e-7);
    }

    #[test]
    fn least_squares_when_lambda_zero() {
        let phi = gen_gaussian_matrix(12, 6, 2).unwrap();
        let omega = gen_gaussian_matrix(8, 6, 3).unwrap();
        let y: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let sol = prox_gradient_l1(&phi, &omega, &y, 0.0, 1.0, 1e-10).unwrap();
        let r: Vec<f64> = phi
            .forward(&sol.x_star)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| b - a)
            .collect();
        let normal = phi.adjoint(&r).unwrap();
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-8, "{norm}");
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let phi = gen_gaussian_matrix(5, 8, 1).unwrap();
        let omega = DenseOperator::identity(8).unwrap();
        let y = vec![1.0, -0.5, 0.2, 0.9, -1.1];
        let sol = prox_gradient_l1(&phi, &omega, &y, 1e6, 1.0, 1e-10).unwrap();
        assert!(sol.x_star.iter().all(|&v| v == 0.0));
    }
}
