//! Synthetic signals, operators and images for the benchmark experiments,
//! plus the NSNR recovery metric.
//!
//! All generators are pure functions of their arguments and a `u64` seed.
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`; independent draws inside one generator use distinct
//! ChaCha stream ids, so results are identical across platforms and builds.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linops::{DenseOperator, LinearOperator, Operator, OperatorExt, OperatorKind};

/// Deterministic generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Declarative description of one synthetic trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub cosparsity: Option<usize>,
    pub sparsity_rate: Option<f64>,
    /// `10 log10(‖Φx‖² / ‖w‖²)`; infinite for noiseless trials.
    pub snr_db: f64,
    pub seed: u64,
}

impl TrialSpec {
    /// Sampling ratio `δ = M/N`.
    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Uncertainty ratio `ρ = (N - L)/M`, when a cosparsity is set.
    pub fn rho(&self) -> Option<f64> {
        self.cosparsity.map(|l| (self.n as f64 - l as f64) / self.m as f64)
    }
}

/// Signal whose first differences are i.i.d. Bernoulli(`rate`)–Gaussian.
///
/// Returns `(x, u)` with `x[0] ~ N(0, 1)` and `x[i+1] = x[i] + u[i]`.
pub fn gen_bg_fd_signal_with_increments(n: usize, rate: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(invalid("sparsity rate must lie in (0, 1)"));
    }
    if n < 2 {
        return Err(invalid("signal length must be at least 2"));
    }
    let mut rng = rng_for(seed, 0);
    let mut x = Vec::with_capacity(n);
    x.push(normal(&mut rng));
    let mut u = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let active = rng.random::<f64>() < rate;
        let amplitude = normal(&mut rng);
        let step = if active { amplitude } else { 0.0 };
        u.push(step);
        x.push(x[i] + step);
    }
    Ok((x, u))
}

pub fn gen_bg_fd_signal(n: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    gen_bg_fd_signal_with_increments(n, rate, seed).map(|(x, _)| x)
}

/// Dense `m × n` matrix with i.i.d. `N(0, 1/m)` entries.
pub fn gen_gaussian_matrix(m: usize, n: usize, seed: u64) -> Result<DenseOperator> {
    if m == 0 || n == 0 {
        return Err(invalid("matrix dimensions must be positive"));
    }
    let mut rng = rng_for(seed, 1);
    let scale = 1.0 / (m as f64).sqrt();
    let data = (0..m * n).map(|_| scale * normal(&mut rng)).collect();
    DenseOperator::with_kind(m, n, data, OperatorKind::IidGaussian)
}

/// Analysis operator built from a random almost-uniform, almost-tight frame,
/// together with the quality it achieved.
#[derive(Debug, Clone)]
pub struct TightFrame {
    pub operator: DenseOperator,
    /// Largest `|σ_k / √(d/n) - 1|` over the singular values of `Ω`.
    pub tightness_error: f64,
    pub min_row_norm: f64,
    pub max_row_norm: f64,
}

const FRAME_ROUNDS: usize = 20;

/// Random `d × n` analysis operator `Ω` (so `Ωᵀ` is an `n × d` frame).
///
/// Starting from i.i.d. Gaussian entries, 20 rounds alternate between the
/// nearest matrix with `ΩᵀΩ = (d/n) I` (polar factor scaled by `√(d/n)`) and
/// normalizing every row to unit norm.
pub fn gen_tight_frame(n: usize, d: usize, seed: u64) -> Result<TightFrame> {
    if n == 0 || d < n {
        return Err(invalid("tight frame needs d >= n >= 1"));
    }
    let mut rng = rng_for(seed, 2);
    let mut g = DMatrix::from_fn(d, n, |_, _| normal(&mut rng));
    let target = (d as f64 / n as f64).sqrt();
    for _ in 0..FRAME_ROUNDS {
        let svd = g.clone().svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::NumericFailure("frame SVD failed".to_string())),
        };
        g = (u * v_t) * target;
        for mut row in g.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    let singular = g.singular_values();
    let tightness_error = singular.iter().map(|s| (s / target - 1.0).abs()).fold(0.0, f64::max);
    let norms: Vec<f64> = g.row_iter().map(|r| r.norm()).collect();
    let min_row_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_row_norm = norms.iter().copied().fold(0.0, f64::max);
    let data: Vec<f64> = (0..d)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| g[(i, j)])
        .collect();
    Ok(TightFrame {
        operator: DenseOperator::with_kind(d, n, data, OperatorKind::Frame)?,
        tightness_error,
        min_row_norm,
        max_row_norm,
    })
}

#[derive(Debug, Clone)]
pub struct CosparseSignal {
    /// Unit-norm signal.
    pub x: Vec<f64>,
    /// Sorted rows of `Ω` on which `Ωx` vanishes.
    pub cosupport: Vec<usize>,
}

const COSPARSE_RETRIES: usize = 100;

/// Unit-norm `x` with `[Ωx]_d = 0` on a uniformly drawn cosupport of size `l`.
///
/// A Gaussian vector is projected onto the null space of the selected rows,
/// using the right singular vectors of that row block.
pub fn gen_cosparse_signal(omega: &dyn LinearOperator, l: usize, seed: u64) -> Result<CosparseSignal> {
    let (d, n) = (omega.rows(), omega.cols());
    if l > d {
        return Err(invalid(format!("cosparsity {l} exceeds {d} analysis rows")));
    }
    let mut rng = rng_for(seed, 3);
    for _ in 0..COSPARSE_RETRIES {
        let mut cosupport = sample(&mut rng, d, l).into_vec();
        cosupport.sort_unstable();
        let g: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        if l == 0 {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(CosparseSignal {
                x: g.iter().map(|v| v / norm).collect(),
                cosupport,
            });
        }
        let mut e = vec![0.0; d];
        let mut block = DMatrix::zeros(l, n);
        for (k, &row) in cosupport.iter().enumerate() {
            e[row] = 1.0;
            let r = omega.adjoint(&e)?;
            e[row] = 0.0;
            for j in 0..n {
                block[(k, j)] = r[j];
            }
        }
        let svd = block.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::NumericFailure("cosupport SVD failed".to_string()))?;
        let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = s_max * 1e-10 * (l.max(n) as f64);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank >= n {
            continue;
        }
        let basis: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > tol)
            .collect();
        let mut x = g;
        for _ in 0..2 {
            for &k in &basis {
                let v = v_t.row(k);
                let c: f64 = (0..n).map(|j| v[j] * x[j]).sum();
                for j in 0..n {
                    x[j] -= c * v[j];
                }
            }
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-8) {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let u = omega.forward(&x)?;
        let worst = cosupport.iter().map(|&k| u[k].abs()).fold(0.0, f64::max);
        if worst <= 1e-10 {
            return Ok(CosparseSignal { x, cosupport });
        }
    }
    Err(Error::NumericFailure(format!(
        "no cosupport of size {l} with a nontrivial null space after {COSPARSE_RETRIES} draws"
    )))
}

/// One ellipse of the phantom: intensity, semi-axes, center, rotation (deg).
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

/// The 10-ellipse Shepp–Logan table with the contrast-enhanced ("modified")
/// intensities that keep the image inside `[0, 1]`.
pub const SHEPP_LOGAN_ELLIPSES: [Ellipse; 10] = [
    Ellipse {
        intensity: 1.0,
        a: 0.69,
        b: 0.92,
        x0: 0.0,
        y0: 0.0,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.8,
        a: 0.6624,
        b: 0.874,
        x0: 0.0,
        y0: -0.0184,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.11,
        b: 0.31,
        x0: 0.22,
        y0: 0.0,
        phi_deg: -18.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.16,
        b: 0.41,
        x0: -0.22,
        y0: 0.0,
        phi_deg: 18.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.21,
        b: 0.25,
        x0: 0.0,
        y0: 0.35,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: 0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: -0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.023,
        x0: -0.08,
        y0: -0.605,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.023,
        x0: 0.0,
        y0: -0.606,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.046,
        x0: 0.06,
        y0: -0.605,
        phi_deg: 0.0,
    },
];

/// Coordinates of pixel `(row, col)` on `[-1, 1]²`, `y` pointing up.
pub fn pixel_coordinates(n: usize, row: usize, col: usize) -> (f64, f64) {
    let half = (n as f64 - 1.0) / 2.0;
    let x = (col as f64 - half) / half;
    let y = (half - row as f64) / half;
    (x, y)
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Row-major `n × n` Shepp–Logan phantom with values clipped to `[0, 1]`.
pub fn shepp_logan(n: usize) -> Result<Vec<f64>> {
    if n < 8 {
        return Err(invalid("phantom needs n >= 8"));
    }
    let mut img = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let (x, y) = pixel_coordinates(n, row, col);
            let v: f64 = SHEPP_LOGAN_ELLIPSES
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
            img[row * n + col] = v.clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Noise variance per entry that puts `z` at `snr_db`.
pub fn awgn_noise_var(z: &[f64], snr_db: f64) -> f64 {
    let energy: f64 = z.iter().map(|v| v * v).sum();
    energy / (z.len() as f64 * 10f64.powf(snr_db / 10.0))
}

/// `z + w` with Gaussian `w` rescaled so that `‖z‖²/‖w‖² = 10^(snr_db/10)`
/// holds for the realized draw. An infinite `snr_db` returns `z` unchanged.
pub fn add_awgn(z: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    let energy: f64 = z.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(invalid("cannot set an SNR on an all-zero signal"));
    }
    if snr_db == f64::INFINITY {
        return Ok(z.to_vec());
    }
    if snr_db.is_nan() {
        return Err(invalid("snr_db is NaN"));
    }
    let mut rng = rng_for(seed, 4);
    let w: Vec<f64> = z.iter().map(|_| normal(&mut rng)).collect();
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let scale = (energy / (w_energy * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(z.iter().zip(&w).map(|(a, b)| a + scale * b).collect())
}

/// `‖x‖² / ‖x̂ - x‖²`; infinite when `x̂ = x`.
pub fn nsnr(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(invalid("NSNR is undefined for an all-zero reference"));
    }
    let err: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if err == 0.0 { f64::INFINITY } else { energy / err })
}

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Convenience: the operator form of a Gaussian measurement matrix.
pub fn gaussian_operator(m: usize, n: usize, seed: u64) -> Result<Operator> {
    Ok(gen_gaussian_matrix(m, n, seed)?.into_operator())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::make_fd1d;

    #[test]
    fn nsnr_examples() {
        assert_eq!(nsnr(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), f64::INFINITY);
        assert_eq!(nsnr(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(nsnr(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(nsnr(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn awgn_hits_target_snr() {
        let z: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = add_awgn(&z, 60.0, 9).unwrap();
        let w: f64 = y.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        let e: f64 = z.iter().map(|v| v * v).sum();
        assert!((to_db(e / w) - 60.0).abs() < 1e-9);
        assert_eq!(add_awgn(&z, f64::INFINITY, 9).unwrap(), z);
        assert_eq!(add_awgn(&z, 60.0, 9).unwrap(), y);
        assert!(add_awgn(&[0.0; 4], 10.0, 1).is_err());
    }

    #[test]
    fn bg_fd_signal_differences_match_increments() {
        let (x, u) = gen_bg_fd_signal_with_increments(300, 0.05, 4).unwrap();
        let d = make_fd1d(300).unwrap().forward(&x).unwrap();
        for (a, b) in d.iter().zip(&u) {
            if *b == 0.0 {
                assert_eq!(*a, 0.0);
            } else {
                assert!((a - b).abs() <= 1e-12 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
            }
        }
        assert_eq!(gen_bg_fd_signal(300, 0.05, 4).unwrap(), x);
        assert!(gen_bg_fd_signal(10, 0.0, 1).is_err());
        assert!(gen_bg_fd_signal(10, 1.0, 1).is_err());
    }

    #[test]
    fn square_frame_is_orthogonal() {
        let f = gen_tight_frame(12, 12, 3).unwrap();
        let dense = nalgebra::DMatrix::from_row_slice(12, 12, f.operator.data());
        let gram = dense.transpose() * &dense;
        let err = (gram - nalgebra::DMatrix::identity(12, 12)).abs().max();
        assert!(err < 1e-8);
    }

    #[test]
    fn overcomplete_frame_quality() {
        let f = gen_tight_frame(40, 60, 8).unwrap();
        assert!(f.min_row_norm >= 0.99 && f.max_row_norm <= 1.01);
        assert!(f.tightness_error < 0.05, "{}", f.tightness_error);
    }

    #[test]
    fn cosparse_zero_and_norm() {
        let f = gen_tight_frame(30, 36, 1).unwrap();
        let s = gen_cosparse_signal(&f.operator, 20, 5).unwrap();
        let norm: f64 = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let u = f.operator.forward(&s.x).unwrap();
        for &k in &s.cosupport {
            assert!(u[k].abs() <= 1e-10);
        }
        let free = gen_cosparse_signal(&f.operator, 0, 5).unwrap();
        assert!(free.cosupport.is_empty());
        assert!(gen_cosparse_signal(&f.operator, 37, 5).is_err());
    }

    #[test]
    fn phantom_basics() {
        let img = shepp_logan(64).unwrap();
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img[0], 0.0);
        assert_eq!(img[63], 0.0);
        assert_eq!(img[63 * 64], 0.0);
        assert_eq!(img[64 * 64 - 1], 0.0);
        assert!(shepp_logan(7).is_err());
    }
}
