//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

#[derive(Debug, Clone)]
pub struct QuadratureResult<const K: usize> {
    pub value: [f64; K],
    pub error: [f64; K],
    pub intervals: usize,
}

struct Segment<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: [f64; K],
    // largest error relative to its component tolerance scale; heap key
    key: f64,
}

impl<const K: usize> PartialEq for Segment<K> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<const K: usize> Eq for Segment<K> {}
impl<const K: usize> PartialOrd for Segment<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<const K: usize> Ord for Segment<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.total_cmp(&other.key)
    }
}

fn kronrod<const K: usize, F>(f: &F, a: f64, b: f64) -> Result<([f64; K], [f64; K])>
where
    F: Fn(f64) -> [f64; K],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut gk = [0.0; K];
    let mut g = [0.0; K];
    let eval = |x: f64| -> Result<[f64; K]> {
        let v = f(x);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NumericFailure(format!("non-finite integrand at {x}")));
        }
        Ok(v)
    };
    let fc = eval(center)?;
    for k in 0..K {
        gk[k] = WGK[7] * fc[k];
        g[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        for k in 0..K {
            let s = f1[k] + f2[k];
            gk[k] += WGK[j] * s;
            if j % 2 == 1 {
                g[k] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; K];
    let mut error = [0.0; K];
    for k in 0..K {
        value[k] = gk[k] * half;
        error[k] = ((gk[k] - g[k]) * half).abs();
    }
    Ok((value, error))
}

/// Integrates every component of `f` over `[a, b]`, starting from the
/// sub-intervals delimited by `breakpoints` (values outside `(a, b)` are
/// ignored) and bisecting the worst interval until each component meets
/// `max(abs[k], rel * |I_k|)`.
pub fn integrate<const K: usize, F>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs: [f64; K],
    rel: f64,
    max_intervals: usize,
) -> Result<QuadratureResult<K>>
where
    F: Fn(f64) -> [f64; K],
{
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![a];
    edges.extend(cuts);
    edges.push(b);

    let key_of = |error: &[f64; K]| -> f64 {
        (0..K)
            .map(|k| error[k] / abs[k].max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    };
    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        let (value, error) = kronrod(&f, w[0], w[1])?;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
            key: key_of(&error),
        });
    }

    loop {
        let mut total = [0.0; K];
        let mut total_err = [0.0; K];
        for s in heap.iter() {
            for k in 0..K {
                total[k] += s.value[k];
                total_err[k] += s.error[k];
            }
        }
        let done = (0..K).all(|k| total_err[k] <= abs[k].max(rel * total[k].abs()));
        if done {
            return Ok(QuadratureResult {
                value: total,
                error: total_err,
                intervals: heap.len(),
            });
        }
        if heap.len() >= max_intervals {
            return Err(Error::NumericFailure(format!(
                "quadrature did not converge in {max_intervals} intervals (error {total_err:?})"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::NumericFailure("quadrature interval collapsed".to_string()));
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = kronrod(&f, lo, hi)?;
            heap.push(Segment {
                a: lo,
                b: hi,
                value,
                error,
                key: key_of(&error),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| [1.0, x, x * x], 0.0, 2.0, &[], [1e-14; 3], 1e-14, 50).unwrap();
        assert!((r.value[0] - 2.0).abs() < 1e-14);
        assert!((r.value[1] - 2.0).abs() < 1e-14);
        assert!((r.value[2] - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_mass() {
        let s2pi = (2.0 * std::f64::consts::PI).sqrt();
        let r = integrate(|x| [(-0.5 * x * x).exp() / s2pi], -12.0, 12.0, &[], [1e-13], 1e-13, 200).unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kink_with_breakpoint() {
        let r = integrate(|x: f64| [x.abs()], -1.0, 2.0, &[0.0], [1e-14], 1e-14, 10).unwrap();
        assert!((r.value[0] - 2.5).abs() < 1e-14);
        assert_eq!(r.intervals, 2);
    }

    #[test]
    fn nan_integrand_fails() {
        let r = integrate(|_| [f64::NAN], 0.0, 1.0, &[], [1e-12], 1e-12, 10);
        assert!(matches!(r, Err(Error::NumericFailure(_))));
    }
}
