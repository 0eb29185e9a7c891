//! Matrix-free linear operators.
//!
//! Every operator supplies the four applications the message-passing
//! iteration needs: `A v`, `Aᵀ w`, `|A|² v` and `|A|²ᵀ w`, where `|A|²` is the
//! matrix of squared entries. Operators are immutable once built and are
//! shared as [`Operator`] (`Arc<dyn LinearOperator>`).
//!
//! Images are vectorized row-major: pixel `(r, c)` of an `h × w` image lives at
//! index `r * w + c`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, invalid, Result};

/// Shared handle to an immutable operator.
pub type Operator = Arc<dyn LinearOperator>;

/// Implementation tag of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Dense,
    Stacked,
    Fd1d,
    Fd2d,
    PartialFourierRealified,
    IidGaussian,
    Frame,
}

/// How the squared applications are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SquaredMode {
    /// Exact `|a_in|²` sums.
    Exact,
    /// Every `|a_in|²` replaced by `frobenius_norm_sq / (rows * cols)`.
    UniformScalar { frobenius_norm_sq: f64 },
}

/// A real linear map `ℝ^cols → ℝ^rows`.
///
/// The `apply_*` methods assume correctly sized slices; the checked,
/// allocating wrappers live on [`OperatorExt`].
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn kind(&self) -> OperatorKind;

    fn apply_forward(&self, v: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]);
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]);
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]);

    fn squared_mode(&self) -> SquaredMode {
        SquaredMode::Exact
    }

    /// `Σ_{i,n} |a_in|²`.
    fn frobenius_norm_sq(&self) -> f64 {
        let ones = vec![1.0; self.cols()];
        let mut out = vec![0.0; self.rows()];
        self.apply_squared_forward(&ones, &mut out);
        out.iter().sum()
    }
}

/// Checked, allocating applications available on every operator.
pub trait OperatorExt: LinearOperator {
    fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v.len(), self.cols())?;
        let mut out = vec![0.0; self.rows()];
        self.apply_forward(v, &mut out);
        Ok(out)
    }

    fn adjoint(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(w.len(), self.rows())?;
        let mut out = vec![0.0; self.cols()];
        self.apply_adjoint(w, &mut out);
        Ok(out)
    }

    fn squared_forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v.len(), self.cols())?;
        let mut out = vec![0.0; self.rows()];
        self.apply_squared_forward(v, &mut out);
        Ok(out)
    }

    fn squared_adjoint(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(w.len(), self.rows())?;
        let mut out = vec![0.0; self.cols()];
        self.apply_squared_adjoint(w, &mut out);
        Ok(out)
    }
}

impl<T: LinearOperator + ?Sized> OperatorExt for T {}

/// Builds the dense matrix of `op` column by column from `forward` on the
/// canonical basis.
pub fn materialize(op: &dyn LinearOperator) -> DenseOperator {
    let (rows, cols) = (op.rows(), op.cols());
    let mut data = vec![0.0; rows * cols];
    let mut e = vec![0.0; cols];
    let mut col = vec![0.0; rows];
    for n in 0..cols {
        e[n] = 1.0;
        op.apply_forward(&e, &mut col);
        e[n] = 0.0;
        for (i, &value) in col.iter().enumerate() {
            data[i * cols + n] = value;
        }
    }
    DenseOperator::from_parts(rows, cols, data, OperatorKind::Dense)
}

/// Row-major dense matrix.
#[derive(Clone)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    squared: Vec<f64>,
    kind: OperatorKind,
}

impl fmt::Debug for DenseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseOperator")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("kind", &self.kind)
            .finish()
    }
}

impl DenseOperator {
    /// Wraps `data` (row-major, `rows * cols` entries).
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_kind(rows, cols, data, OperatorKind::Dense)
    }

    pub fn with_kind(rows: usize, cols: usize, data: Vec<f64>, kind: OperatorKind) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("dense operator needs positive dimensions"));
        }
        check_len(data.len(), rows * cols)?;
        Ok(Self::from_parts(rows, cols, data, kind))
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(n, n, data)
    }

    fn from_parts(rows: usize, cols: usize, data: Vec<f64>, kind: OperatorKind) -> Self {
        let squared = data.iter().map(|a| a * a).collect();
        Self {
            rows,
            cols,
            data,
            squared,
            kind,
        }
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.data[i * self.cols + n]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_operator(self) -> Operator {
        Arc::new(self)
    }
}

fn dense_forward(rows: usize, cols: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &m[i * cols..(i + 1) * cols];
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn dense_adjoint(rows: usize, cols: usize, m: &[f64], w: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (i, &wi) in w.iter().enumerate().take(rows) {
        if wi == 0.0 {
            continue;
        }
        let row = &m[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * wi;
        }
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn kind(&self) -> OperatorKind {
        self.kind
    }
    fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        dense_forward(self.rows, self.cols, &self.data, v, out);
    }
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]) {
        dense_adjoint(self.rows, self.cols, &self.data, w, out);
    }
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]) {
        dense_forward(self.rows, self.cols, &self.squared, v, out);
    }
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]) {
        dense_adjoint(self.rows, self.cols, &self.squared, w, out);
    }
    fn frobenius_norm_sq(&self) -> f64 {
        self.squared.iter().sum()
    }
}

/// Vertical concatenation `[top; bottom]`.
#[derive(Debug, Clone)]
pub struct StackedOperator {
    top: Operator,
    bottom: Operator,
}

impl StackedOperator {
    pub fn top(&self) -> &Operator {
        &self.top
    }
    pub fn bottom(&self) -> &Operator {
        &self.bottom
    }
}

/// Stacks two operators sharing a column count.
pub fn stack(top: Operator, bottom: Operator) -> Result<Operator> {
    if top.cols() != bottom.cols() {
        return Err(invalid(format!(
            "cannot stack operators with {} and {} columns",
            top.cols(),
            bottom.cols()
        )));
    }
    Ok(Arc::new(StackedOperator { top, bottom }))
}

impl LinearOperator for StackedOperator {
    fn rows(&self) -> usize {
        self.top.rows() + self.bottom.rows()
    }
    fn cols(&self) -> usize {
        self.top.cols()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Stacked
    }
    fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        let (a, b) = out.split_at_mut(self.top.rows());
        self.top.apply_forward(v, a);
        self.bottom.apply_forward(v, b);
    }
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]) {
        let (wa, wb) = w.split_at(self.top.rows());
        self.top.apply_adjoint(wa, out);
        let mut tmp = vec![0.0; out.len()];
        self.bottom.apply_adjoint(wb, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]) {
        let (a, b) = out.split_at_mut(self.top.rows());
        self.top.apply_squared_forward(v, a);
        self.bottom.apply_squared_forward(v, b);
    }
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]) {
        let (wa, wb) = w.split_at(self.top.rows());
        self.top.apply_squared_adjoint(wa, out);
        let mut tmp = vec![0.0; out.len()];
        self.bottom.apply_squared_adjoint(wb, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    }
    fn frobenius_norm_sq(&self) -> f64 {
        self.top.frobenius_norm_sq() + self.bottom.frobenius_norm_sq()
    }
}

/// Replaces the squared applications of `inner` with the uniform-scalar
/// approximation, preserving `Σ|a_in|²`.
#[derive(Debug, Clone)]
pub struct UniformSquared {
    inner: Operator,
    frobenius_norm_sq: f64,
}

impl UniformSquared {
    /// Uses the exact Frobenius norm of `inner`.
    pub fn new(inner: Operator) -> Operator {
        let frobenius_norm_sq = inner.frobenius_norm_sq();
        Arc::new(Self {
            inner,
            frobenius_norm_sq,
        })
    }
}

fn uniform_fill(frobenius_norm_sq: f64, rows: usize, cols: usize, input: &[f64], out: &mut [f64]) {
    let scale = frobenius_norm_sq / (rows as f64 * cols as f64);
    let value = scale * input.iter().sum::<f64>();
    out.fill(value);
}

impl LinearOperator for UniformSquared {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn kind(&self) -> OperatorKind {
        self.inner.kind()
    }
    fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply_forward(v, out);
    }
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]) {
        self.inner.apply_adjoint(w, out);
    }
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]) {
        uniform_fill(self.frobenius_norm_sq, self.rows(), self.cols(), v, out);
    }
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]) {
        uniform_fill(self.frobenius_norm_sq, self.rows(), self.cols(), w, out);
    }
    fn squared_mode(&self) -> SquaredMode {
        SquaredMode::UniformScalar {
            frobenius_norm_sq: self.frobenius_norm_sq,
        }
    }
    fn frobenius_norm_sq(&self) -> f64 {
        self.frobenius_norm_sq
    }
}

/// Rows of the form `x[to] - x[from]`, one per index pair. Backs both finite
/// difference constructors.
#[derive(Clone)]
pub struct PairDifference {
    cols: usize,
    pairs: Vec<(usize, usize)>,
    kind: OperatorKind,
}

impl fmt::Debug for PairDifference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairDifference")
            .field("rows", &self.pairs.len())
            .field("cols", &self.cols)
            .field("kind", &self.kind)
            .finish()
    }
}

impl PairDifference {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

impl LinearOperator for PairDifference {
    fn rows(&self) -> usize {
        self.pairs.len()
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn kind(&self) -> OperatorKind {
        self.kind
    }
    fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        for (o, &(from, to)) in out.iter_mut().zip(&self.pairs) {
            *o = v[to] - v[from];
        }
    }
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&wk, &(from, to)) in w.iter().zip(&self.pairs) {
            out[from] -= wk;
            out[to] += wk;
        }
    }
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]) {
        for (o, &(from, to)) in out.iter_mut().zip(&self.pairs) {
            *o = v[to] + v[from];
        }
    }
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&wk, &(from, to)) in w.iter().zip(&self.pairs) {
            out[from] += wk;
            out[to] += wk;
        }
    }
    fn frobenius_norm_sq(&self) -> f64 {
        2.0 * self.pairs.len() as f64
    }
}

/// `(n-1) × n` first-difference operator, row `i` computing `x[i+1] - x[i]`.
pub fn make_fd1d(n: usize) -> Result<Operator> {
    if n < 2 {
        return Err(invalid("fd1d needs n >= 2"));
    }
    let pairs = (0..n - 1).map(|i| (i, i + 1)).collect();
    Ok(Arc::new(PairDifference {
        cols: n,
        pairs,
        kind: OperatorKind::Fd1d,
    }))
}

/// Neighbor direction for 2D finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// `(r, c) → (r, c+1)`
    Horizontal,
    /// `(r, c) → (r+1, c)`
    Vertical,
    /// `(r, c) → (r+1, c+1)`
    Diagonal,
    /// `(r, c+1) → (r+1, c)`
    Antidiagonal,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Horizontal,
        Direction::Vertical,
        Direction::Diagonal,
        Direction::Antidiagonal,
    ];
}

/// Stack of valid-region 2D differences over a row-major `h × w` image, one
/// block per direction in the order given. Pairs that would leave the image
/// are omitted.
pub fn make_fd2d(h: usize, w: usize, directions: &[Direction]) -> Result<Operator> {
    if h < 2 || w < 2 {
        return Err(invalid("fd2d needs h, w >= 2"));
    }
    if directions.is_empty() {
        return Err(invalid("fd2d needs at least one direction"));
    }
    let idx = |r: usize, c: usize| r * w + c;
    let mut pairs = Vec::new();
    for dir in directions {
        match dir {
            Direction::Horizontal => {
                for r in 0..h {
                    for c in 0..w - 1 {
                        pairs.push((idx(r, c), idx(r, c + 1)));
                    }
                }
            }
            Direction::Vertical => {
                for r in 0..h - 1 {
                    for c in 0..w {
                        pairs.push((idx(r, c), idx(r + 1, c)));
                    }
                }
            }
            Direction::Diagonal => {
                for r in 0..h - 1 {
                    for c in 0..w - 1 {
                        pairs.push((idx(r, c), idx(r + 1, c + 1)));
                    }
                }
            }
            Direction::Antidiagonal => {
                for r in 0..h - 1 {
                    for c in 0..w - 1 {
                        pairs.push((idx(r, c + 1), idx(r + 1, c)));
                    }
                }
            }
        }
    }
    Ok(Arc::new(PairDifference {
        cols: h * w,
        pairs,
        kind: OperatorKind::Fd2d,
    }))
}

/// Realified partial 2D DFT of an `n × n` image.
///
/// For selected frequencies `k` the output is `[Re(X_k)/n ..., Im(X_k)/n ...]`
/// with `X = DFT2(x)`, so the full selection is an orthogonal map. Squared
/// applications use the uniform-scalar mode with the closed-form Frobenius norm
/// (each frequency contributes exactly 1 across its real and imaginary rows).
pub struct PartialFourier {
    n: usize,
    frequencies: Vec<(usize, usize)>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PartialFourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartialFourier")
            .field("n", &self.n)
            .field("frequencies", &self.frequencies.len())
            .finish()
    }
}

impl PartialFourier {
    /// Selects arbitrary `(row, col)` DFT indices; duplicates are dropped.
    pub fn new(n: usize, frequencies: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(invalid("partial Fourier needs n >= 2"));
        }
        let set: BTreeSet<(usize, usize)> = frequencies.into_iter().collect();
        if set.is_empty() {
            return Err(invalid("no frequencies selected"));
        }
        if set.iter().any(|&(r, c)| r >= n || c >= n) {
            return Err(invalid("frequency index out of range"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            frequencies: set.into_iter().collect(),
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        })
    }

    pub fn frequencies(&self) -> &[(usize, usize)] {
        &self.frequencies
    }

    pub fn side(&self) -> usize {
        self.n
    }

    fn fft2(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in buf.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                column[r] = buf[r * n + c];
            }
            plan.process(&mut column);
            for r in 0..n {
                buf[r * n + c] = column[r];
            }
        }
    }
}

impl LinearOperator for PartialFourier {
    fn rows(&self) -> usize {
        2 * self.frequencies.len()
    }
    fn cols(&self) -> usize {
        self.n * self.n
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::PartialFourierRealified
    }
    fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft2(&mut buf, &self.fft);
        let scale = 1.0 / n as f64;
        let k = self.frequencies.len();
        for (j, &(r, c)) in self.frequencies.iter().enumerate() {
            let x = buf[r * n + c];
            out[j] = x.re * scale;
            out[k + j] = x.im * scale;
        }
    }
    fn apply_adjoint(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        let k = self.frequencies.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for (j, &(r, c)) in self.frequencies.iter().enumerate() {
            buf[r * n + c] = Complex64::new(w[j], w[k + j]);
        }
        self.fft2(&mut buf, &self.ifft);
        let scale = 1.0 / n as f64;
        for (o, x) in out.iter_mut().zip(&buf) {
            *o = x.re * scale;
        }
    }
    fn apply_squared_forward(&self, v: &[f64], out: &mut [f64]) {
        uniform_fill(self.frobenius_norm_sq(), self.rows(), self.cols(), v, out);
    }
    fn apply_squared_adjoint(&self, w: &[f64], out: &mut [f64]) {
        uniform_fill(self.frobenius_norm_sq(), self.rows(), self.cols(), w, out);
    }
    fn squared_mode(&self) -> SquaredMode {
        SquaredMode::UniformScalar {
            frobenius_norm_sq: self.frobenius_norm_sq(),
        }
    }
    fn frobenius_norm_sq(&self) -> f64 {
        self.frequencies.len() as f64
    }
}

/// Frequencies of an `n × n` grid on `lines` equally angled lines through DC.
///
/// Line `l` has angle `π l / lines`. Each line is walked one grid step at a
/// time along its dominant axis over centered coordinates `[-n/2, n/2)`; the
/// other coordinate is rounded to the nearest integer and both are wrapped
/// modulo `n`.
pub fn radial_line_frequencies(n: usize, lines: usize) -> Result<Vec<(usize, usize)>> {
    if n < 2 || !n.is_power_of_two() {
        return Err(invalid("radial sampling needs n a power of two"));
    }
    if lines == 0 {
        return Err(invalid("need at least one radial line"));
    }
    if lines > 2 * n {
        return Err(invalid(format!(
            "{lines} lines exceed the {} distinct lines of a {n}x{n} grid",
            2 * n
        )));
    }
    let half = (n / 2) as i64;
    let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
    let mut set = BTreeSet::new();
    for l in 0..lines {
        let theta = PI * l as f64 / lines as f64;
        let (s, c) = theta.sin_cos();
        for t in -half..half {
            let (kx, ky) = if c.abs() >= s.abs() {
                (t, (t as f64 * s / c).round() as i64)
            } else {
                ((t as f64 * c / s).round() as i64, t)
            };
            // (ky, kx) = (row, col)
            set.insert((wrap(ky), wrap(kx)));
        }
    }
    Ok(set.into_iter().collect())
}

/// Realified 2D-DFT samples of an `n × n` image on `lines` radial lines.
///
/// `seed` is accepted for interface stability; the equally-angled pattern is
/// deterministic and does not consume it.
pub fn make_partial_fourier_radial(n: usize, lines: usize, _seed: u64) -> Result<Operator> {
    let frequencies = radial_line_frequencies(n, lines)?;
    Ok(Arc::new(PartialFourier::new(n, frequencies)?))
}
