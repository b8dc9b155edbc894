//! Matrix-free linear operators `A: R^n -> R^m` together with their adjoints.
//!
//! The regularization drivers only ever touch an operator through
//! [`LinearOperator::apply`] and [`LinearOperator::apply_adjoint`], so any
//! forward model with a consistent adjoint can be plugged in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::grid::Grid;
use crate::vector::{dot, norm};

/// A real linear map between finite-dimensional Euclidean spaces.
///
/// Implementors supply the unchecked `*_into` kernels; the checked
/// `apply`/`apply_adjoint` wrappers validate lengths and allocate.
pub trait LinearOperator: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;

    /// `out = A x`. Lengths are guaranteed by the caller.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// `out = A* y`. Lengths are guaranteed by the caller.
    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.domain_dim(), x.len())?;
        let mut out = vec![0.0; self.range_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.range_dim(), y.len())?;
        let mut out = vec![0.0; self.domain_dim()];
        self.apply_adjoint_into(y, &mut out);
        Ok(out)
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Dense row-major matrix of shape `range_dim x domain_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    mode: Mode,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        check_len(rows * cols, data.len())?;
        Ok(DenseOperator {
            rows,
            cols,
            data,
            mode: Mode::default(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            check_len(n, row.len())?;
            data.extend_from_slice(row);
        }
        DenseOperator::new(m, n, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        DenseOperator::new(rows, cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        DenseOperator::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        DenseOperator::from_fn(diag.len(), diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> DenseOperator {
        DenseOperator::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
            .expect("dimensions preserved")
            .with_mode(self.mode)
    }

    /// `A^T A` as a dense `cols x cols` matrix.
    pub fn gram(&self) -> DenseOperator {
        let n = self.cols;
        DenseOperator::from_fn(n, n, |i, j| {
            (0..self.rows).map(|k| self.get(k, i) * self.get(k, j)).sum()
        })
        .expect("dimensions preserved")
        .with_mode(self.mode)
    }
}

impl LinearOperator for DenseOperator {
    fn domain_dim(&self) -> usize {
        self.cols
    }

    fn range_dim(&self) -> usize {
        self.rows
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.cols;
        exec::fill(self.mode, out, cols, |i| {
            dot(&self.data[i * cols..(i + 1) * cols], x)
        });
    }

    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let (rows, cols) = (self.rows, self.cols);
        exec::fill(self.mode, out, rows, |j| {
            let mut acc = 0.0;
            for (i, yi) in y.iter().enumerate().take(rows) {
                acc += self.data[i * cols + j] * yi;
            }
            acc
        });
    }
}

/// The `n x n` Hilbert matrix, `H_ij = 1 / (i + j - 1)` with 1-based indices.
pub fn hilbert_operator(n: usize) -> Result<DenseOperator> {
    if n == 0 {
        return Err(Error::invalid("Hilbert matrix order must be at least 1"));
    }
    DenseOperator::from_fn(n, n, |i, j| 1.0 / ((i + j + 1) as f64))
}

/// How the convolution treats pixels outside the image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Wrap around (matches FFT-based convolution).
    #[default]
    Periodic,
    /// Treat outside pixels as zero; output has the input's size.
    ZeroPad,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "zero-pad" | "zero" => Ok(Boundary::ZeroPad),
            other => Err(Error::invalid(format!("unknown boundary rule `{other}`"))),
        }
    }
}

/// Spatially invariant blur of a `height x width` image by a centered kernel.
///
/// Images are flattened row-major. The adjoint is correlation with the same
/// kernel, i.e. convolution with the kernel rotated by 180 degrees, under the
/// same boundary rule.
#[derive(Debug, Clone)]
pub struct ConvolutionOperator {
    kernel: Grid,
    width: usize,
    height: usize,
    boundary: Boundary,
    mode: Mode,
}

impl ConvolutionOperator {
    /// The kernel must have odd side lengths so that it has a center pixel.
    pub fn new(kernel: Grid, width: usize, height: usize, boundary: Boundary) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if kernel.rows().is_multiple_of(2) || kernel.cols().is_multiple_of(2) {
            return Err(Error::invalid("convolution kernel must have odd side lengths"));
        }
        Ok(ConvolutionOperator {
            kernel,
            width,
            height,
            boundary,
            mode: Mode::default(),
        })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn kernel(&self) -> &Grid {
        &self.kernel
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Shared kernel for forward (`sign = -1`) and adjoint (`sign = +1`):
    /// `out[r, c] = sum_{u,v} K[u, v] * src[r + sign*(u - cu), c + sign*(v - cv)]`.
    fn correlate(&self, src: &[f64], out: &mut [f64], sign: isize) {
        let (kr, kc) = (self.kernel.rows(), self.kernel.cols());
        let rows = self.source_indices(self.height, kr, sign);
        let cols = self.source_indices(self.width, kc, sign);
        let k = self.kernel.as_slice();
        let w = self.width;
        exec::fill(self.mode, out, kr * kc, |idx| {
            let (r, c) = (idx / w, idx % w);
            let cols = &cols[c * kc..(c + 1) * kc];
            let mut acc = 0.0;
            for (u, &sr) in rows[r * kr..(r + 1) * kr].iter().enumerate() {
                if sr == OUTSIDE {
                    continue;
                }
                let src_row = &src[sr * w..(sr + 1) * w];
                for (kv, &sc) in k[u * kc..(u + 1) * kc].iter().zip(cols) {
                    if sc != OUTSIDE {
                        acc += kv * src_row[sc];
                    }
                }
            }
            acc
        });
    }

    /// `table[i * taps + t]` is the source index `i + sign * (t - taps / 2)`
    /// after applying the boundary rule, or `OUTSIDE` under zero padding.
    fn source_indices(&self, len: usize, taps: usize, sign: isize) -> Vec<usize> {
        let (len_i, center) = (len as isize, (taps / 2) as isize);
        let mut table = Vec::with_capacity(len * taps);
        for i in 0..len_i {
            for t in 0..taps as isize {
                let j = i + sign * (t - center);
                table.push(match self.boundary {
                    Boundary::Periodic => j.rem_euclid(len_i) as usize,
                    Boundary::ZeroPad if (0..len_i).contains(&j) => j as usize,
                    Boundary::ZeroPad => OUTSIDE,
                });
            }
        }
        table
    }
}

const OUTSIDE: usize = usize::MAX;

impl LinearOperator for ConvolutionOperator {
    fn domain_dim(&self) -> usize {
        self.width * self.height
    }

    fn range_dim(&self) -> usize {
        self.width * self.height
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.correlate(x, out, -1);
    }

    fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.correlate(y, out, 1);
    }
}

/// Rotationally symmetric Gaussian low-pass filter of odd side `size`,
/// normalized to unit sum.
pub fn gaussian_psf(size: usize, sigma: f64) -> Result<Grid> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!("PSF size must be odd and positive, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("PSF sigma must be positive, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let two_s2 = 2.0 * sigma * sigma;
    let raw = Grid::from_fn(size, size, |u, v| {
        let (du, dv) = (u as f64 - c, v as f64 - c);
        (-(du * du + dv * dv) / two_s2).exp()
    })?;
    let total: f64 = raw.as_slice().iter().sum();
    let data = raw.into_vec().into_iter().map(|x| x / total).collect();
    Grid::new(size, size, data)
}

/// Power-iteration estimate of the spectral norm `||A|| = sigma_max(A)`.
///
/// Runs `iters` applications of `A*A` from a seeded Gaussian start vector and
/// returns the largest `||A v||` seen over the unit iterates, so the estimate
/// is nondecreasing in `iters` and never exceeds the true norm (up to
/// rounding).
pub fn operator_norm_estimate(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs at least one iteration"));
    }
    let n = op.domain_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut av = vec![0.0; op.range_dim()];
    let mut w = vec![0.0; n];
    let mut best: f64 = 0.0;
    for _ in 0..iters {
        op.apply_into(&v, &mut av);
        op.apply_adjoint_into(&av, &mut w);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(best);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        op.apply_into(&v, &mut av);
        best = best.max(norm(&av));
    }
    Ok(best)
}
