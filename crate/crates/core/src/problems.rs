//! Benchmark problems and noise injection.
//!
//! Noise is drawn from ChaCha8 (`rand_chacha::ChaCha8Rng`, seeded with
//! `seed_from_u64`) through a standard normal sampler, so a given seed yields
//! the same data on every platform.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linop::{gaussian_psf, hilbert_operator, Boundary, ConvolutionOperator, LinearOperator};
use crate::vector::norm;

/// A linear inverse problem with noisy data `||y_delta - y_exact|| <= delta`.
#[derive(Clone)]
pub struct Problem {
    pub operator: Arc<dyn LinearOperator>,
    pub y_exact: Vec<f64>,
    pub y_delta: Vec<f64>,
    pub delta: f64,
    pub x_star: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub seed: u64,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("domain_dim", &self.operator.domain_dim())
            .field("range_dim", &self.operator.range_dim())
            .field("delta", &self.delta)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Builds a problem from an operator and ground truth; `y_exact = A x_star`.
    pub fn from_ground_truth(
        operator: Arc<dyn LinearOperator>,
        x_star: Vec<f64>,
        relative_level: f64,
        seed: u64,
        x0: Option<Vec<f64>>,
    ) -> Result<Self> {
        let y_exact = operator.apply(&x_star)?;
        let (y_delta, delta) = add_noise(&y_exact, relative_level, seed)?;
        let x0 = match x0 {
            Some(x0) => {
                crate::linop::check_len(operator.domain_dim(), x0.len())?;
                x0
            }
            None => vec![0.0; operator.domain_dim()],
        };
        Ok(Problem {
            operator,
            y_exact,
            y_delta,
            delta,
            x_star: Some(x_star),
            x0,
            seed,
        })
    }

    pub fn initial_residual(&self) -> f64 {
        let ax = self.operator.apply(&self.x0).expect("x0 has domain dimension");
        norm(&crate::vector::sub(&ax, &self.y_delta))
    }
}

/// Adds seeded Gaussian noise rescaled so that
/// `||y_delta - y|| = relative_level * ||y||` exactly (up to rounding).
/// Returns `(y_delta, delta)`.
pub fn add_noise(y: &[f64], relative_level: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !(relative_level >= 0.0 && relative_level.is_finite()) {
        return Err(Error::invalid(format!(
            "relative noise level must be nonnegative, got {relative_level}"
        )));
    }
    if relative_level == 0.0 {
        return Ok((y.to_vec(), 0.0));
    }
    let y_norm = norm(y);
    if y_norm == 0.0 {
        return Err(Error::invalid("cannot add relative noise to zero data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let delta = relative_level * y_norm;
    let scale = delta / norm(&noise);
    let y_delta = y.iter().zip(&noise).map(|(yi, ni)| yi + scale * ni).collect();
    Ok((y_delta, delta))
}

/// Ground truth for the Hilbert benchmark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XStar {
    /// All ones.
    #[default]
    Ones,
    /// `x_i = i / n`, `i = 1..n`.
    Ramp,
}

impl XStar {
    pub fn generate(self, n: usize) -> Vec<f64> {
        match self {
            XStar::Ones => vec![1.0; n],
            XStar::Ramp => (1..=n).map(|i| i as f64 / n as f64).collect(),
        }
    }
}

impl std::str::FromStr for XStar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(XStar::Ones),
            "ramp" => Ok(XStar::Ramp),
            other => Err(Error::invalid(format!("unknown ground truth `{other}`"))),
        }
    }
}

/// Hilbert system `H x = y` of order `n`; starts from `x0 = 0`.
pub fn make_hilbert_problem(n: usize, x_star: XStar, relative_level: f64, seed: u64) -> Result<Problem> {
    if n < 2 {
        return Err(Error::invalid("Hilbert benchmark needs n >= 2"));
    }
    let op = Arc::new(hilbert_operator(n)?);
    Problem::from_ground_truth(op, x_star.generate(n), relative_level, seed, None)
}

/// Gaussian-blur deblurring of `image`; starts from the noisy blurred image.
pub fn make_deblur_problem(
    image: &Grid,
    psf_size: usize,
    sigma: f64,
    boundary: Boundary,
    relative_level: f64,
    seed: u64,
) -> Result<Problem> {
    if image.is_empty() {
        return Err(Error::invalid("image is empty"));
    }
    let psf = gaussian_psf(psf_size, sigma)?;
    let op = Arc::new(ConvolutionOperator::new(psf, image.cols(), image.rows(), boundary)?);
    let mut problem = Problem::from_ground_truth(op, image.as_slice().to_vec(), relative_level, seed, None)?;
    problem.x0 = problem.y_delta.clone();
    Ok(problem)
}

/// Square checkerboard with `cell x cell` squares of values 0 and 1.
pub fn checkerboard(size: usize, cell: usize) -> Result<Grid> {
    if cell == 0 {
        return Err(Error::invalid("checkerboard cell must be positive"));
    }
    Grid::from_fn(size, size, |r, c| ((r / cell + c / cell) % 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ImageSource {
    Checkerboard { size: usize, cell: usize },
    Pgm { path: PathBuf },
}

impl ImageSource {
    pub fn load(&self) -> Result<Grid> {
        match self {
            ImageSource::Checkerboard { size, cell } => checkerboard(*size, *cell),
            ImageSource::Pgm { path } => crate::io::read_pgm(path),
        }
    }
}

/// Serializable recipe that rebuilds a [`Problem`] bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Hilbert {
        n: usize,
        x_star: XStar,
        noise_level: f64,
        seed: u64,
    },
    Deblur {
        image: ImageSource,
        psf_size: usize,
        sigma: f64,
        boundary: Boundary,
        noise_level: f64,
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Hilbert {
                n,
                x_star,
                noise_level,
                seed,
            } => make_hilbert_problem(*n, *x_star, *noise_level, *seed),
            ProblemSpec::Deblur {
                image,
                psf_size,
                sigma,
                boundary,
                noise_level,
                seed,
            } => make_deblur_problem(&image.load()?, *psf_size, *sigma, *boundary, *noise_level, *seed),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ProblemSpec::Hilbert { seed, .. } | ProblemSpec::Deblur { seed, .. } => *seed,
        }
    }

    pub fn noise_level(&self) -> f64 {
        match self {
            ProblemSpec::Hilbert { noise_level, .. } | ProblemSpec::Deblur { noise_level, .. } => *noise_level,
        }
    }

    /// Same recipe with another seed.
    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            ProblemSpec::Hilbert { seed, .. } | ProblemSpec::Deblur { seed, .. } => *seed = new_seed,
        }
        spec
    }

    /// Same recipe with another relative noise level.
    pub fn with_noise_level(&self, level: f64) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            ProblemSpec::Hilbert { noise_level, .. } | ProblemSpec::Deblur { noise_level, .. } => {
                *noise_level = level
            }
        }
        spec
    }
}
