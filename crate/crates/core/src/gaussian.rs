//! Gaussian summaries of feature matrices and the distances between them.
//!
//! Feature matrices are summarized by their maximum-likelihood Gaussian
//! (`1/N` covariance normalization). The data shift between two snapshots is
//! the squared 2-Wasserstein distance between their Gaussian fits:
//!
//! ```text
//! W2²(N(μ1,Σ1), N(μ2,Σ2)) = ‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ2^½ Σ1 Σ2^½)^½)
//! ```
//!
//! Closed-form KL and a Monte-Carlo Jensen–Shannon estimate (base-2, so it
//! lies in `[0, 1]`) are provided for comparison.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Relative ridge used by [`fit_gaussian_default`]: `1e-6 · tr(Σ) / q`.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-10;

/// Samples in rows, features in columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidData("feature dimension must be at least 1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidData(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// First `n` rows as a new matrix.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.rows);
        Self::new(n, self.cols, self.data[..n * self.cols].to_vec())
    }

    /// Parses headerless CSV: one sample per line, comma separated. The
    /// dimension is taken from the first row and enforced on the rest.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut cols = None;
        let mut rows = 0;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidData(format!("line {}: cannot parse `{}`", lineno + 1, field.trim()))
                })?;
                data.push(v);
            }
            let width = data.len() - before;
            match cols {
                None => cols = Some(width),
                Some(c) if c != width => {
                    return Err(Error::InvalidData(format!(
                        "line {}: {width} columns, expected {c}",
                        lineno + 1
                    )))
                }
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| Error::InvalidData("empty feature file".into()))?;
        Self::new(rows, cols, data)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Mean vector and covariance matrix of a fitted Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_samples: usize,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n_samples: usize) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        check_symmetric(&cov)?;
        Ok(Self {
            mean,
            cov,
            n_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest covariance eigenvalue is strictly positive.
    pub fn is_positive_definite(&self) -> bool {
        SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .iter()
            .all(|&l| l > 0.0)
    }
}

/// MLE fit: column means and `(1/N) Σ (x−μ)(x−μ)ᵀ + ridge·I`.
pub fn fit_gaussian(m: &FeatureMatrix, ridge: f64) -> Result<GaussianSummary> {
    if m.rows() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 samples to fit a Gaussian, got {}",
            m.rows()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidData(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let (mean, mut cov) = mle_moments(m);
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
    GaussianSummary::new(mean, cov, m.rows())
}

/// [`fit_gaussian`] with ridge `1e-6 · tr(Σ) / q` so that rank-deficient
/// feature matrices (fewer samples than features) still yield a PD fit.
pub fn fit_gaussian_default(m: &FeatureMatrix) -> Result<GaussianSummary> {
    if m.rows() < 2 {
        return fit_gaussian(m, 0.0);
    }
    let (_, cov) = mle_moments(m);
    let q = cov.nrows() as f64;
    let ridge = (DEFAULT_RELATIVE_RIDGE * cov.trace() / q).max(f64::MIN_POSITIVE);
    fit_gaussian(m, ridge)
}

fn mle_moments(m: &FeatureMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, q) = (m.rows(), m.cols());
    let mut mean = DVector::zeros(q);
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(q, q);
    let mut centered = vec![0.0; q];
    for i in 0..n {
        for (c, (x, mu)) in centered.iter_mut().zip(m.row(i).iter().zip(mean.iter())) {
            *c = x - mu;
        }
        for a in 0..q {
            for b in a..q {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..q {
        for b in a..q {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::NotSpd(format!("matrix is {}x{}", s.nrows(), s.ncols())));
    }
    let scale = s.amax().max(1.0);
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotSpd(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Principal square root of a symmetric positive definite matrix via its
/// eigendecomposition, `V diag(√λ) Vᵀ`.
pub fn sqrt_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s)?;
    let eig = SymmetricEigen::new(s.clone());
    if let Some(l) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::NotSpd(format!("eigenvalue {l} is not positive")));
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let mut r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    symmetrize(&mut r);
    Ok(r)
}

fn check_dims(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn wasserstein2_gaussian(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64> {
    check_dims(g1, g2)?;
    let mean_term = (&g1.mean - &g2.mean).norm_squared();
    if g1.cov == g2.cov {
        return Ok(mean_term);
    }
    let root2 = sqrt_spd(&g2.cov)?;
    let mut cross = &root2 * &g1.cov * &root2;
    symmetrize(&mut cross);
    // cross is PSD; tiny negative eigenvalues are round-off.
    let trace_root: f64 = SymmetricEigen::new(cross)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let bures = (g1.cov.trace() + g2.cov.trace() - 2.0 * trace_root).max(0.0);
    Ok(mean_term + bures)
}

fn cholesky(cov: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotSpd(format!("{what} covariance has no Cholesky factor")))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `KL(g1 ‖ g2)` in nats.
pub fn kl_gaussian(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64> {
    check_dims(g1, g2)?;
    let c2 = cholesky(&g2.cov, "second")?;
    let c1 = cholesky(&g1.cov, "first")?;
    let q = g1.dim() as f64;
    let trace_term = c2.solve(&g1.cov).trace();
    let diff = &g2.mean - &g1.mean;
    let maha = diff.dot(&c2.solve(&diff));
    let kl = 0.5 * (trace_term + maha - q + log_det(&c2) - log_det(&c1));
    Ok(kl.max(0.0))
}

/// Gaussian with a cached Cholesky factor for sampling and log-densities.
struct Density {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Density {
    fn new(g: &GaussianSummary) -> Result<Self> {
        let chol = cholesky(&g.cov, "Gaussian")?;
        let q = g.dim() as f64;
        let log_norm = -0.5 * (q * (2.0 * PI).ln() + log_det(&chol));
        Ok(Self {
            mean: g.mean.clone(),
            chol,
            log_norm,
        })
    }

    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let centered = x - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&centered)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l() * z
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Monte-Carlo Jensen–Shannon divergence in bits.
///
/// Draws `n_samples` i.i.d. points from each Gaussian (first `g1`, then `g2`,
/// from one seeded stream) and averages `log2(2p/(p+q))` under each side.
/// Densities are evaluated in log-space. The estimate is clamped to `[0, 1]`.
pub fn js_divergence_mc(
    g1: &GaussianSummary,
    g2: &GaussianSummary,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(g1, g2)?;
    if n_samples < 1000 {
        return Err(Error::InvalidData(format!(
            "Monte-Carlo JS needs at least 1000 samples, got {n_samples}"
        )));
    }
    let p = Density::new(g1)?;
    let q = Density::new(g2)?;
    let mut rng = rng_from_seed(seed);

    let mut half = |from: &Density, other: &Density| {
        let mut acc = 0.0;
        for _ in 0..n_samples {
            let x = from.sample(&mut rng);
            let lf = from.log_pdf(&x);
            let lo = other.log_pdf(&x);
            let lm = log_add_exp(lf, lo) - LN_2;
            acc += (lf - lm) / LN_2;
        }
        acc / n_samples as f64
    };
    let a = half(&p, &q);
    let b = half(&q, &p);
    Ok((0.5 * (a + b)).clamp(0.0, 1.0))
}
