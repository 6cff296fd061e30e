use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite mixture of point masses y⁽ʲ⁾ with simplex weights.
#[derive(Clone, Debug)]
pub struct DeltaMixture {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl DeltaMixture {
    /// Builds a mixture from points and positive (unnormalized) weights.
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("delta mixture", "needs at least one point"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("delta mixture", "points must have dimension >= 1"));
        }
        if weights.len() != points.len() {
            return Err(Error::Dimension {
                expected: points.len(),
                got: weights.len(),
            });
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("delta mixture", "non-finite coordinate"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("delta mixture", "weights must be finite and > 0"));
        }
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                if a == b {
                    return Err(Error::invalid("delta mixture", "points must be pairwise distinct"));
                }
            }
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::invalid("delta mixture", e.to_string()))?;
        Ok(DeltaMixture {
            points,
            weights,
            log_weights,
            sampler,
        })
    }

    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let k = points.len();
        Self::new(points, vec![1.0; k])
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(rows: &[&[f64]], weights: Option<&[f64]>) -> Result<Self> {
        let points = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
        match weights {
            Some(w) => Self::new(points, w.to_vec()),
            None => Self::uniform(points),
        }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (p, w) in self.points.iter().zip(&self.weights) {
            m.axpy(*w, p, 1.0);
        }
        m
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// Gaussian N(mean, Σ₀) with Σ₀ symmetric positive definite.
#[derive(Clone, Debug)]
pub struct GaussianFull {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

impl GaussianFull {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("gaussian", "dimension must be >= 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("gaussian", "non-finite entries"));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::invalid("gaussian", "covariance is not symmetric"));
        }
        let cov = 0.5 * (&cov + cov.transpose());
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::invalid("gaussian", "covariance is not positive definite"))?;
        let eig = SymmetricEigen::new(cov.clone());
        Ok(GaussianFull {
            mean,
            chol_lower: chol.l(),
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            cov,
        })
    }

    /// Centered isotropic N(0, h²I) in `dim` dimensions.
    pub fn isotropic(dim: usize, h: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(dim),
            DMatrix::identity(dim, dim) * (h * h),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Eigenvalues s_i of Σ₀ (ascending order not guaranteed).
    pub fn cov_eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// f(Σ₀) for a scalar function `f` applied to the eigenvalues.
    pub(crate) fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let diag = DMatrix::from_diagonal(&self.eigenvalues.map(f));
        let m = u * diag * u.transpose();
        0.5 * (&m + m.transpose())
    }
}

/// Centered Gaussian supported on the span of an orthonormal basis:
/// y = h·B·u with u ~ N(0, I_{D_data}).
#[derive(Clone, Debug)]
pub struct GaussianSubspace {
    basis: DMatrix<f64>,
    h: f64,
    projector: DMatrix<f64>,
}

impl GaussianSubspace {
    pub fn new(basis: DMatrix<f64>, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("gaussian subspace", "h must be finite and > 0"));
        }
        let (d, k) = basis.shape();
        if d == 0 || k > d {
            return Err(Error::invalid(
                "gaussian subspace",
                format!("basis must be D x D_data with D_data <= D, got {d} x {k}"),
            ));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(k, k)).abs().max();
        if err > 1e-10 {
            return Err(Error::invalid(
                "gaussian subspace",
                format!("basis columns are not orthonormal (max deviation {err:e})"),
            ));
        }
        let projector = &basis * basis.transpose();
        Ok(GaussianSubspace {
            basis,
            h,
            projector,
        })
    }

    /// The subspace spanned by the first `data_dim` coordinate axes of R^dim.
    pub fn axis_aligned(dim: usize, data_dim: usize, h: f64) -> Result<Self> {
        if data_dim > dim {
            return Err(Error::invalid("gaussian subspace", "data_dim exceeds dim"));
        }
        Self::new(DMatrix::identity(dim, data_dim), h)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn data_dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// The data distribution ρ(y) that the forward process starts from.
#[derive(Clone, Debug)]
pub enum DataDistribution {
    DeltaMixture(DeltaMixture),
    GaussianFull(GaussianFull),
    GaussianSubspace(GaussianSubspace),
}

impl From<DeltaMixture> for DataDistribution {
    fn from(m: DeltaMixture) -> Self {
        DataDistribution::DeltaMixture(m)
    }
}

impl From<GaussianFull> for DataDistribution {
    fn from(g: GaussianFull) -> Self {
        DataDistribution::GaussianFull(g)
    }
}

impl From<GaussianSubspace> for DataDistribution {
    fn from(g: GaussianSubspace) -> Self {
        DataDistribution::GaussianSubspace(g)
    }
}

impl DataDistribution {
    pub fn dim(&self) -> usize {
        match self {
            DataDistribution::DeltaMixture(m) => m.dim(),
            DataDistribution::GaussianFull(g) => g.dim(),
            DataDistribution::GaussianSubspace(g) => g.dim(),
        }
    }

    pub fn as_mixture(&self) -> Option<&DeltaMixture> {
        match self {
            DataDistribution::DeltaMixture(m) => Some(m),
            _ => None,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            DataDistribution::DeltaMixture(m) => m.mean(),
            DataDistribution::GaussianFull(g) => g.mean().clone(),
            DataDistribution::GaussianSubspace(g) => DVector::zeros(g.dim()),
        }
    }

    /// Characteristic length of the data, used for tolerances and the
    /// reverse-integration floor σ²_floor = 10⁻⁶·scale².
    pub fn data_scale(&self) -> f64 {
        let scale = match self {
            DataDistribution::DeltaMixture(m) => {
                m.points().iter().map(|p| p.norm()).fold(0.0, f64::max)
            }
            DataDistribution::GaussianFull(g) => {
                let top = g.cov_eigenvalues().iter().cloned().fold(0.0, f64::max);
                g.mean().norm() + top.sqrt()
            }
            DataDistribution::GaussianSubspace(g) => g.h(),
        };
        if scale > 0.0 {
            scale
        } else {
            1.0
        }
    }

    /// Smallest variance reverse integration is allowed to reach.
    pub fn sigma2_floor(&self) -> f64 {
        1e-6 * self.data_scale().powi(2)
    }

    /// Draws a clean datum y ~ ρ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            DataDistribution::DeltaMixture(m) => m.points[m.sample_index(rng)].clone(),
            DataDistribution::GaussianFull(g) => {
                let z = standard_normal(g.dim(), rng);
                g.mean() + &g.chol_lower * z
            }
            DataDistribution::GaussianSubspace(g) => {
                let u = standard_normal(g.data_dim(), rng);
                g.basis() * u * g.h()
            }
        }
    }

    /// Serializable description of this distribution.
    pub fn spec(&self) -> DistributionSpec {
        match self {
            DataDistribution::DeltaMixture(m) => DistributionSpec::DeltaMixture {
                points: m.points().iter().map(|p| p.iter().copied().collect()).collect(),
                weights: Some(m.weights().to_vec()),
            },
            DataDistribution::GaussianFull(g) => DistributionSpec::GaussianFull {
                mean: g.mean().iter().copied().collect(),
                cov: g
                    .cov()
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            },
            DataDistribution::GaussianSubspace(g) => DistributionSpec::GaussianSubspace {
                dim: g.dim(),
                data_dim: g.data_dim(),
                h: g.h(),
                basis: Some(
                    g.basis()
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                ),
            },
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Plain-data description of a [`DataDistribution`], as found in scenario
/// files and tree dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    DeltaMixture {
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    GaussianFull {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// Basis rows are the D ambient coordinates; defaults to the first
    /// `data_dim` axes when omitted.
    GaussianSubspace {
        dim: usize,
        data_dim: usize,
        h: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<Vec<Vec<f64>>>,
    },
}

impl DistributionSpec {
    pub fn build(&self) -> Result<DataDistribution> {
        Ok(match self {
            DistributionSpec::DeltaMixture { points, weights } => {
                let pts = points.iter().map(|p| DVector::from_vec(p.clone())).collect();
                let mix = match weights {
                    Some(w) => DeltaMixture::new(pts, w.clone())?,
                    None => DeltaMixture::uniform(pts)?,
                };
                mix.into()
            }
            DistributionSpec::GaussianFull { mean, cov } => {
                let d = mean.len();
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("gaussian", "cov must be a D x D array"));
                }
                let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                GaussianFull::new(DVector::from_vec(mean.clone()), cov)?.into()
            }
            DistributionSpec::GaussianSubspace {
                dim,
                data_dim,
                h,
                basis,
            } => match basis {
                None => GaussianSubspace::axis_aligned(*dim, *data_dim, *h)?.into(),
                Some(rows) => {
                    if rows.len() != *dim || rows.iter().any(|r| r.len() != *data_dim) {
                        return Err(Error::invalid(
                            "gaussian subspace",
                            "basis must be a dim x data_dim array",
                        ));
                    }
                    let b = DMatrix::from_fn(*dim, *data_dim, |i, j| rows[i][j]);
                    GaussianSubspace::new(b, *h)?.into()
                }
            },
        })
    }
}
