//! Singular-value truncation followed by canonical correlation analysis.
//!
//! Each side is centered and reduced to the leading singular directions that
//! hold a requested fraction of its energy (squared singular values). CCA on
//! the two reduced views is computed by whitening each covariance with its
//! inverse square root and taking the singular values of the whitened
//! cross-covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ActivationMatrix;

/// Default energy fraction kept by [`svd_truncate`].
pub const DEFAULT_TAU: f64 = 0.99;

/// Scale of the automatic ridge relative to the mean covariance eigenvalue.
pub const AUTO_RIDGE_SCALE: f64 = 1e-10;

/// Two singular values closer than this (relative to the largest) are treated as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Ridge added to each covariance before whitening. Serializes as `"auto"` or a number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Regularization {
    #[serde(with = "auto_tag")]
    /// `1e-10 * trace(cov) / dim`, computed per side.
    #[default]
    Auto,
    Fixed(f64),
}

mod auto_tag {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected \"auto\", got {s:?}")))
        }
    }
}

impl std::str::FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Regularization::Auto);
        }
        let eps: f64 = s
            .parse()
            .map_err(|_| Error::InvalidInput(format!("regularization must be `auto` or a number, got `{s}`")))?;
        let reg = Regularization::Fixed(eps);
        reg.validate()?;
        Ok(reg)
    }
}

impl std::fmt::Display for Regularization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regularization::Auto => f.write_str("auto"),
            Regularization::Fixed(eps) => write!(f, "{eps}"),
        }
    }
}

impl Regularization {
    fn ridge(self, cov: &DMatrix<f64>) -> f64 {
        match self {
            Regularization::Auto => AUTO_RIDGE_SCALE * cov.trace() / cov.nrows() as f64,
            Regularization::Fixed(eps) => eps,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Regularization::Fixed(eps) if !(eps.is_finite() && eps >= 0.0) => {
                Err(Error::InvalidInput(format!("regularization must be finite and >= 0, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvccaOptions {
    pub tau: f64,
    pub regularization: Regularization,
}

impl Default for SvccaOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            regularization: Regularization::Auto,
        }
    }
}

impl SvccaOptions {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        self.regularization.validate()
    }
}

fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("variance fraction must lie in (0, 1], got {tau}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSubspace {
    /// Centered data expressed in the kept singular directions (n x kept_dim).
    pub projected: DMatrix<f64>,
    pub retained_variance: f64,
    pub original_dim: usize,
    pub kept_dim: usize,
    /// All singular values of the centered matrix, descending.
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    /// Descending, each in [0, 1].
    pub correlations: Vec<f64>,
    /// p x k map from the first view to its canonical variates.
    pub map_a: DMatrix<f64>,
    /// q x k map from the second view to its canonical variates.
    pub map_b: DMatrix<f64>,
    pub mean_correlation: f64,
    /// Set when n - 1 < p + q; correlations are then inflated by overfitting.
    pub rank_warning: bool,
    pub ridge_a: f64,
    pub ridge_b: f64,
}

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (col, column) in m.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData {
                context: what.to_string(),
                row,
                col,
            });
        }
    }
    Ok(())
}

/// Subtracts column means. Constant columns become exactly zero.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            col.fill(0.0);
            continue;
        }
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Thin SVD with singular triplets sorted by descending singular value.
fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = nalgebra::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v_sorted = DMatrix::from_columns(&order.iter().map(|&i| v_t.row(i).transpose()).collect::<Vec<_>>());
    Ok((u_sorted, values, v_sorted))
}

/// Number of leading energies whose cumulative share reaches `tau`, extended over ties.
fn kept_count(singular: &[f64], rank: usize, tau: f64) -> (usize, f64) {
    let energy: Vec<f64> = singular[..rank].iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    let mut cumulative = 0.0;
    let mut k = rank;
    for (i, e) in energy.iter().enumerate() {
        cumulative += e;
        if cumulative / total >= tau {
            k = i + 1;
            break;
        }
    }
    let tie = TIE_TOLERANCE * singular[0];
    while k < rank && (singular[k - 1] - singular[k]).abs() <= tie {
        k += 1;
    }
    let retained = if k == rank {
        1.0
    } else {
        energy[..k].iter().sum::<f64>() / total
    };
    (k, retained)
}

/// Centers `m` and keeps the fewest leading singular directions whose energy share
/// reaches `tau`. Numerically zero singular values never count.
pub fn svd_truncate(m: &DMatrix<f64>, tau: f64) -> Result<TruncatedSubspace> {
    validate_tau(tau)?;
    if m.nrows() < 2 || m.ncols() < 1 {
        return Err(Error::ShapeMismatch {
            context: "svd_truncate".into(),
            expected: "at least 2 rows and 1 column".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    ensure_finite(m, "svd_truncate input")?;
    let centered = center_columns(m);
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput);
    }
    let (u, singular, _v) = sorted_svd(&centered)?;
    let tolerance = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * singular[0];
    let rank = singular.iter().take_while(|&&s| s > tolerance).count();
    if rank == 0 {
        return Err(Error::DegenerateInput);
    }
    let (k, retained_variance) = kept_count(&singular, rank, tau);
    let mut projected = u.columns(0, k).into_owned();
    for (j, mut col) in projected.column_iter_mut().enumerate() {
        col *= singular[j];
    }
    Ok(TruncatedSubspace {
        projected,
        retained_variance,
        original_dim: m.ncols(),
        kept_dim: k,
        singular_values: singular,
    })
}

/// Inverse square root of a symmetric PSD matrix with eigenvalues floored at `floor`.
/// Directions that remain numerically zero map to zero.
fn inverse_sqrt(cov: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let eig = SymmetricEigen::try_new(cov.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = dim as f64 * f64::EPSILON * largest;
    let scale = DVector::from_iterator(
        dim,
        eig.eigenvalues.iter().map(|&l| {
            let l = l.max(floor);
            if l <= cutoff || l <= 0.0 {
                0.0
            } else {
                1.0 / l.sqrt()
            }
        }),
    );
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let out = &scaled * q.transpose();
    // Symmetrize away rounding.
    Ok((&out + out.transpose()) * 0.5)
}

/// Canonical correlations between the columns of `a` (n x p) and `b` (n x q).
pub fn cca(a: &DMatrix<f64>, b: &DMatrix<f64>, regularization: Regularization) -> Result<CcaResult> {
    regularization.validate()?;
    if a.nrows() != b.nrows() {
        return Err(Error::MismatchedRows {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    let n = a.nrows();
    if n < 2 || a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::ShapeMismatch {
            context: "cca".into(),
            expected: "at least 2 rows and 1 column per view".into(),
            found: format!("{}x{} and {}x{}", n, a.ncols(), b.nrows(), b.ncols()),
        });
    }
    ensure_finite(a, "cca first view")?;
    ensure_finite(b, "cca second view")?;
    let (p, q) = (a.ncols(), b.ncols());
    let a = center_columns(a);
    let b = center_columns(b);
    let denom = (n - 1) as f64;

    let mut cov_aa = a.tr_mul(&a) / denom;
    let mut cov_bb = b.tr_mul(&b) / denom;
    let cov_ab = a.tr_mul(&b) / denom;
    let ridge_a = regularization.ridge(&cov_aa);
    let ridge_b = regularization.ridge(&cov_bb);
    for i in 0..p {
        cov_aa[(i, i)] += ridge_a;
    }
    for i in 0..q {
        cov_bb[(i, i)] += ridge_b;
    }

    let white_a = inverse_sqrt(&cov_aa, ridge_a)?;
    let white_b = inverse_sqrt(&cov_bb, ridge_b)?;
    let whitened = &white_a * cov_ab * &white_b;
    let (u, singular, v) = sorted_svd(&whitened)?;

    let k = p.min(q);
    let correlations: Vec<f64> = singular.iter().take(k).map(|s| s.clamp(0.0, 1.0)).collect();
    let mean_correlation = (correlations.iter().sum::<f64>() / k as f64).clamp(0.0, 1.0);
    let map_a = white_a * u.columns(0, k);
    let map_b = white_b * v.columns(0, k);
    Ok(CcaResult {
        correlations,
        map_a,
        map_b,
        mean_correlation,
        rank_warning: n - 1 < p + q,
        ridge_a,
        ridge_b,
    })
}

/// SVCCA on two f64 views with aligned rows. Bit-identical views score exactly 1.
pub fn svcca(a: &DMatrix<f64>, b: &DMatrix<f64>, options: &SvccaOptions) -> Result<CcaResult> {
    options.validate()?;
    if a.nrows() != b.nrows() {
        return Err(Error::MismatchedRows {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    let ta = svd_truncate(a, options.tau)?;
    let tb = svd_truncate(b, options.tau)?;
    let mut result = cca(&ta.projected, &tb.projected, options.regularization)?;
    if a == b {
        // The ridge shrinks self-correlations just below one.
        result.correlations.iter_mut().for_each(|r| *r = 1.0);
        result.mean_correlation = 1.0;
    }
    Ok(result)
}

/// SVCCA similarity between two languages' activations over the same sentences.
pub fn svcca_score(a: &ActivationMatrix, b: &ActivationMatrix, options: &SvccaOptions) -> Result<CcaResult> {
    if a.rows() != b.rows() {
        return Err(Error::MismatchedRows {
            left: a.rows(),
            right: b.rows(),
        });
    }
    svcca(&a.to_f64(), &b.to_f64(), options)
}
