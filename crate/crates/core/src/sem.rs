// SPDX-License-Identifier: Apache-2.0
//! Linear structural equation models and their scores.
//!
//! Convention used throughout the crate: `B[(i, j)] != 0` means an edge
//! `i -> j`, and the model reads `X = B^T X + N` with `N ~ N(0, diag(omega))`.
//! Noise parameters are stored as variances, never standard deviations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted adjacency matrix; entry `(i, j)` is the coefficient of `X_i` in the equation for `X_j`.
pub type WeightMatrix = DMatrix<f64>;

const SYMMETRY_TOL: f64 = 1e-10;
const SINGULAR_TOL: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Weighted adjacency plus noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemParams {
    b: WeightMatrix,
    omega: DVector<f64>,
}

impl SemParams {
    pub fn new(b: WeightMatrix, omega: DVector<f64>) -> Result<Self> {
        let p = b.nrows();
        if b.ncols() != p {
            return Err(Error::InvalidParams(format!(
                "B must be square, got {}x{}",
                p,
                b.ncols()
            )));
        }
        if omega.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: omega.len(),
            });
        }
        if (0..p).any(|i| b[(i, i)] != 0.0) {
            return Err(Error::InvalidParams("diagonal of B must be zero".into()));
        }
        if let Some(w) = omega.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "noise variances must be positive and finite, got {w}"
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("B has non-finite entries".into()));
        }
        Ok(Self { b, omega })
    }

    /// Empty graph with the given noise variances.
    pub fn independent(omega: DVector<f64>) -> Result<Self> {
        let p = omega.len();
        Self::new(DMatrix::zeros(p, p), omega)
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn b(&self) -> &WeightMatrix {
        &self.b
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    /// Number of nonzero off-diagonal entries with magnitude above `eps`.
    pub fn edge_count(&self, eps: f64) -> usize {
        count_edges(&self.b, eps)
    }

    pub fn into_parts(self) -> (WeightMatrix, DVector<f64>) {
        (self.b, self.omega)
    }
}

pub(crate) fn count_edges(b: &WeightMatrix, eps: f64) -> usize {
    let p = b.nrows();
    let mut s = 0;
    for j in 0..p {
        for i in 0..p {
            if i != j && b[(i, j)].abs() > eps {
                s += 1;
            }
        }
    }
    s
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidParams(format!(
            "{what} must be a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_square(m, what)?;
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParams(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "{what} has non-finite entries"
        )));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric positive-definite covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix(DMatrix<f64>);

/// Symmetric positive-definite precision (inverse covariance) matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionMatrix(DMatrix<f64>);

macro_rules! spd_newtype {
    ($name:ident, $what:literal, $inverse:ident) => {
        impl $name {
            /// Validates symmetry (1e-10 absolute) and positive definiteness.
            /// The stored matrix is exactly symmetrized.
            pub fn new(mut m: DMatrix<f64>) -> Result<Self> {
                check_spd(&m, $what)?;
                symmetrize(&mut m);
                Ok(Self(m))
            }

            pub fn matrix(&self) -> &DMatrix<f64> {
                &self.0
            }

            pub fn into_inner(self) -> DMatrix<f64> {
                self.0
            }

            pub fn p(&self) -> usize {
                self.0.nrows()
            }

            pub fn inverse(&self) -> $inverse {
                let chol = self
                    .0
                    .clone()
                    .cholesky()
                    .expect("validated positive definite");
                let mut inv = chol.inverse();
                symmetrize(&mut inv);
                $inverse(inv)
            }

            /// `D M D` for a positive diagonal `D` given as a vector.
            pub fn congruent_scale(&self, d: &DVector<f64>) -> Result<Self> {
                if d.len() != self.p() {
                    return Err(Error::DimensionMismatch {
                        expected: self.p(),
                        got: d.len(),
                    });
                }
                if d.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidParams(
                        "scaling entries must be positive".into(),
                    ));
                }
                let p = self.p();
                let m = DMatrix::from_fn(p, p, |i, j| d[i] * self.0[(i, j)] * d[j]);
                Self::new(m)
            }
        }
    };
}

spd_newtype!(CovarianceMatrix, "covariance matrix", PrecisionMatrix);
spd_newtype!(PrecisionMatrix, "precision matrix", CovarianceMatrix);

/// Observations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, names: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidData(
                "dataset must have n >= 1 and p >= 1".into(),
            ));
        }
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % x.nrows(), idx / x.nrows());
            return Err(Error::InvalidData(format!(
                "non-finite entry at row {r}, column {c}"
            )));
        }
        if let Some(n) = &names {
            if n.len() != x.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: x.ncols(),
                    got: n.len(),
                });
            }
        }
        Ok(Self { x, names })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_name(&self, j: usize) -> String {
        match &self.names {
            Some(n) => n[j].clone(),
            None => format!("X{j}"),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.x.iter().all(|v| *v == 0.0 || *v == 1.0)
    }
}

fn i_minus(b: &WeightMatrix) -> DMatrix<f64> {
    DMatrix::identity(b.nrows(), b.ncols()) - b
}

/// `log|det(I - B)|`; errors when the determinant is below 1e-12 in magnitude.
pub fn log_abs_det_i_minus(b: &WeightMatrix) -> Result<f64> {
    let det = i_minus(b).lu().determinant();
    if !det.is_finite() || det.abs() < SINGULAR_TOL {
        return Err(Error::NearSingular(det));
    }
    Ok(det.abs().ln())
}

/// `(I - B)^{-T} diag(omega) (I - B)^{-1}`.
pub fn covariance_of(params: &SemParams) -> Result<CovarianceMatrix> {
    let m = i_minus(params.b());
    let det = m.clone().lu().determinant();
    if det.abs() < SINGULAR_TOL {
        return Err(Error::NearSingular(det));
    }
    let inv = m.try_inverse().ok_or(Error::NearSingular(det))?;
    let omega = DMatrix::from_diagonal(params.omega());
    let mut sigma = inv.transpose() * omega * &inv;
    symmetrize(&mut sigma);
    CovarianceMatrix::new(sigma)
}

/// `(I - B) diag(omega)^{-1} (I - B)^T`.
pub fn precision_of(params: &SemParams) -> Result<PrecisionMatrix> {
    let m = i_minus(params.b());
    let det = m.clone().lu().determinant();
    if det.abs() < SINGULAR_TOL {
        return Err(Error::NearSingular(det));
    }
    let winv = DMatrix::from_diagonal(&params.omega().map(|w| 1.0 / w));
    let mut theta = &m * winv * m.transpose();
    symmetrize(&mut theta);
    PrecisionMatrix::new(theta)
}

/// Residual variances `diag((I - B)^T S (I - B))`; the Omega minimizing the full NLL for fixed `B`.
pub fn profile_noise(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> DVector<f64> {
    let m = i_minus(b);
    let sm = sigma_hat.matrix() * &m;
    DVector::from_fn(b.nrows(), |j, _| m.column(j).dot(&sm.column(j)))
}

fn check_dims(b: &WeightMatrix, sigma: &CovarianceMatrix) -> Result<()> {
    check_square(b, "B")?;
    if b.nrows() != sigma.p() {
        return Err(Error::DimensionMismatch {
            expected: sigma.p(),
            got: b.nrows(),
        });
    }
    Ok(())
}

/// Full Gaussian NLL including the `(p/2) log 2 pi` constant.
pub fn nll_full(params: &SemParams, sigma_hat: &CovarianceMatrix) -> Result<f64> {
    nll_full_with_grad(params, sigma_hat).map(|(v, _, _)| v)
}

/// Full NLL with gradients with respect to `B` (diagonal included) and the noise variances.
pub fn nll_full_with_grad(
    params: &SemParams,
    sigma_hat: &CovarianceMatrix,
) -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
    let b = params.b();
    check_dims(b, sigma_hat)?;
    let p = b.nrows();
    let m = i_minus(b);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_TOL {
        return Err(Error::NearSingular(det));
    }
    let omega = params.omega();
    let sm = sigma_hat.matrix() * &m;
    let resid = DVector::from_fn(p, |j, _| m.column(j).dot(&sm.column(j)));

    let log_det_omega: f64 = omega.iter().map(|w| w.ln()).sum();
    let trace: f64 = resid.iter().zip(omega.iter()).map(|(r, w)| r / w).sum();
    let value = 0.5 * log_det_omega - det.abs().ln() + 0.5 * trace + 0.5 * p as f64 * LN_2PI;

    let inv_t = lu
        .try_inverse()
        .ok_or(Error::NearSingular(det))?
        .transpose();
    let mut grad_b = inv_t;
    for j in 0..p {
        let w = omega[j];
        for i in 0..p {
            grad_b[(i, j)] -= sm[(i, j)] / w;
        }
    }
    let grad_omega = DVector::from_fn(p, |j, _| {
        0.5 / omega[j] - 0.5 * resid[j] / (omega[j] * omega[j])
    });
    Ok((value, grad_b, grad_omega))
}

/// NLL with the noise variances profiled out.
pub fn nll_profile(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> Result<f64> {
    nll_profile_with_grad(b, sigma_hat).map(|(v, _)| v)
}

/// Gradient of [`nll_profile`] with respect to every entry of `B`.
pub fn nll_profile_grad(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> Result<DMatrix<f64>> {
    nll_profile_with_grad(b, sigma_hat).map(|(_, g)| g)
}

pub fn nll_profile_with_grad(
    b: &WeightMatrix,
    sigma_hat: &CovarianceMatrix,
) -> Result<(f64, DMatrix<f64>)> {
    check_dims(b, sigma_hat)?;
    let p = b.nrows();
    let m = i_minus(b);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_TOL {
        return Err(Error::NearSingular(det));
    }
    let sm = sigma_hat.matrix() * &m;
    let mut log_resid = 0.0;
    let mut grad = lu
        .try_inverse()
        .ok_or(Error::NearSingular(det))?
        .transpose();
    for j in 0..p {
        let r = m.column(j).dot(&sm.column(j));
        if !(r > 0.0) {
            return Err(Error::InvalidParams(format!(
                "residual variance of column {j} is not positive"
            )));
        }
        log_resid += r.ln();
        for i in 0..p {
            grad[(i, j)] -= sm[(i, j)] / r;
        }
    }
    let value = 0.5 * log_resid - det.abs().ln() + 0.5 * p as f64 * (1.0 + LN_2PI);
    Ok((value, grad))
}

/// `Tr((I - B)^T S (I - B))`, the expected squared residual norm.
pub fn ls_loss_unscaled(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> f64 {
    profile_noise(b, sigma_hat).sum()
}

/// Half of [`ls_loss_unscaled`].
pub fn ls_loss(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> f64 {
    0.5 * ls_loss_unscaled(b, sigma_hat)
}

/// Half-scaled least-squares loss and its gradient `-S (I - B)`.
pub fn ls_loss_with_grad(b: &WeightMatrix, sigma_hat: &CovarianceMatrix) -> (f64, DMatrix<f64>) {
    let m = i_minus(b);
    let sm = sigma_hat.matrix() * &m;
    let value = 0.5
        * (0..b.nrows())
            .map(|j| m.column(j).dot(&sm.column(j)))
            .sum::<f64>();
    (value, -sm)
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic score over binary data, validated once at construction.
#[derive(Debug, Clone)]
pub struct LogisticScore<'a> {
    x: &'a DMatrix<f64>,
}

impl<'a> LogisticScore<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        if !data.is_binary() {
            return Err(Error::InvalidData(
                "logistic score requires entries in {0, 1}".into(),
            ));
        }
        Ok(Self { x: data.x() })
    }

    /// `(1/n) sum_ij [softplus((XB)_ij) - X_ij (XB)_ij]` and `(1/n) X^T (sigmoid(XB) - X)`.
    pub fn value_grad(&self, b: &WeightMatrix) -> Result<(f64, DMatrix<f64>)> {
        if b.nrows() != self.x.ncols() || b.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                got: b.nrows(),
            });
        }
        let n = self.x.nrows() as f64;
        let logits = self.x * b;
        let mut value = 0.0;
        let mut resid = logits.clone();
        for (idx, t) in logits.iter().enumerate() {
            let xv = self.x.as_slice()[idx];
            value += softplus(*t) - xv * t;
            resid.as_mut_slice()[idx] = sigmoid(*t) - xv;
        }
        let grad = self.x.transpose() * resid / n;
        Ok((value / n, grad))
    }
}

pub fn logistic_nll(b: &WeightMatrix, data: &Dataset) -> Result<f64> {
    LogisticScore::new(data)?.value_grad(b).map(|(v, _)| v)
}

pub fn logistic_nll_grad(b: &WeightMatrix, data: &Dataset) -> Result<DMatrix<f64>> {
    LogisticScore::new(data)?.value_grad(b).map(|(_, g)| g)
}
