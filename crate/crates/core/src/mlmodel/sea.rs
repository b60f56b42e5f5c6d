//! Desk-scale embedding approximation: PCA on teacher embeddings and a
//! closed-form linear student fitted to the reduced targets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::MlError;
use crate::rng;

pub const RIDGE: f64 = 1e-8;
/// Largest Gram condition number accepted after ridge regularization.
pub const MAX_CONDITION: f64 = 1e14;

/// Learned reduction: x ↦ (x − mean)·axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaMap {
    pub mean: DVector<f64>,
    /// n × d, orthonormal columns in decreasing variance order.
    pub axes: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaMap {
    pub fn dim(&self) -> usize {
        self.axes.ncols()
    }

    fn centered(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.centered(x) * &self.axes
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.axes.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }

    /// Largest |ΦᵀΦ − I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.axes.transpose() * &self.axes;
        (g - DMatrix::identity(self.dim(), self.dim())).abs().max()
    }
}

/// Centers the rows and keeps the top-`d` right singular vectors.
pub fn pca_fit(x: &DMatrix<f64>, d: usize) -> Result<PcaMap, MlError> {
    let (n_rows, n_cols) = x.shape();
    if d == 0 || d > n_cols || n_rows <= d {
        return Err(MlError::Shape(format!("need 0 < d ≤ {n_cols} and N > d, got d = {d}, N = {n_rows}")));
    }
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = c.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s = &svd.singular_values;
    let tol = s.max() * (n_rows.max(n_cols) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    if rank < d {
        return Err(MlError::RankDeficient { requested: d, rank });
    }
    let mut axes = v_t.rows(0, d).transpose();
    // sign convention: largest-magnitude entry of each axis is positive
    for mut col in axes.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let explained_variance = s.iter().take(d).map(|v| v * v / (n_rows as f64 - 1.0)).collect();
    Ok(PcaMap { mean, axes, explained_variance })
}

/// Σ_j ‖a_j − b_j‖² over rows.
pub fn sea_objective(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, MlError> {
    if a.shape() != b.shape() {
        return Err(MlError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((a - b).norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearStudent {
    /// m × d.
    pub weights: DMatrix<f64>,
    pub residual: f64,
    pub condition: f64,
}

impl LinearStudent {
    pub fn predict(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        features * &self.weights
    }
}

/// Least squares F·W ≈ T through ridge-regularized normal equations.
pub fn fit_linear_student(features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LinearStudent, MlError> {
    let (n, m) = features.shape();
    if targets.nrows() != n {
        return Err(MlError::Shape(format!("{n} feature rows vs {} target rows", targets.nrows())));
    }
    if n < m {
        return Err(MlError::Shape(format!("N = {n} < m = {m}")));
    }
    let gram = features.transpose() * features + DMatrix::identity(m, m) * RIDGE;
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(MlError::IllConditioned { condition });
    }
    let chol = gram.cholesky().ok_or(MlError::IllConditioned { condition })?;
    let weights = chol.solve(&(features.transpose() * targets));
    let residual = sea_objective(&(features * &weights), targets)?;
    Ok(LinearStudent { weights, residual, condition })
}

/// Synthetic teacher/student data: features F (N×m), teacher embeddings
/// T = F·A·Q + noise where Q spreads a `latent`-dim signal into `n` dims.
pub fn synthetic_problem(seed: u64, n_samples: usize, m: usize, n: usize, latent: usize, noise: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut g = rng::keyed(seed, &[0x5EA]);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| g.sample::<f64, _>(StandardNormal));
    let f = gauss(n_samples, m);
    let a = gauss(m, latent);
    let q = gauss(latent, n);
    let e = gauss(n_samples, n) * noise;
    let t = &f * a * q + e;
    (f, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeaStep {
    pub d: usize,
    /// Objective in the reduced space.
    pub objective: f64,
    /// Squared error of the student mapped back to teacher space.
    pub teacher_space_error: f64,
    pub explained_fraction: f64,
}

/// PCA to each `d`, fit a linear student, report both objectives.
pub fn sea_sweep(features: &DMatrix<f64>, teacher: &DMatrix<f64>, dims: &[usize]) -> Result<Vec<SeaStep>, MlError> {
    let full = pca_fit(teacher, teacher.ncols().min(teacher.nrows() - 1)).ok();
    let total_var: f64 = full.as_ref().map_or(f64::NAN, |p| p.explained_variance.iter().sum());
    dims.iter()
        .map(|&d| {
            let pca = pca_fit(teacher, d)?;
            let z = pca.transform(teacher);
            let student = fit_linear_student(features, &z)?;
            let back = pca.inverse_transform(&student.predict(features));
            Ok(SeaStep {
                d,
                objective: student.residual,
                teacher_space_error: sea_objective(&back, teacher)?,
                explained_fraction: pca.explained_variance.iter().sum::<f64>() / total_var,
            })
        })
        .collect()
}
