//! Gaussian-kernel ridge regression with gradient evaluation through the
//! derivative reproducing property.
//!
//! The fitted function is f̂(x) = Σᵢ αᵢ K(xᵢ, x) with α solving
//! (K + λI)α = y, and its partial derivatives are available in closed form:
//! for the Gaussian kernel ∂K(xᵢ, x)/∂x_l = K(xᵢ, x)·(x_{il} − x_l)/σ².
//! Per-covariate empirical gradient norms are the selection statistic used by
//! [`crate::select`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{solve_lu, Cholesky};

/// Ridge parameter used by all experiments unless overridden.
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// An n×p matrix of covariate rows, validated to contain only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix(Array2<f64>);

impl CovariateMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::DegenerateInput(format!(
                "covariate matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "covariate matrix contains NaN or infinite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Internal constructor for slices of already-validated data.
    pub(crate) fn from_valid(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn select_columns(&self, idx: &[usize]) -> CovariateMatrix {
        assert!(!idx.is_empty(), "column selection must be non-empty");
        assert!(idx.iter().all(|&j| j < self.cols()));
        Self(self.0.select(Axis(1), idx))
    }

    pub fn select_rows(&self, idx: &[usize]) -> CovariateMatrix {
        assert!(!idx.is_empty(), "row selection must be non-empty");
        Self(self.0.select(Axis(0), idx))
    }
}

/// Bandwidth and ridge parameters of a kernel ridge fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    bandwidth: f64,
    ridge: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64, ridge: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if !(ridge > 0.0) || !ridge.is_finite() {
            return Err(Error::Domain(format!("ridge must be positive, got {ridge}")));
        }
        Ok(Self { bandwidth, ridge })
    }

    /// Bandwidth from the median pairwise distance of `x`, ridge as given.
    pub fn with_median_bandwidth(x: &CovariateMatrix, ridge: f64) -> Result<Self> {
        Self::new(median_bandwidth(x)?, ridge)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Per-covariate empirical squared gradient norms ‖ĝ_l‖²_m.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientNorms(pub(crate) Array1<f64>);

impl GradientNorms {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fitted kernel ridge model: training rows (restricted to the active
/// columns), representer coefficients, and the column indices the model uses
/// relative to the original design.
#[derive(Debug, Clone)]
pub struct KrrModel {
    train_x: CovariateMatrix,
    alpha: Array1<f64>,
    config: KernelConfig,
    active_set: Vec<usize>,
}

/// Median of the n(n−1)/2 pairwise Euclidean distances (lower median for
/// even counts).
pub fn median_bandwidth(x: &CovariateMatrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "median bandwidth needs at least 2 rows, got {n}"
        )));
    }
    let d2 = sq_dist_matrix(&x.view());
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(d2[[i, j]].sqrt());
        }
    }
    let k = (dists.len() - 1) / 2;
    let (_, med, _) = dists.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
    let med = *med;
    if med == 0.0 {
        return Err(Error::SingularBandwidth);
    }
    Ok(med)
}

/// K(x, u) = exp(−‖x − u‖²₂ / (2σ²)).
pub fn gaussian_kernel(x: &[f64], u: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            u.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {sigma}")));
    }
    let sq: f64 = x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

/// Symmetric kernel matrix K[i][j] = K(row i, row j) with exact unit diagonal.
pub fn kernel_matrix(x: &CovariateMatrix, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {sigma}")));
    }
    let d2 = sq_dist_matrix(&x.view());
    Ok(kernel_from_sq_dists(&d2, sigma))
}

/// Pairwise squared distances via the Gram-matrix identity
/// ‖xᵢ − xⱼ‖² = ‖xᵢ‖² + ‖xⱼ‖² − 2xᵢᵀxⱼ, clamped at zero.
pub(crate) fn sq_dist_matrix(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let gram = x.dot(&x.t());
    let mut d2 = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = (gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]]).max(0.0);
            d2[[i, j]] = v;
            d2[[j, i]] = v;
        }
    }
    d2
}

/// Squared distances between the rows of `a` (m×p) and `b` (q×p).
pub(crate) fn cross_sq_dists(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let cross = a.dot(&b.t());
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d2 = cross;
    for i in 0..na.len() {
        for j in 0..nb.len() {
            d2[[i, j]] = (na[i] + nb[j] - 2.0 * d2[[i, j]]).max(0.0);
        }
    }
    d2
}

pub(crate) fn kernel_from_sq_dists(d2: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let n = d2.nrows();
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in i + 1..n {
            let v = (d2[[i, j]] * scale).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

pub(crate) fn cross_kernel(
    train: &ArrayView2<f64>,
    eval: &ArrayView2<f64>,
    sigma: f64,
) -> Array2<f64> {
    let mut k = cross_sq_dists(train, eval);
    let scale = -1.0 / (2.0 * sigma * sigma);
    k.mapv_inplace(|v| (v * scale).exp());
    k
}

/// Solve (K + λI)α = y with one step of iterative refinement if the raw
/// residual misses the contract tolerance.
pub(crate) fn solve_regularized(
    kernel: &Array2<f64>,
    ridge: f64,
    y: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let m = kernel.nrows();
    let mut a = kernel.clone();
    for i in 0..m {
        a[[i, i]] += ridge;
    }
    let y_inf = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-8 * (1.0 + y_inf);

    let factor = Cholesky::new(&a);
    let mut alpha = match &factor {
        Some(f) => f.solve(&y.to_owned()),
        None => solve_lu(&a, &y.to_owned())?,
    };

    let resid_inf = |al: &Array1<f64>| {
        let r = &a.dot(al) - y;
        r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    };
    let mut r = resid_inf(&alpha);
    if r > tol {
        if let Some(f) = &factor {
            let residual = y - &a.dot(&alpha);
            alpha = &alpha + &f.solve(&residual);
            r = resid_inf(&alpha);
        }
    }
    if r > tol {
        return Err(Error::Numerical(format!(
            "kernel system residual {r:.3e} exceeds tolerance {tol:.3e} \
             (m={m}, ridge={ridge:.3e}, diag range [{:.3e}, {:.3e}])",
            a.diag().iter().cloned().fold(f64::INFINITY, f64::min),
            a.diag().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )));
    }
    Ok(alpha)
}

/// Fit kernel ridge regression on `x_obs`/`y_obs`; the returned model's
/// active set is the identity over the input columns.
pub fn fit_krr(
    x_obs: &CovariateMatrix,
    y_obs: &ArrayView1<f64>,
    config: &KernelConfig,
) -> Result<KrrModel> {
    if x_obs.rows() != y_obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows of covariates vs {} responses",
            x_obs.rows(),
            y_obs.len()
        )));
    }
    let k = kernel_matrix(x_obs, config.bandwidth)?;
    let alpha = solve_regularized(&k, config.ridge, y_obs)?;
    Ok(KrrModel {
        train_x: x_obs.clone(),
        alpha,
        config: *config,
        active_set: (0..x_obs.cols()).collect(),
    })
}

pub(crate) fn model_from_parts(
    train_x: CovariateMatrix,
    alpha: Array1<f64>,
    config: KernelConfig,
    active_set: Vec<usize>,
) -> KrrModel {
    KrrModel { train_x, alpha, config, active_set }
}

impl KrrModel {
    pub fn train_x(&self) -> &CovariateMatrix {
        &self.train_x
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    /// Column indices of the original design the model was fitted on,
    /// ascending and unique.
    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    /// f̂(x) = Σᵢ αᵢ K(xᵢ, x) for each row of `x_new`, whose columns must
    /// match the (restricted) training columns.
    pub fn predict(&self, x_new: &CovariateMatrix) -> Result<Array1<f64>> {
        if x_new.cols() != self.train_x.cols() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} columns, prediction input has {}",
                self.train_x.cols(),
                x_new.cols()
            )));
        }
        let k = cross_kernel(&self.train_x.view(), &x_new.view(), self.config.bandwidth);
        Ok(k.t().dot(&self.alpha))
    }

    /// Predict on a matrix in the original column space; the model's active
    /// set picks out its own columns.
    pub fn predict_full(&self, x_full: &CovariateMatrix) -> Result<Array1<f64>> {
        if self.active_set.len() == x_full.cols()
            && self.active_set.iter().enumerate().all(|(i, &j)| i == j)
        {
            return self.predict(x_full);
        }
        match self.active_set.iter().max() {
            Some(&mx) if mx < x_full.cols() => {
                self.predict(&x_full.select_columns(&self.active_set))
            }
            Some(&mx) => Err(Error::DimensionMismatch(format!(
                "active column {} out of bounds for {} columns",
                mx,
                x_full.cols()
            ))),
            None => Err(Error::DimensionMismatch(
                "kernel model has an empty active set".into(),
            )),
        }
    }

    /// Gradient of f̂ with respect to the evaluation point:
    /// ĝ_l(x) = Σᵢ αᵢ K(xᵢ, x)(x_{il} − x_l)/σ².
    pub fn gradient_eval(&self, x_new: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let p = self.train_x.cols();
        if x_new.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "model has {} columns, gradient point has {}",
                p,
                x_new.len()
            )));
        }
        let sigma = self.config.bandwidth;
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut g = Array1::zeros(p);
        for (i, xi) in self.train_x.view().rows().into_iter().enumerate() {
            let k = gaussian_kernel(xi.as_slice().unwrap(), x_new.as_slice().unwrap(), sigma)?;
            let w = self.alpha[i] * k * inv_s2;
            if w != 0.0 {
                for l in 0..p {
                    g[l] += w * (xi[l] - x_new[l]);
                }
            }
        }
        Ok(g)
    }
}

/// ‖ĝ_l‖²_m = m⁻¹ Σᵢ ĝ_l(xᵢ)² over the fitting sample, one entry per
/// model column.
pub fn gradient_norms(model: &KrrModel, x_obs: &CovariateMatrix) -> Result<GradientNorms> {
    if x_obs.cols() != model.train_x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} columns, evaluation sample has {}",
            model.train_x.cols(),
            x_obs.cols()
        )));
    }
    let k = cross_kernel(&model.train_x.view(), &x_obs.view(), model.config.bandwidth);
    Ok(GradientNorms(grad_norms_impl(
        &model.train_x.view(),
        &model.alpha,
        &k,
        &x_obs.view(),
        model.config.bandwidth,
    )))
}

/// Batched gradient-norm kernel shared with the stability-split path.
///
/// `kxe` is the m_train × m_eval kernel between training and evaluation
/// rows. Rewriting ĝ_l(x_j) = (Σᵢ αᵢ K_ij x_il − x_jl Σᵢ αᵢ K_ij)/σ² turns
/// the accumulation into two matrix products.
pub(crate) fn grad_norms_impl(
    x_train: &ArrayView2<f64>,
    alpha: &Array1<f64>,
    kxe: &Array2<f64>,
    x_eval: &ArrayView2<f64>,
    sigma: f64,
) -> Array1<f64> {
    let p = x_train.ncols();
    let m_eval = x_eval.nrows();
    let mut weighted = kxe.clone();
    for (mut row, &a) in weighted.rows_mut().into_iter().zip(alpha.iter()) {
        row.mapv_inplace(|v| v * a);
    }
    // c_j = Σᵢ αᵢ K_ij
    let c = weighted.sum_axis(Axis(0));
    // A[l, j] = Σᵢ αᵢ K_ij x_il
    let a_mat = x_train.t().dot(&weighted);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut norms = Array1::zeros(p);
    for l in 0..p {
        let mut acc = 0.0;
        for j in 0..m_eval {
            let g = (a_mat[[l, j]] - x_eval[[j, l]] * c[j]) * inv_s2;
            acc += g * g;
        }
        norms[l] = acc / m_eval as f64;
    }
    norms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen;
    use ndarray::array;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> CovariateMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CovariateMatrix::new(Array2::from_shape_fn((n, p), |_| rng.random::<f64>() - 0.5)).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(n, |_| 2.0 * rng.random::<f64>() - 1.0)
    }

    #[test]
    fn median_single_pair() {
        let x = CovariateMatrix::new(array![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(median_bandwidth(&x).unwrap(), 5.0);
    }

    #[test]
    fn median_all_duplicates_is_singular() {
        let x = CovariateMatrix::new(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(median_bandwidth(&x), Err(Error::SingularBandwidth)));
    }

    #[test]
    fn median_too_few_rows() {
        let x = CovariateMatrix::new(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(median_bandwidth(&x), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let x = random_matrix(100, 10, 42);
        // Oracle: direct per-pair distances, full sort, lower median.
        let mut dists = Vec::new();
        for i in 0..100 {
            for j in i + 1..100 {
                let d: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = dists[(dists.len() - 1) / 2];
        let got = median_bandwidth(&x).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn kernel_identities() {
        let x = vec![0.3, -0.2, 0.9];
        assert_eq!(gaussian_kernel(&x, &x, 2.5).unwrap(), 1.0);
        let sigma = 1.7;
        let k = gaussian_kernel(&[0.0], &[sigma * 2.0f64.sqrt()], sigma).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            gaussian_kernel(&[1.0], &[1.0, 2.0], 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn kernel_matrix_one_row_and_symmetry() {
        let x = CovariateMatrix::new(array![[0.4, 0.1]]).unwrap();
        let k = kernel_matrix(&x, 1.0).unwrap();
        assert_eq!(k, array![[1.0]]);

        let x = random_matrix(30, 4, 5);
        let k = kernel_matrix(&x, 0.8).unwrap();
        assert_eq!(k, k.t().to_owned(), "kernel matrix must be exactly symmetric");
        for i in 0..30 {
            assert_eq!(k[[i, i]], 1.0);
        }
    }

    #[test]
    fn kernel_matrix_matches_pointwise_evaluation() {
        let x = random_matrix(20, 6, 9);
        let sigma = 1.1;
        let k = kernel_matrix(&x, sigma).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let direct = gaussian_kernel(
                    x.row(i).as_slice().unwrap(),
                    x.row(j).as_slice().unwrap(),
                    sigma,
                )
                .unwrap();
                assert!((k[[i, j]] - direct).abs() < 1e-12);
            }
        }
    }

    /// Jacobi eigenvalue iteration, used only as an independent PSD oracle.
    fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += m[[i, j]] * m[[i, j]];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[[p, q]].abs() < 1e-15 {
                        continue;
                    }
                    let theta = 0.5 * (m[[q, q]] - m[[p, p]]) / m[[p, q]];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[[k, p]];
                        let mkq = m[[k, q]];
                        m[[k, p]] = c * mkp - s * mkq;
                        m[[k, q]] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[[p, k]];
                        let mqk = m[[q, k]];
                        m[[p, k]] = c * mpk - s * mqk;
                        m[[q, k]] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[[i, i]]).collect()
    }

    #[test]
    fn kernel_matrix_is_psd() {
        let x = random_matrix(50, 3, 11);
        let k = kernel_matrix(&x, 0.9).unwrap();
        let eigs = jacobi_eigenvalues(&k);
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "smallest eigenvalue {min}");
    }

    #[test]
    fn fit_krr_single_point() {
        let x = CovariateMatrix::new(array![[0.2, 0.4]]).unwrap();
        let y = array![3.0];
        let cfg = KernelConfig::new(1.0, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        assert!((model.alpha[0] - 3.0 / (1.0 + DEFAULT_RIDGE)).abs() < 1e-14);

        // Prediction at the training point: |f̂ − y| ≤ λ|y|/(1+λ).
        let pred = model.predict(&x).unwrap();
        let bound = DEFAULT_RIDGE * 3.0 / (1.0 + DEFAULT_RIDGE) + 1e-12;
        assert!((pred[0] - 3.0).abs() <= bound);
    }

    #[test]
    fn fit_krr_zero_response() {
        let x = random_matrix(8, 3, 2);
        let y = Array1::zeros(8);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        assert!(model.alpha.iter().all(|&a| a == 0.0));
        let preds = model.predict(&random_matrix(5, 3, 3)).unwrap();
        assert!(preds.iter().all(|&v| v == 0.0));
        let norms = gradient_norms(&model, &x).unwrap();
        assert!(norms.values().iter().all(|&v| v == 0.0));
    }

    /// Gauss-Jordan inverse, used only as the dense-inverse oracle.
    fn dense_inverse(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut aug = Array2::zeros((n, 2 * n));
        for i in 0..n {
            for j in 0..n {
                aug[[i, j]] = a[[i, j]];
            }
            aug[[i, n + i]] = 1.0;
        }
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if aug[[r, col]].abs() > aug[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                for j in 0..2 * n {
                    let t = aug[[col, j]];
                    aug[[col, j]] = aug[[piv, j]];
                    aug[[piv, j]] = t;
                }
            }
            let d = aug[[col, col]];
            for j in 0..2 * n {
                aug[[col, j]] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[[r, col]];
                    for j in 0..2 * n {
                        aug[[r, j]] -= f * aug[[col, j]];
                    }
                }
            }
        }
        let mut inv = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                inv[[i, j]] = aug[[i, n + j]];
            }
        }
        inv
    }

    #[test]
    fn fit_krr_matches_dense_inverse_oracle() {
        let x = random_matrix(5, 3, 21);
        let y = random_vec(5, 22);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();

        let mut k = kernel_matrix(&x, cfg.bandwidth()).unwrap();
        for i in 0..5 {
            k[[i, i]] += cfg.ridge();
        }
        let expected = dense_inverse(&k).dot(&y);
        for i in 0..5 {
            assert!((model.alpha[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_krr_residual_contract() {
        let x = random_matrix(120, 8, 31);
        let y = random_vec(120, 32);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let mut k = kernel_matrix(&x, cfg.bandwidth()).unwrap();
        for i in 0..120 {
            k[[i, i]] += cfg.ridge();
        }
        let r = &k.dot(model.alpha()) - &y;
        let rinf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let yinf = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rinf <= 1e-8 * (1.0 + yinf));
    }

    #[test]
    fn predict_matches_double_loop() {
        let x = random_matrix(12, 4, 41);
        let y = random_vec(12, 42);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let xe = random_matrix(7, 4, 43);
        let got = model.predict(&xe).unwrap();
        for j in 0..7 {
            let mut f = 0.0;
            for i in 0..12 {
                f += model.alpha()[i]
                    * gaussian_kernel(
                        x.row(i).as_slice().unwrap(),
                        xe.row(j).as_slice().unwrap(),
                        cfg.bandwidth(),
                    )
                    .unwrap();
            }
            assert!((got[j] - f).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_matrix(25, 3, 51);
        let y = random_vec(25, 52);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let h = 1e-5;
        for _ in 0..20 {
            let pt = Array1::from_shape_fn(3, |_| rng.random::<f64>() - 0.5);
            let g = model.gradient_eval(&pt.view()).unwrap();
            for l in 0..3 {
                let mut up = pt.clone();
                up[l] += h;
                let mut dn = pt.clone();
                dn[l] -= h;
                let fd = (model.predict(&CovariateMatrix::new(up.insert_axis(ndarray::Axis(0)).to_owned()).unwrap()).unwrap()[0]
                    - model.predict(&CovariateMatrix::new(dn.insert_axis(ndarray::Axis(0)).to_owned()).unwrap()).unwrap()[0])
                    / (2.0 * h);
                assert!(
                    (g[l] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "component {l}: analytic {} vs fd {}",
                    g[l],
                    fd
                );
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_single_training_point() {
        let x = CovariateMatrix::new(array![[0.1, -0.3]]).unwrap();
        let y = array![2.0];
        let cfg = KernelConfig::new(0.7, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let g = model.gradient_eval(&x.row(0)).unwrap();
        assert_eq!(g, array![0.0, 0.0]);
    }

    #[test]
    fn gradient_norms_match_pointwise_accumulation() {
        let x = random_matrix(18, 5, 61);
        let y = random_vec(18, 62);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let norms = gradient_norms(&model, &x).unwrap();
        let mut acc = Array1::<f64>::zeros(5);
        for i in 0..18 {
            let g = model.gradient_eval(&x.row(i)).unwrap();
            for l in 0..5 {
                acc[l] += g[l] * g[l];
            }
        }
        acc.mapv_inplace(|v| v / 18.0);
        for l in 0..5 {
            assert!((norms.values()[l] - acc[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_norms_separate_signal_on_m1() {
        let x = simgen::gen_covariates(400, 20, 77).unwrap();
        let y = simgen::gen_outcome_m1(&x, 78).unwrap();
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let model = fit_krr(&x, &y.view(), &cfg).unwrap();
        let norms = gradient_norms(&model, &x).unwrap();
        let max_noise = norms.values().iter().skip(4).cloned().fold(0.0f64, f64::max);
        for l in 0..4 {
            assert!(
                norms.values()[l] > max_noise,
                "signal covariate {l} has norm {} <= noise max {max_noise}",
                norms.values()[l]
            );
        }
    }

    #[test]
    fn gradient_norms_invariant_under_row_permutation() {
        let x = random_matrix(30, 4, 81);
        let y = random_vec(30, 82);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let base = gradient_norms(&fit_krr(&x, &y.view(), &cfg).unwrap(), &x).unwrap();

        let perm: Vec<usize> = (0..30).rev().collect();
        let xp = x.select_rows(&perm);
        let yp = Array1::from_iter(perm.iter().map(|&i| y[i]));
        let permuted = gradient_norms(&fit_krr(&xp, &yp.view(), &cfg).unwrap(), &xp).unwrap();
        for l in 0..4 {
            assert!((base.values()[l] - permuted.values()[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn response_scaling_scales_alpha_exactly() {
        let x = random_matrix(20, 3, 91);
        let y = random_vec(20, 92);
        let cfg = KernelConfig::with_median_bandwidth(&x, DEFAULT_RIDGE).unwrap();
        let base = fit_krr(&x, &y.view(), &cfg).unwrap();
        let scaled = fit_krr(&x, &(4.0 * &y).view(), &cfg).unwrap();
        for i in 0..20 {
            // Power-of-two scaling commutes exactly with the solve.
            assert_eq!(scaled.alpha()[i], 4.0 * base.alpha()[i]);
        }
        let n0 = gradient_norms(&base, &x).unwrap();
        let n1 = gradient_norms(&scaled, &x).unwrap();
        for l in 0..3 {
            assert!((n1.values()[l] - 16.0 * n0.values()[l]).abs() <= 1e-10 * n1.values()[l].abs());
        }
    }
}
