//! Response-probability estimation: group-lasso logistic regression fitted
//! by block coordinate gradient descent, and the unpenalized Newton MLE used
//! by the PS/NAIPW baselines.
//!
//! The minimized objective is S(β) = −l(β) + λ₂·Σ_g √df_g·‖β_g‖₂ with the
//! intercept unpenalized. Each block step minimizes a quadratic model with
//! curvature h_g·I and is accepted through Armijo backtracking, so the sweep
//! sequence of objective values never increases.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::kernel::CovariateMatrix;
use crate::linalg::Cholesky;

const H_CAP: f64 = 1e8;
const MAX_BACKTRACKS: usize = 60;
/// Predicted probabilities are kept strictly inside (0, 1) in floating point.
const PROB_EPS: f64 = 1e-16;

/// Grouping of the covariate columns; every column belongs to exactly one
/// group and the intercept is outside all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    p: usize,
}

impl GroupStructure {
    /// Every covariate its own group (df_g = 1), the default for continuous
    /// covariates.
    pub fn singletons(p: usize) -> Self {
        Self { groups: (0..p).map(|j| vec![j]).collect(), p }
    }

    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let mut seen = vec![false; p];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::DegenerateInput("empty covariate group".into()));
            }
            for &j in group {
                if j >= p || seen[j] {
                    return Err(Error::DegenerateInput(format!(
                        "groups must partition the {p} columns; column {j} repeated or out of range"
                    )));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::DegenerateInput(
                "groups must cover every covariate column".into(),
            ));
        }
        Ok(Self { groups, p })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_cols(&self) -> usize {
        self.p
    }

    pub fn df(&self, g: usize) -> usize {
        self.groups[g].len()
    }
}

/// A fitted (possibly penalized) logistic response model.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub beta0: f64,
    pub beta1: Array1<f64>,
    pub lambda2: f64,
    pub structure: GroupStructure,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityModel {
    /// logistic(β₀ + xᵀβ₁) per row, strictly inside (0, 1).
    pub fn predict(&self, x: &CovariateMatrix) -> Result<Array1<f64>> {
        predict_propensity(self, x)
    }

    /// Column indices belonging to groups with a nonzero coefficient block.
    pub fn nonzero_groups(&self) -> Vec<Vec<usize>> {
        self.structure
            .groups()
            .iter()
            .filter(|cols| cols.iter().any(|&j| self.beta1[j] != 0.0))
            .cloned()
            .collect()
    }
}

/// Step-size and termination knobs of the block coordinate gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct BcgdConfig {
    pub alpha0: f64,
    pub delta_backtrack: f64,
    pub sigma_armijo: f64,
    pub h_floor: f64,
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Scale columns to unit second moment before fitting and map the
    /// coefficients back afterwards.
    pub standardize: bool,
}

impl Default for BcgdConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            delta_backtrack: 0.5,
            sigma_armijo: 0.1,
            h_floor: 1e-3,
            max_iter: 500,
            kkt_tol: 1e-6,
            standardize: true,
        }
    }
}

impl BcgdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0)
            || !(self.delta_backtrack > 0.0 && self.delta_backtrack < 1.0)
            || !(self.sigma_armijo > 0.0 && self.sigma_armijo < 1.0)
            || !(self.h_floor > 0.0)
            || self.max_iter == 0
            || !(self.kkt_tol > 0.0)
        {
            return Err(Error::Domain("invalid BCGD configuration".into()));
        }
        Ok(())
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn linear_index(beta0: f64, beta1: &ArrayView1<f64>, x: &CovariateMatrix) -> Array1<f64> {
    let mut eta = x.view().dot(beta1);
    eta += beta0;
    eta
}

/// Bernoulli log-likelihood Σ[δᵢη − log(1 + e^η)] with η = β₀ + xᵀβ₁,
/// evaluated through the stable log-sum form.
pub fn log_likelihood(
    beta0: f64,
    beta1: &ArrayView1<f64>,
    x: &CovariateMatrix,
    delta: &[bool],
) -> Result<f64> {
    check_dims(beta1, x, delta)?;
    let eta = linear_index(beta0, beta1, x);
    Ok(log_likelihood_from_eta(&eta, delta))
}

fn log_likelihood_from_eta(eta: &Array1<f64>, delta: &[bool]) -> f64 {
    let mut l = 0.0;
    for (e, &d) in eta.iter().zip(delta) {
        l += if d { *e } else { 0.0 } - log1p_exp(*e);
    }
    l
}

fn check_dims(beta1: &ArrayView1<f64>, x: &CovariateMatrix, delta: &[bool]) -> Result<()> {
    if beta1.len() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients vs {} columns",
            beta1.len(),
            x.cols()
        )));
    }
    if delta.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} indicators vs {} rows",
            delta.len(),
            x.rows()
        )));
    }
    Ok(())
}

fn group_penalty(beta1: &ArrayView1<f64>, structure: &GroupStructure) -> f64 {
    structure
        .groups()
        .iter()
        .map(|cols| {
            let norm = cols.iter().map(|&j| beta1[j] * beta1[j]).sum::<f64>().sqrt();
            (cols.len() as f64).sqrt() * norm
        })
        .sum()
}

/// S(β) = −l(β) + λ₂·Σ_g √df_g·‖β_g‖₂; the intercept carries no penalty.
pub fn penalized_objective(
    beta0: f64,
    beta1: &ArrayView1<f64>,
    x: &CovariateMatrix,
    delta: &[bool],
    lambda2: f64,
    structure: &GroupStructure,
) -> Result<f64> {
    Ok(-log_likelihood(beta0, beta1, x, delta)? + lambda2 * group_penalty(beta1, structure))
}

/// Quadratic-model block step: grad_g is the block gradient of −l.
/// Returns −β_g when the thresholded point is zero, otherwise the
/// soft-thresholded quasi-Newton step.
pub fn bcgd_direction(
    beta_g: &ArrayView1<f64>,
    grad_g: &ArrayView1<f64>,
    h_g: f64,
    lambda2: f64,
    df_g: usize,
) -> Array1<f64> {
    assert!(h_g > 0.0, "block curvature must be positive");
    let bound = lambda2 * (df_g as f64).sqrt();
    let shifted = grad_g - &(h_g * beta_g);
    let shifted_norm = shifted.dot(&shifted).sqrt();
    if shifted_norm <= bound {
        return -beta_g.to_owned();
    }
    let scale = bound / shifted_norm;
    let mut d = grad_g - &(scale * &shifted);
    d.mapv_inplace(|v| -v / h_g);
    d
}

/// Armijo decrement of a block direction: Δ = d᳆∇(−l) plus the penalty
/// difference of the stepped group(s).
fn armijo_decrement(
    d0: f64,
    d1: &Array1<f64>,
    grad0: f64,
    grad1: &Array1<f64>,
    beta1: &ArrayView1<f64>,
    lambda2: f64,
    structure: &GroupStructure,
) -> f64 {
    let mut delta_q = d0 * grad0 + d1.dot(grad1);
    for cols in structure.groups() {
        if cols.iter().any(|&j| d1[j] != 0.0) {
            let df_sqrt = (cols.len() as f64).sqrt();
            let before = cols.iter().map(|&j| beta1[j] * beta1[j]).sum::<f64>().sqrt();
            let after = cols
                .iter()
                .map(|&j| (beta1[j] + d1[j]) * (beta1[j] + d1[j]))
                .sum::<f64>()
                .sqrt();
            delta_q += lambda2 * df_sqrt * (after - before);
        }
    }
    delta_q
}

/// Shared backtracking loop: finds the largest α₀δˡ (l ≤ 60) whose objective
/// difference satisfies the Armijo bound α·σ·Δ. Returns the accepted step
/// and the achieved objective difference.
fn backtrack(
    obj_diff: impl Fn(f64) -> f64,
    delta_q: f64,
    config: &BcgdConfig,
) -> Result<(f64, f64)> {
    if !(delta_q < 0.0) {
        return Err(Error::Convergence(format!(
            "Armijo search requires a descent direction, got decrement {delta_q:.3e}"
        )));
    }
    let mut alpha = config.alpha0;
    for _ in 0..=MAX_BACKTRACKS {
        let diff = obj_diff(alpha);
        if diff <= alpha * config.sigma_armijo * delta_q {
            return Ok((alpha, diff));
        }
        alpha *= config.delta_backtrack;
    }
    Err(Error::Convergence(format!(
        "Armijo stalled after {MAX_BACKTRACKS} backtracks (decrement {delta_q:.3e}, final step {alpha:.3e})"
    )))
}

/// Full-signature Armijo line search over the penalized objective.
/// `d` is the direction over (β₀, β₁); typically only one block is nonzero.
#[allow(clippy::too_many_arguments)]
pub fn armijo_step(
    beta0: f64,
    beta1: &ArrayView1<f64>,
    d0: f64,
    d1: &Array1<f64>,
    lambda2: f64,
    structure: &GroupStructure,
    config: &BcgdConfig,
    x: &CovariateMatrix,
    delta: &[bool],
) -> Result<f64> {
    config.validate()?;
    if d0 == 0.0 && d1.iter().all(|&v| v == 0.0) {
        return Err(Error::Convergence("Armijo search requires a nonzero direction".into()));
    }
    let eta = linear_index(beta0, beta1, x);
    let pi: Array1<f64> = eta.mapv(logistic);
    let grad0: f64 = pi.iter().zip(delta).map(|(&p, &d)| p - f64::from(d)).sum();
    let resid = Array1::from_iter(pi.iter().zip(delta).map(|(&p, &d)| p - f64::from(d)));
    let grad1 = x.view().t().dot(&resid);
    let delta_q = armijo_decrement(d0, d1, grad0, &grad1, beta1, lambda2, structure);

    let s_now = penalized_objective(beta0, beta1, x, delta, lambda2, structure)?;
    let obj_diff = |alpha: f64| -> f64 {
        let trial1 = beta1 + &(alpha * d1);
        penalized_objective(beta0 + alpha * d0, &trial1.view(), x, delta, lambda2, structure)
            .unwrap_or(f64::INFINITY)
            - s_now
    };
    backtrack(obj_diff, delta_q, config).map(|(alpha, _)| alpha)
}

/// Smallest λ₂ for which the null model (intercept only) satisfies every
/// group's KKT condition: max_g ‖∇(−l)(β_null)_g‖₂ / √df_g.
pub fn lambda_max(x: &CovariateMatrix, delta: &[bool], structure: &GroupStructure) -> Result<f64> {
    let n = x.rows();
    if delta.len() != n {
        return Err(Error::DimensionMismatch("delta length vs rows".into()));
    }
    let rate = delta.iter().filter(|&&d| d).count() as f64 / n as f64;
    let resid = Array1::from_iter(delta.iter().map(|&d| rate - f64::from(d)));
    let grad = x.view().t().dot(&resid);
    Ok(structure
        .groups()
        .iter()
        .map(|cols| {
            let norm = cols.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
            norm / (cols.len() as f64).sqrt()
        })
        .fold(0.0f64, f64::max))
}

/// Per-fit working data: contiguous column storage of the (scaled) design,
/// so block gradients are dot products over dense slices.
struct FitWork {
    cols: Vec<Vec<f64>>,
    delta_f: Vec<f64>,
    n: usize,
}

impl FitWork {
    fn new(xs: &CovariateMatrix, delta: &[bool]) -> Self {
        let n = xs.rows();
        let v = xs.view();
        let cols = (0..xs.cols())
            .map(|j| v.column(j).iter().cloned().collect())
            .collect();
        let delta_f = delta.iter().map(|&d| f64::from(d)).collect();
        Self { cols, delta_f, n }
    }
}

struct FitState {
    beta0: f64,
    beta1: Array1<f64>,
    eta: Vec<f64>,
    pi: Vec<f64>,
    weights: Vec<f64>,
    /// π − δ, the per-row gradient factor.
    resid: Vec<f64>,
}

impl FitState {
    fn from_coefficients(work: &FitWork, beta0: f64, beta1: Array1<f64>) -> Self {
        let mut eta = vec![beta0; work.n];
        for (j, &b) in beta1.iter().enumerate() {
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(&work.cols[j]) {
                    *e += b * v;
                }
            }
        }
        let mut st = Self {
            beta0,
            beta1,
            eta,
            pi: vec![0.0; work.n],
            weights: vec![0.0; work.n],
            resid: vec![0.0; work.n],
        };
        st.refresh(work);
        st
    }

    fn refresh(&mut self, work: &FitWork) {
        for i in 0..work.n {
            let p = logistic(self.eta[i]);
            self.pi[i] = p;
            self.weights[i] = p * (1.0 - p);
            self.resid[i] = p - work.delta_f[i];
        }
    }
}

/// A block direction's effect on the linear index for a unit step.
enum StepDir<'a> {
    /// Intercept: η + α·c.
    Constant(f64),
    /// Singleton group: η + α·c·column.
    Column(f64, &'a [f64]),
    /// General group: η + α·v.
    Dense(Vec<f64>),
}

impl StepDir<'_> {
    /// Change of −l for a step of size `alpha`, accumulated as per-row
    /// differences so the rounding noise scales with the difference itself
    /// rather than with the objective's magnitude; Armijo decrements near
    /// the convergence tolerance stay certifiable.
    fn smooth_diff_at(&self, eta: &[f64], delta: &[bool], alpha: f64) -> f64 {
        let row = |e: f64, step: f64, d: bool| -> f64 {
            let t = e + step;
            log1p_exp(t) - log1p_exp(e) - if d { step } else { 0.0 }
        };
        let mut diff = 0.0;
        match self {
            StepDir::Constant(c) => {
                let ac = alpha * c;
                for (&e, &d) in eta.iter().zip(delta) {
                    diff += row(e, ac, d);
                }
            }
            StepDir::Column(c, col) => {
                let ac = alpha * c;
                for ((&e, &v), &d) in eta.iter().zip(col.iter()).zip(delta) {
                    diff += row(e, ac * v, d);
                }
            }
            StepDir::Dense(v) => {
                for ((&e, &dv), &d) in eta.iter().zip(v.iter()).zip(delta) {
                    diff += row(e, alpha * dv, d);
                }
            }
        }
        diff
    }

    fn apply(&self, eta: &mut [f64], alpha: f64) {
        match self {
            StepDir::Constant(c) => {
                for e in eta.iter_mut() {
                    *e += alpha * c;
                }
            }
            StepDir::Column(c, col) => {
                let ac = alpha * c;
                for (e, &v) in eta.iter_mut().zip(col.iter()) {
                    *e += ac * v;
                }
            }
            StepDir::Dense(v) => {
                for (e, &dv) in eta.iter_mut().zip(v.iter()) {
                    *e += alpha * dv;
                }
            }
        }
    }
}

/// Block coordinate gradient descent for the group-lasso logistic objective.
/// The intercept is updated each sweep as an unpenalized curvature-scaled
/// block; convergence is declared from the KKT violations at the sweep end.
pub fn fit_group_lasso(
    x: &CovariateMatrix,
    delta: &[bool],
    lambda2: f64,
    structure: &GroupStructure,
    config: &BcgdConfig,
) -> Result<PropensityModel> {
    config.validate()?;
    check_class_balance(delta)?;
    if structure.num_cols() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "group structure covers {} columns, design has {}",
            structure.num_cols(),
            x.cols()
        )));
    }
    if !(lambda2 >= 0.0) {
        return Err(Error::Domain(format!("lambda2 must be nonnegative, got {lambda2}")));
    }
    check_dims(&Array1::zeros(x.cols()).view(), x, delta)?;

    let scales = column_scales(x, config.standardize);
    let xs = scaled_design(x, &scales);
    let fit = fit_group_lasso_scaled(&xs, delta, lambda2, structure, config)?;

    let mut beta1 = fit.beta1;
    for (b, s) in beta1.iter_mut().zip(&scales) {
        *b /= s;
    }
    Ok(PropensityModel {
        beta0: fit.beta0,
        beta1,
        lambda2,
        structure: structure.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

fn check_class_balance(delta: &[bool]) -> Result<()> {
    let ones = delta.iter().filter(|&&d| d).count();
    if ones == 0 || ones == delta.len() {
        return Err(Error::DegenerateInput(
            "response indicators must contain both classes".into(),
        ));
    }
    Ok(())
}

fn column_scales(x: &CovariateMatrix, standardize: bool) -> Vec<f64> {
    if !standardize {
        return vec![1.0; x.cols()];
    }
    let n = x.rows() as f64;
    x.view()
        .axis_iter(Axis(1))
        .map(|col| {
            let rms = (col.dot(&col) / n).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

fn scaled_design(x: &CovariateMatrix, scales: &[f64]) -> CovariateMatrix {
    if scales.iter().all(|&s| s == 1.0) {
        return x.clone();
    }
    let mut data = x.view().to_owned();
    for (mut col, &s) in data.axis_iter_mut(Axis(1)).zip(scales) {
        col.mapv_inplace(|v| v / s);
    }
    CovariateMatrix::from_valid(data)
}

struct ScaledFit {
    beta0: f64,
    beta1: Array1<f64>,
    converged: bool,
    iterations: usize,
}

fn fit_group_lasso_scaled(
    xs: &CovariateMatrix,
    delta: &[bool],
    lambda2: f64,
    structure: &GroupStructure,
    config: &BcgdConfig,
) -> Result<ScaledFit> {
    let work = FitWork::new(xs, delta);
    let rate = delta.iter().filter(|&&d| d).count() as f64 / work.n as f64;
    let state = FitState::from_coefficients(&work, logit(rate), Array1::zeros(xs.cols()));
    Ok(sweep_loop(&work, delta, lambda2, structure, config, state))
}

fn smooth_value(eta: &[f64], delta: &[bool]) -> f64 {
    let mut neg_l = 0.0;
    for (&e, &d) in eta.iter().zip(delta) {
        neg_l += log1p_exp(e) - if d { e } else { 0.0 };
    }
    neg_l
}

fn kkt_violations(
    work: &FitWork,
    state: &FitState,
    lambda2: f64,
    structure: &GroupStructure,
) -> (f64, f64) {
    let grad: Vec<f64> = work
        .cols
        .iter()
        .map(|col| col.iter().zip(&state.resid).map(|(&v, &r)| v * r).sum())
        .collect();
    let grad0: f64 = state.resid.iter().sum();
    let ginf = grad.iter().fold(grad0.abs(), |m, v| m.max(v.abs()));
    let scale = 1.0 + ginf;

    let mut active_viol = grad0.abs() / scale;
    let mut zero_viol = 0.0f64;
    for cols in structure.groups() {
        let df_sqrt = (cols.len() as f64).sqrt();
        let bnorm = cols.iter().map(|&j| state.beta1[j] * state.beta1[j]).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            let gnorm = cols.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
            zero_viol = zero_viol.max(gnorm - lambda2 * df_sqrt);
        } else {
            let mut acc = 0.0;
            for &j in cols {
                let v = grad[j] + lambda2 * df_sqrt * state.beta1[j] / bnorm;
                acc += v * v;
            }
            active_viol = active_viol.max(acc.sqrt() / scale);
        }
    }
    (active_viol, zero_viol.max(0.0))
}

/// KKT audit of a fitted model against the *given* design (no
/// standardization applied here): returns the scaled active-group violation
/// and the absolute zero-group violation.
pub fn kkt_report(
    x: &CovariateMatrix,
    delta: &[bool],
    model: &PropensityModel,
) -> Result<(f64, f64)> {
    check_dims(&model.beta1.view(), x, delta)?;
    let work = FitWork::new(x, delta);
    let state = FitState::from_coefficients(&work, model.beta0, model.beta1.clone());
    Ok(kkt_violations(&work, &state, model.lambda2, &model.structure))
}

/// BIC-selected λ₂ over a 30-point log grid from λ_max down to λ_max·1e−3,
/// warm-started from sparse to dense. The path stops early once BIC has
/// failed to improve for five consecutive grid points; the chosen λ₂ is then
/// refit at the caller's full tolerance. Ties keep the larger (sparser) λ₂.
pub fn fit_group_lasso_auto(
    x: &CovariateMatrix,
    delta: &[bool],
    structure: &GroupStructure,
    config: &BcgdConfig,
) -> Result<PropensityModel> {
    config.validate()?;
    check_class_balance(delta)?;
    if structure.num_cols() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "group structure covers {} columns, design has {}",
            structure.num_cols(),
            x.cols()
        )));
    }
    let scales = column_scales(x, config.standardize);
    let xs = scaled_design(x, &scales);
    let lmax = lambda_max(&xs, delta, structure)?;
    if lmax <= 0.0 {
        // Degenerate design (all-zero columns): the null model is optimal.
        return fit_group_lasso(x, delta, 0.0, structure, config);
    }
    let n_grid = 30;
    let lambdas: Vec<f64> = (0..n_grid)
        .map(|i| {
            let t = i as f64 / (n_grid - 1) as f64;
            (lmax.ln() + t * (1e-3f64.ln())).exp()
        })
        .collect();

    // Path exploration runs at a relaxed tolerance and capped sweep budget;
    // only the winner is polished.
    let explore = BcgdConfig {
        kkt_tol: config.kkt_tol.max(1e-4),
        max_iter: config.max_iter.min(100),
        ..*config
    };

    let work = FitWork::new(&xs, delta);
    let rate = delta.iter().filter(|&&d| d).count() as f64 / work.n as f64;
    let n = x.rows() as f64;
    let mut best: Option<(f64, f64, f64, Array1<f64>)> = None; // (bic, lambda, beta0, beta1)
    let mut warm: Option<(f64, Array1<f64>)> = None;
    let mut since_best = 0usize;
    for &lambda2 in &lambdas {
        let state = match &warm {
            None => FitState::from_coefficients(&work, logit(rate), Array1::zeros(x.cols())),
            Some((b0, b1)) => FitState::from_coefficients(&work, *b0, b1.clone()),
        };
        let fit = sweep_loop(&work, delta, lambda2, structure, &explore, state);
        let ll = log_likelihood(fit.beta0, &fit.beta1.view(), &xs, delta)?;
        let nonzero = fit.beta1.iter().filter(|&&b| b != 0.0).count();
        let bic = -2.0 * ll + n.ln() * nonzero as f64;
        warm = Some((fit.beta0, fit.beta1.clone()));
        let better = match &best {
            None => true,
            Some((best_bic, ..)) => bic < *best_bic,
        };
        if better {
            best = Some((bic, lambda2, fit.beta0, fit.beta1));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 5 {
                break;
            }
        }
    }
    let (_, lambda2, b0, b1) = best.expect("nonempty lambda grid");
    let state = FitState::from_coefficients(&work, b0, b1);
    let fit = sweep_loop(&work, delta, lambda2, structure, config, state);

    let mut beta1 = fit.beta1;
    for (b, s) in beta1.iter_mut().zip(&scales) {
        *b /= s;
    }
    Ok(PropensityModel {
        beta0: fit.beta0,
        beta1,
        lambda2,
        structure: structure.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

fn sweep_loop(
    work: &FitWork,
    delta: &[bool],
    lambda2: f64,
    structure: &GroupStructure,
    config: &BcgdConfig,
    state: FitState,
) -> ScaledFit {
    let mut st = state;
    let mut converged = false;
    let mut iterations = 0;
    let mut objective =
        smooth_value(&st.eta, delta) + lambda2 * group_penalty(&st.beta1.view(), structure);
    // Steps whose predicted decrease sits at the float resolution of the
    // objective cannot be certified by the Armijo inequality; they are
    // skipped, which leaves a KKT residual below the tolerance scale.
    let resolution = |obj: f64| f64::EPSILON * (1.0 + obj.abs());

    for sweep in 1..=config.max_iter {
        iterations = sweep;

        // Intercept block: unpenalized curvature-scaled step.
        {
            let grad0: f64 = st.resid.iter().sum();
            let h0 = st.weights.iter().sum::<f64>().clamp(config.h_floor, H_CAP);
            let d0 = -grad0 / h0;
            let delta_q = d0 * grad0;
            if delta_q < -resolution(objective) {
                let dir = StepDir::Constant(d0);
                let obj_diff = |alpha: f64| dir.smooth_diff_at(&st.eta, delta, alpha);
                if let Ok((alpha, diff)) = backtrack(obj_diff, delta_q, config) {
                    st.beta0 += alpha * d0;
                    dir.apply(&mut st.eta, alpha);
                    st.refresh(work);
                    objective += diff;
                }
            }
        }

        for cols in structure.groups() {
            let df = cols.len();
            let mut grad_g = Array1::zeros(df);
            for (k, &j) in cols.iter().enumerate() {
                grad_g[k] =
                    work.cols[j].iter().zip(&st.resid).map(|(&v, &r)| v * r).sum::<f64>();
            }
            let beta_g = Array1::from_iter(cols.iter().map(|&j| st.beta1[j]));
            let bound = lambda2 * (df as f64).sqrt();
            let zero_block = beta_g.iter().all(|&b| b == 0.0);
            if zero_block && grad_g.dot(&grad_g).sqrt() <= bound {
                // The block stays at zero; no curvature needed.
                continue;
            }

            let mut h_acc = 0.0;
            for &j in cols {
                h_acc += work.cols[j]
                    .iter()
                    .zip(&st.weights)
                    .map(|(&v, &w)| w * v * v)
                    .sum::<f64>();
            }
            let h_g = (h_acc / df as f64).clamp(config.h_floor, H_CAP);
            let d = bcgd_direction(&beta_g.view(), &grad_g.view(), h_g, lambda2, df);
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let df_sqrt = (df as f64).sqrt();
            let norm_before = beta_g.dot(&beta_g).sqrt();
            let stepped = &beta_g + &d;
            let norm_after = stepped.dot(&stepped).sqrt();
            let delta_q = d.dot(&grad_g) + lambda2 * df_sqrt * (norm_after - norm_before);
            if !(delta_q < -resolution(objective)) {
                continue;
            }

            let dir = if df == 1 {
                StepDir::Column(d[0], &work.cols[cols[0]])
            } else {
                let mut v = vec![0.0; work.n];
                for (k, &j) in cols.iter().enumerate() {
                    if d[k] != 0.0 {
                        for (acc, &x) in v.iter_mut().zip(&work.cols[j]) {
                            *acc += d[k] * x;
                        }
                    }
                }
                StepDir::Dense(v)
            };
            let obj_diff = |alpha: f64| {
                let moved = &beta_g + &(alpha * &d);
                let pen = lambda2 * df_sqrt * (moved.dot(&moved).sqrt() - norm_before);
                dir.smooth_diff_at(&st.eta, delta, alpha) + pen
            };
            if let Ok((alpha, diff)) = backtrack(obj_diff, delta_q, config) {
                for (k, &j) in cols.iter().enumerate() {
                    st.beta1[j] += alpha * d[k];
                }
                dir.apply(&mut st.eta, alpha);
                st.refresh(work);
                objective += diff;
            }
        }

        let (active_viol, zero_viol) = kkt_violations(work, &st, lambda2, structure);
        if active_viol <= config.kkt_tol && zero_viol <= config.kkt_tol {
            converged = true;
            break;
        }
    }
    ScaledFit { beta0: st.beta0, beta1: st.beta1, converged, iterations }
}

/// Unpenalized logistic MLE by Newton-Raphson with step halving. Returns
/// `converged = false` (never an error) when p ≥ n, the Hessian stays
/// singular after one ridge-jittered retry, or the scores fail to vanish —
/// the benchmark tables report such cells as "-".
pub fn fit_logistic_mle(
    x: &CovariateMatrix,
    delta: &[bool],
    max_iter: usize,
    tol: f64,
) -> Result<PropensityModel> {
    check_class_balance(delta)?;
    check_dims(&Array1::zeros(x.cols()).view(), x, delta)?;
    let n = x.rows();
    let p = x.cols();
    let rate = delta.iter().filter(|&&d| d).count() as f64 / n as f64;
    let structure = GroupStructure::singletons(p);

    let not_converged = |iterations: usize| PropensityModel {
        beta0: logit(rate),
        beta1: Array1::zeros(p),
        lambda2: 0.0,
        structure: structure.clone(),
        converged: false,
        iterations,
    };

    if p == 0 {
        return Ok(PropensityModel {
            beta0: logit(rate),
            beta1: Array1::zeros(0),
            lambda2: 0.0,
            structure,
            converged: true,
            iterations: 0,
        });
    }
    if p >= n {
        return Ok(not_converged(0));
    }

    // Augmented design [1 | X].
    let mut z = Array2::ones((n, p + 1));
    z.slice_mut(ndarray::s![.., 1..]).assign(&x.view());

    let delta_f: Vec<f64> = delta.iter().map(|&d| f64::from(d)).collect();
    let mut beta = Array1::zeros(p + 1);
    beta[0] = logit(rate);
    let mut jittered = false;

    for iter in 1..=max_iter {
        let eta = z.dot(&beta);
        let pi = eta.mapv(logistic);
        let score_vec = Array1::from_iter(
            delta_f.iter().zip(pi.iter()).map(|(&d, &pv)| d - pv),
        );
        let score = z.t().dot(&score_vec);
        let sinf = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sinf <= tol * n as f64 {
            // A vanished score with numerically saturated probabilities is
            // the (quasi-)separation signature, not a maximum.
            let saturated = pi.iter().any(|&p| p < 1e-8 || p > 1.0 - 1e-8);
            if saturated {
                return Ok(not_converged(iter));
            }
            return Ok(PropensityModel {
                beta0: beta[0],
                beta1: beta.slice(ndarray::s![1..]).to_owned(),
                lambda2: 0.0,
                structure,
                converged: true,
                iterations: iter - 1,
            });
        }

        let w = pi.mapv(|p| p * (1.0 - p));
        let mut zw = z.clone();
        for (mut row, &wi) in zw.rows_mut().into_iter().zip(w.iter()) {
            row.mapv_inplace(|v| v * wi);
        }
        let mut hess = z.t().dot(&zw);
        let step = match Cholesky::new(&hess) {
            Some(f) => f.solve(&score),
            None => {
                if jittered {
                    return Ok(not_converged(iter));
                }
                jittered = true;
                let jitter = 1e-8
                    * (1.0 + hess.diag().iter().cloned().fold(0.0f64, f64::max));
                for i in 0..p + 1 {
                    hess[[i, i]] += jitter;
                }
                match Cholesky::new(&hess) {
                    Some(f) => f.solve(&score),
                    None => return Ok(not_converged(iter)),
                }
            }
        };

        // Step halving keeps the likelihood from decreasing.
        let ll_here = log_likelihood_from_eta(&eta, delta);
        let slack = 1e-12 * (1.0 + ll_here.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &beta + &(scale * &step);
            let ll_trial = log_likelihood_from_eta(&z.dot(&trial), delta);
            if ll_trial >= ll_here - slack {
                beta = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Ok(not_converged(iter));
        }
        let binf = beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if binf > 1e4 {
            // Separation signature: coefficients diverging.
            return Ok(not_converged(iter));
        }
    }
    Ok(not_converged(max_iter))
}

/// logistic(β₀ + xᵀβ₁), clamped strictly inside (0, 1) in floating point.
pub fn predict_propensity(model: &PropensityModel, x: &CovariateMatrix) -> Result<Array1<f64>> {
    if model.beta1.len() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} coefficients, design has {} columns",
            model.beta1.len(),
            x.cols()
        )));
    }
    if !model.beta0.is_finite() || model.beta1.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("propensity model has non-finite coefficients".into()));
    }
    let eta = linear_index(model.beta0, &model.beta1.view(), x);
    Ok(eta.mapv(|e| logistic(e).clamp(PROB_EPS, 1.0 - PROB_EPS)))
}
