//! Population-mean estimators for incomplete data: the augmented inverse
//! probability weighting combination with its plug-in variance, and the
//! complete-case, propensity-weighting, deterministic-imputation and naive
//! AIPW baselines.

use ndarray::Array1;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernel::{CovariateMatrix, KernelConfig, KrrModel};
use crate::propensity::{
    fit_group_lasso, fit_group_lasso_auto, fit_logistic_mle, predict_propensity, BcgdConfig,
    GroupStructure, PropensityModel,
};
use crate::select::{fit_sparse_krr, OutcomeFit, SparseKrrFit, ThresholdSearchConfig};

const CI_CRITICAL: f64 = 1.96;
/// Raw propensities below this floor are counted as a warning diagnostic,
/// and define the optional clamp interval.
pub const PROPENSITY_FLOOR: f64 = 0.01;

/// Covariates, responses and the response indicator. Unobserved response
/// slots hold a NaN sentinel that no estimator ever reads.
#[derive(Debug, Clone)]
pub struct IncompleteDataset {
    x: CovariateMatrix,
    y: Array1<f64>,
    delta: Vec<bool>,
}

impl IncompleteDataset {
    pub fn new(x: CovariateMatrix, y: Array1<f64>, delta: Vec<bool>) -> Result<Self> {
        if y.len() != x.rows() || delta.len() != x.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows vs {} responses vs {} indicators",
                x.rows(),
                y.len(),
                delta.len()
            )));
        }
        if !delta.iter().any(|&d| d) {
            return Err(Error::DegenerateInput("no observed responses".into()));
        }
        for (i, (&d, v)) in delta.iter().zip(y.iter()).enumerate() {
            if d && !v.is_finite() {
                return Err(Error::Domain(format!(
                    "observed response at row {i} is not finite"
                )));
            }
        }
        let mut y = y;
        for (v, &d) in y.iter_mut().zip(&delta) {
            if !d {
                *v = f64::NAN;
            }
        }
        Ok(Self { x, y, delta })
    }

    pub fn fully_observed(x: CovariateMatrix, y: Array1<f64>) -> Result<Self> {
        let n = x.rows();
        Self::new(x, y, vec![true; n])
    }

    pub fn x(&self) -> &CovariateMatrix {
        &self.x
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    /// Response vector with NaN at unobserved slots.
    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn observed_count(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn response_rate(&self) -> f64 {
        self.observed_count() as f64 / self.n() as f64
    }

    pub fn all_observed(&self) -> bool {
        self.delta.iter().all(|&d| d)
    }

    /// Complete cases: rows with an observed response.
    pub fn observed(&self) -> (CovariateMatrix, Array1<f64>) {
        let rows: Vec<usize> = self
            .delta
            .iter()
            .enumerate()
            .filter(|(_, &d)| d)
            .map(|(i, _)| i)
            .collect();
        let y = Array1::from_iter(rows.iter().map(|&i| self.y[i]));
        (self.x.select_rows(&rows), y)
    }
}

/// Which divisor the AIPW average uses: the sample size n, or the sum of
/// inverse propensity weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    SampleSize,
    InverseWeightSum,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AipwConfig {
    /// Optional probability clamp to [ε, 1−ε]; off by default because it
    /// changes the estimator.
    pub clamp: Option<f64>,
    pub normalization: Normalization,
}

/// AIPW point estimate, plug-in variance, confidence interval and the
/// per-unit pseudo-values behind them.
#[derive(Debug, Clone)]
pub struct AipwEstimate {
    pub theta_hat: f64,
    pub sigma2_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pseudo_values: Array1<f64>,
    pub response_rate: f64,
    /// Count of raw propensities below [`PROPENSITY_FLOOR`].
    pub small_propensity_count: usize,
}

/// AIPW from precomputed imputation predictions and propensities.
/// Pseudo-values: ŷᵢ = f̂₀(xᵢ)(1 − δᵢ/π̂ᵢ) + δᵢyᵢ/π̂ᵢ.
pub fn aipw_from_predictions(
    data: &IncompleteDataset,
    f0_hat: &Array1<f64>,
    pi_hat: &Array1<f64>,
    config: &AipwConfig,
) -> Result<AipwEstimate> {
    let n = data.n();
    if f0_hat.len() != n || pi_hat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows vs {} imputations vs {} propensities",
            f0_hat.len(),
            pi_hat.len()
        )));
    }
    let mut small = 0usize;
    for (i, &p) in pi_hat.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!(
                "propensity at row {i} is {p}, outside (0, 1]"
            )));
        }
        if p < PROPENSITY_FLOOR {
            small += 1;
        }
    }

    let clamp = |p: f64| match config.clamp {
        Some(eps) => p.clamp(eps, 1.0 - eps),
        None => p,
    };

    let mut pseudo = Array1::zeros(n);
    let mut weight_sum = 0.0;
    for i in 0..n {
        if data.delta[i] {
            let w = 1.0 / clamp(pi_hat[i]);
            pseudo[i] = f0_hat[i] * (1.0 - w) + w * data.y[i];
            weight_sum += w;
        } else {
            pseudo[i] = f0_hat[i];
        }
    }

    let total: f64 = pseudo.sum();
    let pseudo_mean = total / n as f64;
    let theta_hat = match config.normalization {
        Normalization::SampleSize => pseudo_mean,
        Normalization::InverseWeightSum => total / weight_sum,
    };
    let sigma2_hat = if n > 1 {
        pseudo.iter().map(|v| (v - pseudo_mean) * (v - pseudo_mean)).sum::<f64>()
            / (n as f64 - 1.0)
    } else {
        0.0
    };
    let half_width = CI_CRITICAL * (sigma2_hat / n as f64).sqrt();
    Ok(AipwEstimate {
        theta_hat,
        sigma2_hat,
        ci_low: theta_hat - half_width,
        ci_high: theta_hat + half_width,
        pseudo_values: pseudo,
        response_rate: data.response_rate(),
        small_propensity_count: small,
    })
}

/// AIPW with the imputation model evaluated on every row.
pub fn aipw_estimate(
    data: &IncompleteDataset,
    f0: &OutcomeFit,
    pi_hat: &Array1<f64>,
    config: &AipwConfig,
) -> Result<AipwEstimate> {
    let f0_hat = f0.predict_full(data.x())?;
    aipw_from_predictions(data, &f0_hat, pi_hat, config)
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum Method {
    Cc,
    Ps,
    Di,
    Naipw,
    Prop,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Cc => "CC",
            Method::Ps => "PS",
            Method::Di => "DI",
            Method::Naipw => "NAIPW",
            Method::Prop => "PROP",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_uppercase().as_str() {
            "CC" => Some(Method::Cc),
            "PS" => Some(Method::Ps),
            "DI" => Some(Method::Di),
            "NAIPW" => Some(Method::Naipw),
            "PROP" => Some(Method::Prop),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One baseline estimator's output; `estimate` is NaN when not converged.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub method: Method,
    pub estimate: f64,
    pub converged: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Sample mean of the complete cases.
pub fn cc_estimate(data: &IncompleteDataset) -> EstimatorReport {
    let m = data.observed_count();
    let sum: f64 = data
        .y
        .iter()
        .zip(&data.delta)
        .filter(|(_, &d)| d)
        .map(|(v, _)| *v)
        .sum();
    EstimatorReport {
        method: Method::Cc,
        estimate: sum / m as f64,
        converged: true,
        diagnostics: BTreeMap::from([("observed".into(), m as f64)]),
    }
}

/// Conventional propensity-score estimator n⁻¹ Σ δᵢyᵢ/π̂ᵢ from an already
/// fitted unpenalized MLE. A non-converged model propagates as a failed
/// report, never an error.
pub fn ps_from_model(data: &IncompleteDataset, model: &PropensityModel) -> Result<EstimatorReport> {
    if !model.converged {
        return Ok(EstimatorReport {
            method: Method::Ps,
            estimate: f64::NAN,
            converged: false,
            diagnostics: BTreeMap::from([("mle_iterations".into(), model.iterations as f64)]),
        });
    }
    let pi = predict_propensity(model, data.x())?;
    let n = data.n() as f64;
    let mut sum = 0.0;
    let mut min_pi = f64::INFINITY;
    for i in 0..data.n() {
        if data.delta[i] {
            sum += data.y[i] / pi[i];
            min_pi = min_pi.min(pi[i]);
        }
    }
    Ok(EstimatorReport {
        method: Method::Ps,
        estimate: sum / n,
        converged: true,
        diagnostics: BTreeMap::from([("min_observed_propensity".into(), min_pi)]),
    })
}

/// PS with the logistic MLE fitted here on all covariates.
pub fn ps_estimate(data: &IncompleteDataset, max_iter: usize, tol: f64) -> Result<EstimatorReport> {
    let model = fit_logistic_mle(data.x(), data.delta(), max_iter, tol)?;
    ps_from_model(data, &model)
}

/// Deterministic imputation: n⁻¹ Σ [δᵢyᵢ + (1−δᵢ)f̂(xᵢ)] with a kernel ridge
/// fit on the complete cases over all covariates.
pub fn di_estimate(data: &IncompleteDataset, f_hat: &KrrModel) -> Result<EstimatorReport> {
    let preds = f_hat.predict_full(data.x())?;
    let n = data.n() as f64;
    let mut sum = 0.0;
    for i in 0..data.n() {
        sum += if data.delta[i] { data.y[i] } else { preds[i] };
    }
    Ok(EstimatorReport {
        method: Method::Di,
        estimate: sum / n,
        converged: true,
        diagnostics: BTreeMap::new(),
    })
}

/// Naive AIPW: Eq.-(3) composition of the non-sparse kernel fit and the
/// unpenalized MLE; inherits the MLE's convergence failures.
pub fn naipw_estimate(
    data: &IncompleteDataset,
    f_hat: &KrrModel,
    pi_mle: &PropensityModel,
) -> Result<EstimatorReport> {
    if !pi_mle.converged {
        return Ok(EstimatorReport {
            method: Method::Naipw,
            estimate: f64::NAN,
            converged: false,
            diagnostics: BTreeMap::new(),
        });
    }
    let f0_hat = f_hat.predict_full(data.x())?;
    let pi = predict_propensity(pi_mle, data.x())?;
    let est = aipw_from_predictions(data, &f0_hat, &pi, &AipwConfig::default())?;
    Ok(EstimatorReport {
        method: Method::Naipw,
        estimate: est.theta_hat,
        converged: true,
        diagnostics: BTreeMap::from([(
            "small_propensity_count".into(),
            est.small_propensity_count as f64,
        )]),
    })
}

/// How λ₂ is chosen for the group-lasso propensity fit.
#[derive(Debug, Clone, Copy)]
pub enum Lambda2Choice {
    /// BIC over a 30-point grid below λ_max.
    Auto,
    Fixed(f64),
}

/// Options of the full sparse-AIPW pipeline.
#[derive(Debug, Clone)]
pub struct PropOptions {
    pub ridge: f64,
    pub search: ThresholdSearchConfig,
    pub lambda2: Lambda2Choice,
    pub bcgd: BcgdConfig,
    pub aipw: AipwConfig,
}

impl PropOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            ridge: crate::kernel::DEFAULT_RIDGE,
            search: ThresholdSearchConfig::new(seed),
            lambda2: Lambda2Choice::Auto,
            bcgd: BcgdConfig::default(),
            aipw: AipwConfig::default(),
        }
    }
}

/// Everything the sparse-AIPW pipeline produced.
#[derive(Debug, Clone)]
pub struct PropFit {
    pub estimate: AipwEstimate,
    pub sparse: SparseKrrFit,
    /// None when every response was observed and no propensity model is
    /// identifiable (unit weights are used).
    pub propensity: Option<PropensityModel>,
}

/// The proposed estimator: sparse kernel ridge imputation on the complete
/// cases, group-lasso propensity on all rows, AIPW combination.
pub fn prop_estimate(data: &IncompleteDataset, opts: &PropOptions) -> Result<PropFit> {
    let (x_obs, y_obs) = data.observed();
    let config = KernelConfig::with_median_bandwidth(&x_obs, opts.ridge)?;
    let sparse = fit_sparse_krr(&x_obs, &y_obs.view(), &config, &opts.search)?;
    let f0_hat = sparse.fit.predict_full(data.x())?;

    if data.all_observed() {
        let pi = Array1::from_elem(data.n(), 1.0);
        let estimate = aipw_from_predictions(data, &f0_hat, &pi, &opts.aipw)?;
        return Ok(PropFit { estimate, sparse, propensity: None });
    }

    let structure = GroupStructure::singletons(data.x().cols());
    let model = match opts.lambda2 {
        Lambda2Choice::Auto => {
            fit_group_lasso_auto(data.x(), data.delta(), &structure, &opts.bcgd)?
        }
        Lambda2Choice::Fixed(lambda2) => {
            fit_group_lasso(data.x(), data.delta(), lambda2, &structure, &opts.bcgd)?
        }
    };
    let pi = predict_propensity(&model, data.x())?;
    let estimate = aipw_from_predictions(data, &f0_hat, &pi, &opts.aipw)?;
    Ok(PropFit { estimate, sparse, propensity: Some(model) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::fit_krr;
    use crate::simgen;
    use ndarray::array;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset_m1r1(n: usize, p: usize, seed: u64) -> IncompleteDataset {
        let x = simgen::gen_covariates(n, p, seed).unwrap();
        let y = simgen::gen_outcome_m1(&x, seed).unwrap();
        let delta = simgen::gen_response_r1(&x, seed).unwrap();
        IncompleteDataset::new(x, y, delta).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        let x = simgen::gen_covariates(10, 4, 1).unwrap();
        let y = Array1::linspace(0.0, 9.0, 10);
        let mut delta = vec![true; 10];
        delta[3] = false;
        let data = IncompleteDataset::new(x, y, delta).unwrap();
        assert!(data.y()[3].is_nan());
        assert_eq!(data.observed_count(), 9);
        assert!((data.response_rate() - 0.9).abs() < 1e-15);
        let (xo, yo) = data.observed();
        assert_eq!(xo.rows(), 9);
        assert_eq!(yo.len(), 9);

        let x = simgen::gen_covariates(3, 2, 2).unwrap();
        let y = Array1::zeros(3);
        assert!(IncompleteDataset::new(x, y, vec![false, false, false]).is_err());
    }

    #[test]
    fn aipw_all_observed_identity_is_exact() {
        let x = simgen::gen_covariates(25, 3, 3).unwrap();
        let y = Array1::from_shape_fn(25, |i| (i as f64).sin() * 3.0 + 1.0);
        let data = IncompleteDataset::fully_observed(x, y.clone()).unwrap();
        let f0 = Array1::from_elem(25, 0.37);
        let pi = Array1::from_elem(25, 1.0);
        let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();

        let mean = y.sum() / 25.0;
        assert_eq!(est.theta_hat, mean);
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 24.0;
        assert_eq!(est.sigma2_hat, var);
        for i in 0..25 {
            assert_eq!(est.pseudo_values[i], y[i]);
        }
    }

    #[test]
    fn aipw_zero_imputation_is_pure_ipw() {
        let data = dataset_m1r1(50, 4, 5);
        let f0 = Array1::zeros(50);
        let pi = Array1::from_elem(50, 0.5);
        let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
        let mut ipw = 0.0;
        for i in 0..50 {
            if data.delta()[i] {
                ipw += data.y()[i] / 0.5;
            }
        }
        assert!((est.theta_hat - ipw / 50.0).abs() < 1e-14);
    }

    #[test]
    fn aipw_hand_case() {
        let x = CovariateMatrix::new(array![[0.0], [1.0], [2.0]]).unwrap();
        let y = array![1.0, 2.0, 0.0];
        let data = IncompleteDataset::new(x, y, vec![true, true, false]).unwrap();
        let f0 = Array1::from_elem(3, 1.5);
        let pi = Array1::from_elem(3, 0.5);
        let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
        assert!((est.pseudo_values[0] - 0.5).abs() < 1e-15);
        assert!((est.pseudo_values[1] - 2.5).abs() < 1e-15);
        assert!((est.pseudo_values[2] - 1.5).abs() < 1e-15);
        assert!((est.theta_hat - 1.5).abs() < 1e-15);
        assert!((est.sigma2_hat - 1.0).abs() < 1e-14);
        assert!((est.ci_low - (1.5 - 1.96 / 3.0f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn aipw_pseudo_mean_matches_theta() {
        let data = dataset_m1r1(120, 5, 7);
        let f0 = Array1::from_elem(120, 0.2);
        let pi = simgen::prob_r1(data.x()).unwrap();
        let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
        let pm = est.pseudo_values.sum() / 120.0;
        assert!((pm - est.theta_hat).abs() < 1e-12);
    }

    #[test]
    fn aipw_rejects_bad_propensities() {
        let data = dataset_m1r1(10, 4, 9);
        let f0 = Array1::zeros(10);
        for bad in [0.0, -0.3, 1.2] {
            let mut pi = Array1::from_elem(10, 0.5);
            pi[4] = bad;
            assert!(matches!(
                aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()),
                Err(Error::Domain(_))
            ));
        }
        // π exactly 1 is valid (no weighting).
        let pi = Array1::from_elem(10, 1.0);
        assert!(aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).is_ok());
    }

    #[test]
    fn aipw_clamp_and_small_count() {
        let data = dataset_m1r1(20, 4, 11);
        let f0 = Array1::zeros(20);
        let mut pi = Array1::from_elem(20, 0.5);
        pi[0] = 0.005;
        let plain = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
        assert_eq!(plain.small_propensity_count, 1);

        let clamped = aipw_from_predictions(
            &data,
            &f0,
            &pi,
            &AipwConfig { clamp: Some(PROPENSITY_FLOOR), ..Default::default() },
        )
        .unwrap();
        assert_eq!(clamped.small_propensity_count, 1);
        if data.delta()[0] {
            assert!(clamped.theta_hat != plain.theta_hat);
        }
    }

    #[test]
    fn aipw_weight_sum_normalization() {
        let data = dataset_m1r1(60, 4, 13);
        let f0 = Array1::zeros(60);
        let pi = Array1::from_elem(60, 0.5);
        let alt = aipw_from_predictions(
            &data,
            &f0,
            &pi,
            &AipwConfig { normalization: Normalization::InverseWeightSum, ..Default::default() },
        )
        .unwrap();
        let m = data.observed_count() as f64;
        let mut num = 0.0;
        for i in 0..60 {
            if data.delta()[i] {
                num += data.y()[i] / 0.5;
            }
        }
        assert!((alt.theta_hat - num / (m / 0.5)).abs() < 1e-12);
    }

    #[test]
    fn cc_examples() {
        let x = simgen::gen_covariates(4, 2, 15).unwrap();
        let y = array![1.0, 2.0, 3.0, 4.0];
        let all = IncompleteDataset::fully_observed(x.clone(), y.clone()).unwrap();
        assert!((cc_estimate(&all).estimate - 2.5).abs() < 1e-15);

        let one = IncompleteDataset::new(x, y, vec![false, false, true, false]).unwrap();
        assert_eq!(cc_estimate(&one).estimate, 3.0);
    }

    #[test]
    fn ps_intercept_only_equals_cc_scaled() {
        // With a constant fitted propensity m/n, PS = CC·(m/n)/(m/n) ... the
        // identity θ̂_ps = CC holds exactly.
        let x0 = CovariateMatrix::from_valid(ndarray::Array2::zeros((40, 0)));
        let mut y = Array1::zeros(40);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for v in y.iter_mut() {
            *v = rng.random::<f64>() * 4.0;
        }
        let mut delta = vec![false; 40];
        for d in delta.iter_mut().take(10) {
            *d = true;
        }
        let data = IncompleteDataset::new(x0, y, delta).unwrap();
        let ps = ps_estimate(&data, 25, 1e-10).unwrap();
        assert!(ps.converged);
        let cc = cc_estimate(&data);
        assert!((ps.estimate - cc.estimate).abs() < 1e-9);
    }

    #[test]
    fn ps_failure_propagates_as_report() {
        // p >= n: immediate non-convergence.
        let data = dataset_m1r1(20, 30, 17);
        let ps = ps_estimate(&data, 25, 1e-8).unwrap();
        assert!(!ps.converged);
        assert!(ps.estimate.is_nan());
    }

    #[test]
    fn di_examples() {
        let data = dataset_m1r1(80, 4, 19);
        let (xo, yo) = data.observed();
        let cfg = KernelConfig::with_median_bandwidth(&xo, crate::kernel::DEFAULT_RIDGE).unwrap();
        let f_hat = fit_krr(&xo, &yo.view(), &cfg).unwrap();
        let di = di_estimate(&data, &f_hat).unwrap();
        assert!(di.estimate.is_finite());

        // All observed: the imputation never enters.
        let x = simgen::gen_covariates(30, 4, 20).unwrap();
        let y = simgen::gen_outcome_m1(&x, 20).unwrap();
        let full = IncompleteDataset::fully_observed(x, y.clone()).unwrap();
        let di_full = di_estimate(&full, &f_hat).unwrap();
        assert!((di_full.estimate - y.sum() / 30.0).abs() < 1e-12);
    }

    #[test]
    fn naipw_composition_is_finite() {
        let data = dataset_m1r1(150, 4, 21);
        let (xo, yo) = data.observed();
        let cfg = KernelConfig::with_median_bandwidth(&xo, crate::kernel::DEFAULT_RIDGE).unwrap();
        let f_hat = fit_krr(&xo, &yo.view(), &cfg).unwrap();
        let mle = fit_logistic_mle(data.x(), data.delta(), 35, 1e-8).unwrap();
        assert!(mle.converged);
        let rep = naipw_estimate(&data, &f_hat, &mle).unwrap();
        assert!(rep.converged);
        assert!(rep.estimate.is_finite());
    }

    #[test]
    fn naipw_inherits_mle_failure() {
        let data = dataset_m1r1(20, 30, 22);
        let (xo, yo) = data.observed();
        let cfg = KernelConfig::with_median_bandwidth(&xo, crate::kernel::DEFAULT_RIDGE).unwrap();
        let f_hat = fit_krr(&xo, &yo.view(), &cfg).unwrap();
        let mle = fit_logistic_mle(data.x(), data.delta(), 35, 1e-8).unwrap();
        assert!(!mle.converged);
        let rep = naipw_estimate(&data, &f_hat, &mle).unwrap();
        assert!(!rep.converged);
    }

    #[test]
    fn prop_degenerate_all_observed_is_sample_mean() {
        let x = simgen::gen_covariates(60, 5, 23).unwrap();
        let y = simgen::gen_outcome_m1(&x, 23).unwrap();
        let data = IncompleteDataset::fully_observed(x, y.clone()).unwrap();
        let fit = prop_estimate(&data, &PropOptions::new(41)).unwrap();
        assert!(fit.propensity.is_none());
        assert!((fit.estimate.theta_hat - y.sum() / 60.0).abs() < 1e-10);
    }

    #[test]
    fn prop_pipeline_runs_end_to_end() {
        let data = dataset_m1r1(200, 6, 25);
        let fit = prop_estimate(&data, &PropOptions::new(42)).unwrap();
        assert!(fit.estimate.theta_hat.is_finite());
        assert!(fit.estimate.sigma2_hat >= 0.0);
        assert!(fit.propensity.is_some());
        assert!(fit.estimate.ci_low <= fit.estimate.theta_hat);
        assert!(fit.estimate.ci_high >= fit.estimate.theta_hat);
    }

    /// Double-robustness, propensity leg: with the true π* and an arbitrary
    /// fixed imputation, the Monte Carlo mean of θ̂ is unbiased.
    #[test]
    fn unbiased_with_true_propensity() {
        let reps = 200;
        let mut estimates = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let x = simgen::gen_covariates(500, 4, 31_000 + r).unwrap();
            let y = simgen::gen_outcome_m1(&x, 31_000 + r).unwrap();
            let delta = simgen::gen_response_r1(&x, 31_000 + r).unwrap();
            let pi = simgen::prob_r1(&x).unwrap();
            let data = IncompleteDataset::new(x, y, delta).unwrap();
            let f0 = Array1::from_elem(500, 0.7);
            let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
            estimates.push(est.theta_hat);
        }
        let mean = estimates.iter().sum::<f64>() / reps as f64;
        let var = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (reps as f64 - 1.0);
        let mc_se = (var / reps as f64).sqrt();
        assert!(mean.abs() <= 3.0 * mc_se, "mean {mean}, MC se {mc_se}");
    }

    /// Double-robustness, imputation leg: with the true f* and an arbitrary
    /// fixed propensity in (κ, 1−κ), θ̂ is unbiased.
    #[test]
    fn unbiased_with_true_regression() {
        let reps = 200;
        let mut estimates = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let x = simgen::gen_covariates(500, 4, 130_000 + r).unwrap();
            let y = simgen::gen_outcome_m1(&x, 130_000 + r).unwrap();
            let delta = simgen::gen_response_r1(&x, 130_000 + r).unwrap();
            let f0 = simgen::mean_fn_m1(&x).unwrap();
            let data = IncompleteDataset::new(x, y, delta).unwrap();
            let pi = Array1::from_elem(500, 0.6);
            let est = aipw_from_predictions(&data, &f0, &pi, &AipwConfig::default()).unwrap();
            estimates.push(est.theta_hat);
        }
        let mean = estimates.iter().sum::<f64>() / reps as f64;
        let var = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (reps as f64 - 1.0);
        let mc_se = (var / reps as f64).sqrt();
        assert!(mean.abs() <= 3.0 * mc_se, "mean {mean}, MC se {mc_se}");
    }
}
