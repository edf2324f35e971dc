//! Monte Carlo benchmark runner: draws replicated incomplete datasets from
//! the simulation designs, runs the requested estimators, and aggregates the
//! bias / standard-error / relative-variance-bias / coverage metrics.
//!
//! Replicates run concurrently; every replicate derives its streams from
//! (base seed, design, size, replicate index), and aggregation reduces the
//! collected per-replicate vector in index order, so the output is bitwise
//! identical no matter how the work is scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimators::{
    cc_estimate, di_estimate, naipw_estimate, prop_estimate, ps_from_model, IncompleteDataset,
    Lambda2Choice, Method, PropOptions,
};
use crate::kernel::{fit_krr, KernelConfig, DEFAULT_RIDGE};
use crate::propensity::fit_logistic_mle;
use crate::simgen::{theta_star, OutcomeModel, ResponseModel, SimulationSpec};

/// A cell's whole row renders "-" when |bias| or |SE| exceeds this many raw
/// units.
pub const MASK_LIMIT: f64 = 10.0;

const MLE_MAX_ITER: usize = 35;
const MLE_TOL: f64 = 1e-8;

/// Simulation designs: outcome model × response model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    C1,
    C2,
    C3,
    C4,
}

impl Design {
    pub fn all() -> [Design; 4] {
        [Design::C1, Design::C2, Design::C3, Design::C4]
    }

    pub fn models(self) -> (OutcomeModel, ResponseModel) {
        match self {
            Design::C1 => (OutcomeModel::M1, ResponseModel::R1),
            Design::C2 => (OutcomeModel::M2, ResponseModel::R1),
            Design::C3 => (OutcomeModel::M1, ResponseModel::R2),
            Design::C4 => (OutcomeModel::M2, ResponseModel::R2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Design::C1 => "C1",
            Design::C2 => "C2",
            Design::C3 => "C3",
            Design::C4 => "C4",
        }
    }

    pub fn parse(s: &str) -> Option<Design> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Some(Design::C1),
            "C2" => Some(Design::C2),
            "C3" => Some(Design::C3),
            "C4" => Some(Design::C4),
            _ => None,
        }
    }

    fn index(self) -> u64 {
        match self {
            Design::C1 => 1,
            Design::C2 => 2,
            Design::C3 => 3,
            Design::C4 => 4,
        }
    }
}

/// Sample-size / dimension grid of the benchmark, plus a custom escape hatch
/// for small test cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Size {
    I,
    II,
    III,
    IV,
    Custom { n: usize, p: usize },
}

impl Size {
    pub fn standard() -> [Size; 4] {
        [Size::I, Size::II, Size::III, Size::IV]
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            Size::I => (800, 400),
            Size::II => (1000, 400),
            Size::III => (800, 2000),
            Size::IV => (1000, 2000),
            Size::Custom { n, p } => (n, p),
        }
    }

    pub fn label(self) -> String {
        match self {
            Size::I => "I".into(),
            Size::II => "II".into(),
            Size::III => "III".into(),
            Size::IV => "IV".into(),
            Size::Custom { n, p } => format!("n{n}p{p}"),
        }
    }

    pub fn parse(s: &str) -> Option<Size> {
        match s.to_ascii_uppercase().as_str() {
            "I" => Some(Size::I),
            "II" => Some(Size::II),
            "III" => Some(Size::III),
            "IV" => Some(Size::IV),
            _ => None,
        }
    }

    fn index(self) -> u64 {
        match self {
            Size::I => 1,
            Size::II => 2,
            Size::III => 3,
            Size::IV => 4,
            Size::Custom { n, p } => 1_000_000 + (n as u64) * 65_536 + p as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub design: Design,
    pub size: Size,
}

/// Where the "true" θ for bias/coverage comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaSource {
    /// Analytic for M1 (exactly 0), the million-draw oracle sample for M2.
    #[default]
    Auto,
    /// Analytic only; M2 designs are rejected.
    Analytic,
    /// The oracle sample for every design.
    OracleSample,
}

/// Scale of the confidence-interval half width 1.96·s: the √n-rate plug-in
/// s = √(σ̂²/n) (default), or the raw s = σ̂ matching the paper's CR formula
/// as printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiScale {
    #[default]
    RootN,
    Raw,
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub cells: Vec<CellSpec>,
    pub replicates: usize,
    pub estimators: Vec<Method>,
    pub base_seed: u64,
    pub theta_source: ThetaSource,
    pub ci_scale: CiScale,
    pub clamp_propensity: bool,
    pub lambda2: Lambda2Choice,
    pub ridge: f64,
}

impl ExperimentPlan {
    pub fn new(
        cells: Vec<CellSpec>,
        replicates: usize,
        estimators: Vec<Method>,
        base_seed: u64,
    ) -> Result<Self> {
        if replicates < 2 {
            return Err(Error::DegenerateInput("at least 2 replicates required".into()));
        }
        if estimators.is_empty() {
            return Err(Error::DegenerateInput("estimator set must be non-empty".into()));
        }
        if cells.is_empty() {
            return Err(Error::DegenerateInput("at least one design/size cell required".into()));
        }
        Ok(Self {
            cells,
            replicates,
            estimators,
            base_seed,
            theta_source: ThetaSource::default(),
            ci_scale: CiScale::default(),
            clamp_propensity: false,
            lambda2: Lambda2Choice::Auto,
            ridge: DEFAULT_RIDGE,
        })
    }

    fn theta_for(&self, design: Design) -> Result<f64> {
        let (outcome, _) = design.models();
        match (self.theta_source, outcome) {
            (ThetaSource::Analytic, OutcomeModel::M2) => Err(Error::Domain(
                "no analytic mean is available for M2; use the oracle sample".into(),
            )),
            (ThetaSource::Analytic, OutcomeModel::M1) => Ok(0.0),
            (ThetaSource::OracleSample, _) | (ThetaSource::Auto, _) => Ok(theta_star(outcome)),
        }
    }
}

/// One estimator's result on one replicate.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateOutcome {
    pub estimate: f64,
    pub converged: bool,
    /// AIPW plug-in variance, present for PROP only.
    pub sigma2: Option<f64>,
}

impl ReplicateOutcome {
    fn failed() -> Self {
        Self { estimate: f64::NAN, converged: false, sigma2: None }
    }
}

/// Aggregates of one (design, size, estimator) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMetrics {
    pub design: Design,
    pub size: Size,
    pub estimator: Method,
    pub theta: f64,
    pub bias: f64,
    pub se: f64,
    pub rb: Option<f64>,
    pub cr: Option<f64>,
    pub failure_count: usize,
    pub converged_count: usize,
    /// True when the cell renders "-": no converged replicates, or |bias| or
    /// |SE| beyond [`MASK_LIMIT`].
    pub masked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsTable {
    pub replicates: usize,
    pub cells: Vec<CellMetrics>,
}

/// SplitMix64 chaining, the per-replicate seed derivation.
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &part in parts {
        state = state.wrapping_add(0x9E3779B97F4A7C15).wrapping_add(part);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        state = z ^ (z >> 31);
    }
    state
}

fn run_replicate(
    plan: &ExperimentPlan,
    cell: &CellSpec,
    rep: usize,
) -> BTreeMap<Method, ReplicateOutcome> {
    let mut out = BTreeMap::new();
    let (outcome_model, response_model) = cell.design.models();
    let (n, p) = cell.size.dims();
    let seed = mix_seed(plan.base_seed, &[cell.design.index(), cell.size.index(), rep as u64]);

    let data = (|| -> Result<IncompleteDataset> {
        let spec = SimulationSpec::new(outcome_model, response_model, n, p, seed)?;
        let x = spec.covariates()?;
        let y = spec.outcome_values(&x)?;
        let delta = spec.response_indicators(&x)?;
        IncompleteDataset::new(x, y, delta)
    })();
    let data = match data {
        Ok(d) => d,
        Err(_) => {
            for &m in &plan.estimators {
                out.insert(m, ReplicateOutcome::failed());
            }
            return out;
        }
    };

    let wants = |m: Method| plan.estimators.contains(&m);

    if wants(Method::Cc) {
        let rep = cc_estimate(&data);
        out.insert(
            Method::Cc,
            ReplicateOutcome { estimate: rep.estimate, converged: rep.converged, sigma2: None },
        );
    }

    // The unpenalized MLE and the non-sparse kernel fit are shared between
    // PS, DI and NAIPW.
    let mle = if wants(Method::Ps) || wants(Method::Naipw) {
        Some(fit_logistic_mle(data.x(), data.delta(), MLE_MAX_ITER, MLE_TOL))
    } else {
        None
    };
    let krr_full = if wants(Method::Di) || wants(Method::Naipw) {
        let (x_obs, y_obs) = data.observed();
        Some(
            KernelConfig::with_median_bandwidth(&x_obs, plan.ridge)
                .and_then(|cfg| fit_krr(&x_obs, &y_obs.view(), &cfg)),
        )
    } else {
        None
    };

    if wants(Method::Ps) {
        let outcome = match &mle {
            Some(Ok(model)) => match ps_from_model(&data, model) {
                Ok(rep) => {
                    ReplicateOutcome { estimate: rep.estimate, converged: rep.converged, sigma2: None }
                }
                Err(_) => ReplicateOutcome::failed(),
            },
            _ => ReplicateOutcome::failed(),
        };
        out.insert(Method::Ps, outcome);
    }

    if wants(Method::Di) {
        let outcome = match &krr_full {
            Some(Ok(model)) => match di_estimate(&data, model) {
                Ok(rep) => {
                    ReplicateOutcome { estimate: rep.estimate, converged: rep.converged, sigma2: None }
                }
                Err(_) => ReplicateOutcome::failed(),
            },
            _ => ReplicateOutcome::failed(),
        };
        out.insert(Method::Di, outcome);
    }

    if wants(Method::Naipw) {
        let outcome = match (&krr_full, &mle) {
            (Some(Ok(f_hat)), Some(Ok(pi_mle))) => {
                match naipw_estimate(&data, f_hat, pi_mle) {
                    Ok(rep) => ReplicateOutcome {
                        estimate: rep.estimate,
                        converged: rep.converged,
                        sigma2: None,
                    },
                    Err(_) => ReplicateOutcome::failed(),
                }
            }
            _ => ReplicateOutcome::failed(),
        };
        out.insert(Method::Naipw, outcome);
    }

    if wants(Method::Prop) {
        let mut opts = PropOptions::new(mix_seed(seed, &[0xA1]));
        opts.ridge = plan.ridge;
        opts.lambda2 = plan.lambda2;
        if plan.clamp_propensity {
            opts.aipw.clamp = Some(crate::estimators::PROPENSITY_FLOOR);
        }
        let outcome = match prop_estimate(&data, &opts) {
            Ok(fit) if fit.estimate.theta_hat.is_finite() => ReplicateOutcome {
                estimate: fit.estimate.theta_hat,
                converged: true,
                sigma2: Some(fit.estimate.sigma2_hat),
            },
            _ => ReplicateOutcome::failed(),
        };
        out.insert(Method::Prop, outcome);
    }

    out
}

/// All replicates of one cell, keyed by estimator.
pub fn run_cell(
    plan: &ExperimentPlan,
    cell: &CellSpec,
) -> Result<BTreeMap<Method, Vec<ReplicateOutcome>>> {
    let per_rep: Vec<BTreeMap<Method, ReplicateOutcome>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| run_replicate(plan, cell, r))
        .collect();
    let mut by_method: BTreeMap<Method, Vec<ReplicateOutcome>> = BTreeMap::new();
    for &m in &plan.estimators {
        by_method.insert(m, Vec::with_capacity(plan.replicates));
    }
    for rep in per_rep {
        for (m, o) in rep {
            by_method.get_mut(&m).expect("estimator present in plan").push(o);
        }
    }
    Ok(by_method)
}

/// Bias / SE / RB / CR aggregation of one estimator's replicates. Failed
/// replicates are excluded from every average and only counted.
pub fn aggregate_metrics(
    outcomes: &[ReplicateOutcome],
    design: Design,
    size: Size,
    estimator: Method,
    theta: f64,
    n: usize,
    ci_scale: CiScale,
) -> CellMetrics {
    let converged: Vec<&ReplicateOutcome> =
        outcomes.iter().filter(|o| o.converged && o.estimate.is_finite()).collect();
    let k = converged.len();
    let failure_count = outcomes.len() - k;

    if k == 0 {
        return CellMetrics {
            design,
            size,
            estimator,
            theta,
            bias: f64::NAN,
            se: f64::NAN,
            rb: None,
            cr: None,
            failure_count,
            converged_count: 0,
            masked: true,
        };
    }

    let mean = converged.iter().map(|o| o.estimate).sum::<f64>() / k as f64;
    let bias = mean - theta;
    let se = if k > 1 {
        (converged.iter().map(|o| (o.estimate - mean) * (o.estimate - mean)).sum::<f64>()
            / (k as f64 - 1.0))
            .sqrt()
    } else {
        0.0
    };

    let (rb, cr) = if estimator == Method::Prop {
        let sigma2s: Vec<f64> = converged.iter().filter_map(|o| o.sigma2).collect();
        if sigma2s.len() == k {
            let scale = |s2: f64| match ci_scale {
                CiScale::RootN => (s2 / n as f64).sqrt(),
                CiScale::Raw => s2.sqrt(),
            };
            let mean_var = match ci_scale {
                CiScale::RootN => sigma2s.iter().map(|&s2| s2 / n as f64).sum::<f64>() / k as f64,
                CiScale::Raw => sigma2s.iter().sum::<f64>() / k as f64,
            };
            let rb = if se > 0.0 { Some(mean_var / (se * se) - 1.0) } else { None };
            let covered = converged
                .iter()
                .zip(&sigma2s)
                .filter(|(o, &s2)| (o.estimate - theta).abs() <= 1.96 * scale(s2))
                .count();
            (rb, Some(covered as f64 / k as f64))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };

    let masked = !bias.is_finite() || !se.is_finite() || bias.abs() > MASK_LIMIT || se > MASK_LIMIT;
    CellMetrics {
        design,
        size,
        estimator,
        theta,
        bias,
        se,
        rb,
        cr,
        failure_count,
        converged_count: k,
        masked,
    }
}

/// Run every cell of the plan and aggregate the metrics table.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<MetricsTable> {
    let mut cells = Vec::new();
    for cell in &plan.cells {
        let theta = plan.theta_for(cell.design)?;
        let (n, _) = cell.size.dims();
        let by_method = run_cell(plan, cell)?;
        for &m in &plan.estimators {
            let outcomes = &by_method[&m];
            cells.push(aggregate_metrics(
                outcomes,
                cell.design,
                cell.size,
                m,
                theta,
                n,
                plan.ci_scale,
            ));
        }
    }
    Ok(MetricsTable { replicates: plan.replicates, cells })
}

/// Skewness and excess kurtosis of the standardized estimates
/// (θ̂ − θ)/√(σ̂²/n).
pub fn normality_diagnostic(
    estimates: &[f64],
    sigma2s: &[f64],
    theta: f64,
    n: usize,
) -> Result<(f64, f64)> {
    if estimates.len() < 50 {
        return Err(Error::DegenerateInput(format!(
            "normality diagnostic needs at least 50 replicates, got {}",
            estimates.len()
        )));
    }
    if estimates.len() != sigma2s.len() {
        return Err(Error::DimensionMismatch("estimates vs variance estimates".into()));
    }
    let m = estimates.len() as f64;
    let mut t = Vec::with_capacity(estimates.len());
    for (&est, &s2) in estimates.iter().zip(sigma2s) {
        if !(s2 > 0.0) {
            return Err(Error::Domain(format!("variance estimate {s2} is not positive")));
        }
        t.push((est - theta) / (s2 / n as f64).sqrt());
    }
    let mean = t.iter().sum::<f64>() / m;
    let m2 = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    if m2 == 0.0 {
        return Err(Error::Numerical(
            "standardized estimates are constant; moments undefined".into(),
        ));
    }
    let m3 = t.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / m;
    let m4 = t.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    }
}

impl CellMetrics {
    fn render_fields(&self) -> (String, String, String, String) {
        if self.masked {
            ("-".into(), "-".into(), "-".into(), "-".into())
        } else {
            (
                format!("{:.4}", self.bias),
                format!("{:.4}", self.se),
                fmt_opt(self.rb, 4),
                fmt_opt(self.cr, 3),
            )
        }
    }
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("design,size,estimator,bias,se,rb,cr,converged,failures\n");
        for c in &self.cells {
            let (bias, se, rb, cr) = c.render_fields();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.design.label(),
                c.size.label(),
                c.estimator.label(),
                bias,
                se,
                rb,
                cr,
                c.converged_count,
                c.failure_count
            ));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("Monte Carlo metrics over {} replicates\n\n", self.replicates);
        s.push_str("| design | size | estimator | bias | se | rb | cr | converged | failures |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for c in &self.cells {
            let (bias, se, rb, cr) = c.render_fields();
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                c.design.label(),
                c.size.label(),
                c.estimator.label(),
                bias,
                se,
                rb,
                cr,
                c.converged_count,
                c.failure_count
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics tables serialize")
    }
}
