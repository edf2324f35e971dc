//! Seeded data generators for the benchmark designs and the application-style
//! missingness mask.
//!
//! Every generator draws from a ChaCha stream keyed by (seed, purpose), so
//! distinct quantities never share a stream and parallel replicates are
//! order-independent. The paper-style covariate indices are 1-based in the
//! formulas below; internally everything is 0-based (x₁ ↔ column 0), and that
//! mapping is applied once here.

use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::kernel::CovariateMatrix;

const STREAM_COVARIATES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_RESPONSE: u64 = 3;
const STREAM_MASK: u64 = 4;
const STREAM_STANDIN_X: u64 = 5;
const STREAM_STANDIN_NOISE: u64 = 6;

/// Seed of the dedicated sample behind the M2 "true value" oracle.
pub const M2_ORACLE_SEED: u64 = 727;
const M2_ORACLE_DRAWS: usize = 1_000_000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Outcome regression designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeModel {
    /// Linear: y = 5x₁ + 6x₂ + 4x₃ + 4x₄ + ε.
    M1,
    /// Nonlinear with an interaction and trigonometric terms.
    M2,
}

impl OutcomeModel {
    pub fn min_cols(self) -> usize {
        match self {
            OutcomeModel::M1 => 4,
            OutcomeModel::M2 => 5,
        }
    }

    /// Indices (0-based) of the truly informative covariates.
    pub fn signal_set(self) -> &'static [usize] {
        match self {
            OutcomeModel::M1 => &[0, 1, 2, 3],
            OutcomeModel::M2 => &[0, 1, 2, 3, 4],
        }
    }
}

/// Response (missingness) mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponseModel {
    /// logit π = −0.1 + 2x₁ + 2x₃.
    R1,
    /// π = sin(6x₂ + 8x₄)/3 + 0.5, not of logistic form.
    R2,
}

impl ResponseModel {
    pub fn min_cols(self) -> usize {
        match self {
            ResponseModel::R1 => 3,
            ResponseModel::R2 => 4,
        }
    }
}

/// One simulated-dataset recipe.
#[derive(Debug, Clone, Copy)]
pub struct SimulationSpec {
    pub outcome: OutcomeModel,
    pub response: ResponseModel,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(
        outcome: OutcomeModel,
        response: ResponseModel,
        n: usize,
        p: usize,
        seed: u64,
    ) -> Result<Self> {
        let need = outcome.min_cols().max(response.min_cols());
        if p < need {
            return Err(Error::DegenerateInput(format!(
                "{outcome:?}/{response:?} needs p >= {need}, got {p}"
            )));
        }
        if n == 0 {
            return Err(Error::DegenerateInput("n must be at least 1".into()));
        }
        Ok(Self { outcome, response, n, p, seed })
    }

    pub fn covariates(&self) -> Result<CovariateMatrix> {
        gen_covariates(self.n, self.p, self.seed)
    }

    pub fn outcome_values(&self, x: &CovariateMatrix) -> Result<Array1<f64>> {
        match self.outcome {
            OutcomeModel::M1 => gen_outcome_m1(x, self.seed),
            OutcomeModel::M2 => gen_outcome_m2(x, self.seed),
        }
    }

    pub fn response_indicators(&self, x: &CovariateMatrix) -> Result<Vec<bool>> {
        match self.response {
            ResponseModel::R1 => gen_response_r1(x, self.seed),
            ResponseModel::R2 => gen_response_r2(x, self.seed),
        }
    }
}

/// i.i.d. U(−0.5, 0.5) covariates from the (seed, covariate) stream.
pub fn gen_covariates(n: usize, p: usize, seed: u64) -> Result<CovariateMatrix> {
    if n == 0 || p == 0 {
        return Err(Error::DegenerateInput(format!("cannot generate a {n}x{p} matrix")));
    }
    let mut rng = stream_rng(seed, STREAM_COVARIATES);
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        data.push(rng.random::<f64>() - 0.5);
    }
    Ok(CovariateMatrix::from_valid(
        Array2::from_shape_vec((n, p), data).expect("shape matches data length"),
    ))
}

/// Regression function of M1 (no noise): 5x₁ + 6x₂ + 4x₃ + 4x₄.
pub fn mean_fn_m1(x: &CovariateMatrix) -> Result<Array1<f64>> {
    if x.cols() < 4 {
        return Err(Error::DegenerateInput(format!("M1 needs p >= 4, got {}", x.cols())));
    }
    let v = x.view();
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        5.0 * v[[i, 0]] + 6.0 * v[[i, 1]] + 4.0 * v[[i, 2]] + 4.0 * v[[i, 3]]
    }))
}

pub fn gen_outcome_m1(x: &CovariateMatrix, seed: u64) -> Result<Array1<f64>> {
    let mut y = mean_fn_m1(x)?;
    add_standard_noise(&mut y, seed);
    Ok(y)
}

/// h(t) = 0.1 sin(πt) + 0.2 cos(πt) + 0.3 sin²(πt) + 0.4 cos³(πt) + 0.5 sin³(πt).
pub fn h_m2(t: f64) -> f64 {
    let s = (t * std::f64::consts::PI).sin();
    let c = (t * std::f64::consts::PI).cos();
    0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c * c * c + 0.5 * s * s * s
}

/// Regression function of M2 (no noise):
/// 6x₁ + 4(2x₂+1)(2x₃−1) + 6h(x₄) + 5sin(πx₅)/{2 − sin(πx₅)}.
pub fn mean_fn_m2(x: &CovariateMatrix) -> Result<Array1<f64>> {
    if x.cols() < 5 {
        return Err(Error::DegenerateInput(format!("M2 needs p >= 5, got {}", x.cols())));
    }
    let v = x.view();
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        let s5 = (v[[i, 4]] * std::f64::consts::PI).sin();
        6.0 * v[[i, 0]]
            + 4.0 * (2.0 * v[[i, 1]] + 1.0) * (2.0 * v[[i, 2]] - 1.0)
            + 6.0 * h_m2(v[[i, 3]])
            + 5.0 * s5 / (2.0 - s5)
    }))
}

pub fn gen_outcome_m2(x: &CovariateMatrix, seed: u64) -> Result<Array1<f64>> {
    let mut y = mean_fn_m2(x)?;
    add_standard_noise(&mut y, seed);
    Ok(y)
}

fn add_standard_noise(y: &mut Array1<f64>, seed: u64) {
    let mut rng = stream_rng(seed, STREAM_NOISE);
    for v in y.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += e;
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

/// True response probability of R1 per row.
pub fn prob_r1(x: &CovariateMatrix) -> Result<Array1<f64>> {
    if x.cols() < 3 {
        return Err(Error::DegenerateInput(format!("R1 needs p >= 3, got {}", x.cols())));
    }
    let v = x.view();
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        logistic(-0.1 + 2.0 * v[[i, 0]] + 2.0 * v[[i, 2]])
    }))
}

/// True response probability of R2 per row; always inside [1/6, 5/6].
pub fn prob_r2(x: &CovariateMatrix) -> Result<Array1<f64>> {
    if x.cols() < 4 {
        return Err(Error::DegenerateInput(format!("R2 needs p >= 4, got {}", x.cols())));
    }
    let v = x.view();
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        (6.0 * v[[i, 1]] + 8.0 * v[[i, 3]]).sin() / 3.0 + 0.5
    }))
}

fn bernoulli_draw(probs: &Array1<f64>, seed: u64, stream: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, stream);
    probs.iter().map(|&p| rng.random::<f64>() < p).collect()
}

pub fn gen_response_r1(x: &CovariateMatrix, seed: u64) -> Result<Vec<bool>> {
    Ok(bernoulli_draw(&prob_r1(x)?, seed, STREAM_RESPONSE))
}

pub fn gen_response_r2(x: &CovariateMatrix, seed: u64) -> Result<Vec<bool>> {
    Ok(bernoulli_draw(&prob_r2(x)?, seed, STREAM_RESPONSE))
}

/// Application-style MAR mask: logit π = 1 − 0.6x₅ − x₆ + 0.5x₁₀
/// (1-based covariates, i.e. columns 4, 5 and 9).
pub fn prob_mask_app(x: &CovariateMatrix) -> Result<Array1<f64>> {
    if x.cols() < 10 {
        return Err(Error::DegenerateInput(format!(
            "application mask needs p >= 10, got {}",
            x.cols()
        )));
    }
    let v = x.view();
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        logistic(1.0 - 0.6 * v[[i, 4]] - v[[i, 5]] + 0.5 * v[[i, 9]])
    }))
}

pub fn gen_mask_app(x: &CovariateMatrix, seed: u64) -> Result<Vec<bool>> {
    Ok(bernoulli_draw(&prob_mask_app(x)?, seed, STREAM_MASK))
}

/// Population mean of the outcome under a design: exactly 0 for M1, and the
/// fixed-seed million-draw oracle value for M2.
pub fn theta_star(outcome: OutcomeModel) -> f64 {
    match outcome {
        OutcomeModel::M1 => 0.0,
        OutcomeModel::M2 => theta_star_m2(),
    }
}

/// Mean of 1,000,000 M2 outcomes drawn with [`M2_ORACLE_SEED`]; computed on
/// first use and cached.
pub fn theta_star_m2() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let x = gen_covariates(M2_ORACLE_DRAWS, 5, M2_ORACLE_SEED).expect("oracle covariates");
        let y = gen_outcome_m2(&x, M2_ORACLE_SEED).expect("oracle outcomes");
        y.mean().expect("non-empty sample")
    })
}

/// Synthetic stand-in with the shape of the supermarket dataset: right-skewed
/// standardized covariates (studentized lognormal, shape 0.7) and an outcome
/// driven by the mask covariates x₅, x₆, x₁₀ plus noise, studentized so the
/// full-sample mean is exactly 0 and serves as the benchmark.
pub fn gen_standin(n: usize, p: usize, seed: u64) -> Result<(CovariateMatrix, Array1<f64>)> {
    if p < 10 {
        return Err(Error::DegenerateInput(format!("stand-in needs p >= 10, got {p}")));
    }
    if n < 2 {
        return Err(Error::DegenerateInput("stand-in needs n >= 2".into()));
    }
    const SHAPE: f64 = 0.7;
    let mu = (SHAPE * SHAPE / 2.0).exp();
    let sd = (((SHAPE * SHAPE).exp() - 1.0) * (SHAPE * SHAPE).exp()).sqrt();

    let mut rng = stream_rng(seed, STREAM_STANDIN_X);
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        let z: f64 = StandardNormal.sample(&mut rng);
        data.push(((SHAPE * z).exp() - mu) / sd);
    }
    let x = CovariateMatrix::from_valid(
        Array2::from_shape_vec((n, p), data).expect("shape matches data length"),
    );

    let mut noise = stream_rng(seed, STREAM_STANDIN_NOISE);
    let v = x.view();
    let mut y = Array1::from_shape_fn(n, |i| {
        let e: f64 = StandardNormal.sample(&mut noise);
        v[[i, 4]] + v[[i, 5]] + v[[i, 9]] + 0.5 * e
    });
    let mean = y.mean().expect("n >= 2");
    let sd_y = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    y.mapv_inplace(|v| (v - mean) / sd_y);
    Ok((x, y))
}
