//! The Gibbs sampler: seven conditional-update steps per sweep, adaptive
//! truncation, chain orchestration, and cross-sample level alignment.
//!
//! Sweep order: paths, probit coefficients, latents, level-scale shrinkage,
//! location loadings, scale loadings, noise. Every stochastic block draws
//! from a counter-based substream keyed by `(seed, block, iteration, index)`,
//! so chains are bit-identical across reruns and worker counts.

pub mod align;
pub mod geweke;
mod updates;

pub use align::{align_samples, min_cost_assignment, AlignReport};
pub use updates::{
    gamma_conditional, latent_conditional, loading_row_conditional, noise_conditional,
};

use crate::data::Dataset;
use crate::generative::{draw_params_with, factor_mean};
use crate::kernel::LoadingsState;
use crate::numeric::{log_gamma_pdf, log_local_scale_pdf, log_normal_pdf};
use crate::prior::{path_prob, HyperParams, ProbitCoeffs, ShrinkageState};
use crate::rng::{substream, Block};
use crate::tree::{decode, PathVector, StopPattern};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Full sampler state: composed and scaled loadings, probit coefficients,
/// shrinkage indicators, paths, and latent factors. The invariant
/// `theta = phi .* theta_star` (likewise for the lambdas) holds after every
/// sweep, and `lambda` column 0 stays pinned to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub loadings: LoadingsState,
    pub theta_star: DMatrix<f64>,
    pub lambda_star: DMatrix<f64>,
    pub lambda_tilde_star: DMatrix<f64>,
    pub coeffs: ProbitCoeffs,
    pub shrinkage: ShrinkageState,
    pub rho: Vec<PathVector>,
    pub z: Vec<DVector<f64>>,
    pub z_tilde: Vec<DVector<f64>>,
}

impl ChainState {
    pub fn truncation(&self) -> usize {
        self.loadings.truncation()
    }

    pub fn n(&self) -> usize {
        self.rho.len()
    }

    pub fn p(&self) -> usize {
        self.loadings.p()
    }
}

/// Chain run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
    /// Enable adaptive truncation.
    pub adapt: bool,
    /// Adaptation probability at iteration t is `exp(alpha0 + alpha1 * t)`.
    pub alpha0: f64,
    pub alpha1: f64,
    /// Starting truncation; defaults to the hyperparameter `k`.
    pub initial_k: Option<usize>,
    /// Keep the truncation fixed (the complement of `adapt`).
    pub fixed_k: bool,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 2000,
            burn_in: 1000,
            thinning: 1,
            seed: 0,
            adapt: false,
            alpha0: -1.0,
            alpha1: -5e-4,
            initial_k: None,
            fixed_k: true,
            k_min: 2,
            k_max: 16,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thinning < 1 {
            return Err(Error::Config("thinning must be >= 1".into()));
        }
        if self.alpha0 > 0.0 || self.alpha1 > 0.0 {
            return Err(Error::Config("adaptation constants must be <= 0".into()));
        }
        if self.adapt && self.fixed_k {
            return Err(Error::Config("adapt and fixed_k are mutually exclusive".into()));
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::Config("need 2 <= k_min <= k_max".into()));
        }
        if let Some(k) = self.initial_k {
            if k < self.k_min || k > self.k_max {
                return Err(Error::Config(format!(
                    "initial_k ({k}) outside [{}, {}]",
                    self.k_min, self.k_max
                )));
            }
        }
        Ok(())
    }
}

/// One recorded draw: composed parameters, paths, and the joint log density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub schema: u32,
    pub iteration: u64,
    pub k: usize,
    pub log_joint: f64,
    /// Row-major `p x k` matrices.
    pub theta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub lambda_tilde: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    pub zeta: Vec<usize>,
    pub varsigma: Vec<f64>,
    /// One coefficient vector per tree level `1..=k-1`.
    pub coeffs: Vec<Vec<f64>>,
    /// Path bit strings, one per subject.
    pub rho: Vec<String>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ChainSample {
    pub fn from_state(state: &ChainState, iteration: u64, log_joint: f64) -> Self {
        ChainSample {
            schema: 1,
            iteration,
            k: state.truncation(),
            log_joint,
            theta: matrix_rows(&state.loadings.theta),
            lambda: matrix_rows(&state.loadings.lambda),
            lambda_tilde: matrix_rows(&state.loadings.lambda_tilde),
            gamma: state.loadings.gamma.iter().copied().collect(),
            nu: state.shrinkage.nu.clone(),
            zeta: state.shrinkage.zeta.clone(),
            varsigma: state.loadings.varsigma.iter().copied().collect(),
            coeffs: state.coeffs.iter().map(|c| c.iter().copied().collect()).collect(),
            rho: state.rho.iter().map(|r| r.to_string()).collect(),
        }
    }

    /// Decode each subject's cluster label.
    pub fn patterns(&self) -> Result<Vec<StopPattern>> {
        self.rho
            .iter()
            .map(|s| PathVector::parse(s).map(|r| decode(&r)))
            .collect()
    }
}

/// Iterates the sampler one sweep at a time and records thinned samples.
pub struct ChainRunner<'a> {
    hyper: HyperParams,
    config: ChainConfig,
    data: &'a Dataset,
    state: ChainState,
    iteration: u64,
}

impl<'a> ChainRunner<'a> {
    /// Initialize from priors: parameters via the prior stack, paths from
    /// the probit prior given the covariates, latents standard normal.
    pub fn new(hyper: &HyperParams, config: &ChainConfig, data: &'a Dataset) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if data.d() != hyper.d {
            return Err(Error::Config(format!(
                "covariate dimension {} does not match configured d = {}",
                data.d(),
                hyper.d
            )));
        }
        let k = config.initial_k.unwrap_or(hyper.k);
        let mut hyper_k = hyper.clone();
        hyper_k.k = k;
        let mut rng = substream(config.seed, Block::Init, 0, 0);
        let state = init_state(&hyper_k, data, &mut rng)?;
        Ok(ChainRunner {
            hyper: hyper_k,
            config: config.clone(),
            data,
            state,
            iteration: 0,
        })
    }

    /// Resume from a checkpointed state.
    pub fn from_checkpoint(
        hyper: &HyperParams,
        config: &ChainConfig,
        data: &'a Dataset,
        state: ChainState,
        iteration: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if state.n() != data.n() {
            return Err(Error::Data(format!(
                "checkpoint has {} subjects but data has {}",
                state.n(),
                data.n()
            )));
        }
        let mut hyper_k = hyper.clone();
        hyper_k.k = state.truncation();
        Ok(ChainRunner { hyper: hyper_k, config: config.clone(), data, state, iteration })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Advance one sweep; returns the recorded sample when the iteration
    /// falls on the thinned post-burn-in schedule.
    pub fn step(&mut self) -> Result<Option<ChainSample>> {
        let iter = self.iteration + 1;
        updates::sweep(&mut self.state, self.data, &self.hyper, self.config.seed, iter)?;
        if self.config.adapt {
            updates::adapt_truncation(
                &mut self.state,
                self.data,
                &self.hyper,
                &self.config,
                iter,
            )?;
        }
        self.iteration = iter;
        let recorded = iter > self.config.burn_in
            && (iter - self.config.burn_in) % self.config.thinning == 0;
        if recorded {
            let lj = log_joint(&self.state, self.data, &self.hyper);
            if !lj.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite joint log density at iteration {iter}"
                )));
            }
            Ok(Some(ChainSample::from_state(&self.state, iter, lj)))
        } else {
            Ok(None)
        }
    }
}

/// Run a full chain and collect the recorded samples.
pub fn run_chain(
    hyper: &HyperParams,
    config: &ChainConfig,
    data: &Dataset,
) -> Result<Vec<ChainSample>> {
    let mut runner = ChainRunner::new(hyper, config, data)?;
    let mut samples = Vec::new();
    while !runner.finished() {
        if let Some(sample) = runner.step()? {
            samples.push(sample);
        }
    }
    Ok(samples)
}

/// Prior initialization of the full state.
pub fn init_state<R: Rng>(hyper: &HyperParams, data: &Dataset, rng: &mut R) -> Result<ChainState> {
    let p = if data.n() > 0 { data.p() } else { data.y.ncols() };
    let params = draw_params_with(hyper, p, rng)?;
    let k = hyper.k;
    let n = data.n();
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        let xi = data.x.row(i).transpose();
        rho.push(crate::generative::draw_path_with(&xi, &params.coeffs, k, rng)?);
    }
    let z: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(k, |_, _| StandardNormal.sample(rng)))
        .collect();
    let z_tilde: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(k, |_, _| StandardNormal.sample(rng)))
        .collect();
    Ok(ChainState {
        loadings: params.loadings,
        theta_star: params.theta_star,
        lambda_star: params.lambda_star,
        lambda_tilde_star: params.lambda_tilde_star,
        coeffs: params.coeffs,
        shrinkage: params.shrinkage,
        rho,
        z,
        z_tilde,
    })
}

/// Joint log density of the data, latents, loadings, local scales, probit
/// coefficients and noise variances, conditional on the level-scale sequence.
///
/// The level-scale prior itself (the spike/slab classification, which
/// compares each indicator against its level index) is deliberately omitted:
/// without it the value is exactly invariant under consistent relabeling of
/// levels `1..k-1`, which sample alignment relies on.
pub fn log_joint(state: &ChainState, data: &Dataset, hyper: &HyperParams) -> f64 {
    let k = state.truncation();
    let p = state.p();
    let loadings = &state.loadings;
    let mut total = 0.0;

    // Data and latent terms.
    for i in 0..state.n() {
        let mean = factor_mean(
            &loadings.theta,
            &loadings.lambda,
            &loadings.lambda_tilde,
            &state.rho[i],
            &state.z[i],
            &state.z_tilde[i],
        );
        for j in 0..p {
            total += log_normal_pdf(data.y[(i, j)], mean[j], loadings.varsigma[j]);
        }
        for l in 0..k {
            total += log_normal_pdf(state.z[i][l], 0.0, 1.0);
            total += log_normal_pdf(state.z_tilde[i][l], 0.0, 1.0);
        }
        let xi = data.x.row(i).transpose();
        for s in 1..k {
            let prob = path_prob(&xi, state.coeffs.level(s)).expect("dimensions checked");
            total += if state.rho[i].bit(s) == 1 { prob.ln() } else { (1.0 - prob).ln() };
        }
    }

    // Probit coefficients.
    for coeff in state.coeffs.iter() {
        for &b in coeff.iter() {
            total += log_normal_pdf(b, 0.0, 1.0);
        }
    }

    // Scaled loadings given the level scales; lambda column 0 is pinned, not
    // a random coordinate.
    for l in 0..k {
        let g = loadings.gamma[l];
        for j in 0..p {
            total += log_normal_pdf(state.theta_star[(j, l)], 0.0, g);
            total += log_normal_pdf(state.lambda_tilde_star[(j, l)], 0.0, g);
            if l >= 1 {
                total += log_normal_pdf(state.lambda_star[(j, l)], 0.0, g);
            }
        }
    }

    // Local scales.
    for m in [&loadings.phi, &loadings.psi, &loadings.psi_tilde] {
        for &v in m.iter() {
            total += log_local_scale_pdf(v);
        }
    }

    // Noise variances via the gamma density on precisions with the change of
    // variables to variances.
    for j in 0..p {
        let var = loadings.varsigma[j];
        total += log_gamma_pdf(1.0 / var, hyper.a_sigma, hyper.b_sigma) - 2.0 * var.ln();
    }

    total
}
