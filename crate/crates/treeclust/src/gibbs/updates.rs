//! The seven conditional updates of a Gibbs sweep plus adaptive truncation.
//!
//! Each update leaves its exact full conditional invariant. The conditional
//! parameters (precisions, means, gamma shapes and rates) are exposed through
//! small pure helpers so tests can check them against closed-form conjugacy.

use super::{ChainConfig, ChainState};
use crate::data::Dataset;
use crate::generative::factor_mean_with;
use crate::numeric::{sample_truncnormal_half, sigmoid};
use crate::prior::{
    path_prob, sample_inverse_gamma, sample_local_scale, sample_stick_category, stick_mass,
    HyperParams,
};
use crate::rng::{substream, Block};
use crate::tree::rho_tilde_bits_into;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

pub(crate) fn sweep(
    state: &mut ChainState,
    data: &Dataset,
    hyper: &HyperParams,
    seed: u64,
    iter: u64,
) -> Result<()> {
    update_rho(state, data, seed, iter)?;
    update_probit_coeffs(state, data, seed, iter)?;
    update_latents(state, data, seed, iter)?;
    update_shrinkage(state, hyper, seed, iter)?;
    update_loadings(state, data, seed, iter)?;
    update_noise(state, data, hyper, seed, iter)?;
    Ok(())
}

/// Step 1: resample each subject's path bits from their Bernoulli full
/// conditionals, sequentially over levels (the stop indicator couples bits),
/// in parallel over subjects.
pub fn update_rho(state: &mut ChainState, data: &Dataset, seed: u64, iter: u64) -> Result<()> {
    let k = state.truncation();
    let loadings = &state.loadings;
    let new_rho: Vec<_> = (0..state.n())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Block::Paths, iter, i as u64);
            let xi = data.x.row(i).transpose();
            let y_i = data.y.row(i).transpose();
            let mut bits = state.rho[i].bits().to_vec();
            let mut rt = vec![0u8; k];
            for s in 1..k {
                let prob = path_prob(&xi, state.coeffs.level(s))?;
                let log_prior_odds = prob.ln() - (1.0 - prob).ln();
                let mut loglik = [0.0f64; 2];
                for b in 0..2u8 {
                    bits[s] = b;
                    rho_tilde_bits_into(&bits, &mut rt);
                    let mean = factor_mean_with(
                        &loadings.theta,
                        &loadings.lambda,
                        &loadings.lambda_tilde,
                        &bits,
                        &rt,
                        &state.z[i],
                        &state.z_tilde[i],
                    );
                    let mut ll = 0.0;
                    for j in 0..loadings.p() {
                        let d = y_i[j] - mean[j];
                        ll -= 0.5 * d * d / loadings.varsigma[j];
                    }
                    loglik[b as usize] = ll;
                }
                let p_one = sigmoid(log_prior_odds + loglik[1] - loglik[0]);
                bits[s] = (rng.gen::<f64>() < p_one) as u8;
            }
            crate::tree::PathVector::new(bits)
        })
        .collect::<Result<_>>()?;
    state.rho = new_rho;
    Ok(())
}

/// Step 2: resample the probit coefficients of every level from their exact
/// full conditionals via latent-utility augmentation (one truncated-normal
/// pass given the current coefficients, then the conjugate Gaussian draw).
pub fn update_probit_coeffs(
    state: &mut ChainState,
    data: &Dataset,
    seed: u64,
    iter: u64,
) -> Result<()> {
    let k = state.truncation();
    let d = data.d();
    let n = data.n();
    // Posterior precision I + X'X is level-independent.
    let mut precision = DMatrix::identity(d, d);
    precision.gemm_tr(1.0, &data.x, &data.x, 1.0);
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("probit posterior precision not positive definite".into()))?;

    let new_coeffs: Vec<DVector<f64>> = (1..k)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, Block::Probit, iter, s as u64);
            let current = state.coeffs.level(s);
            let mut xtu = DVector::zeros(d);
            for i in 0..n {
                let xi = data.x.row(i).transpose();
                let linear = xi.dot(current);
                let positive = state.rho[i].bit(s) == 1;
                let u = sample_truncnormal_half(&mut rng, linear, positive);
                xtu.axpy(u, &xi, 1.0);
            }
            let mean = chol.solve(&xtu);
            let noise = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            mean + solve_upper(&chol, noise)
        })
        .collect();
    state.coeffs = crate::prior::ProbitCoeffs::new(new_coeffs)?;
    Ok(())
}

/// Step 3: jointly resample each subject's `2k` latent factors from their
/// Gaussian full conditional.
pub fn update_latents(state: &mut ChainState, data: &Dataset, seed: u64, iter: u64) -> Result<()> {
    let k = state.truncation();
    let loadings = &state.loadings;
    let draws: Vec<(DVector<f64>, DVector<f64>)> = (0..state.n())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Block::Latents, iter, i as u64);
            let y_i = data.y.row(i).transpose();
            let (precision, linear) =
                latent_conditional(loadings, state.rho[i].bits(), &y_i);
            let chol = Cholesky::new(precision).ok_or_else(|| {
                Error::Numerical("latent full-conditional precision not positive definite".into())
            })?;
            let mean = chol.solve(&linear);
            let noise = DVector::from_fn(2 * k, |_, _| StandardNormal.sample(&mut rng));
            let draw = mean + solve_upper(&chol, noise);
            Ok((draw.rows(0, k).clone_owned(), draw.rows(k, k).clone_owned()))
        })
        .collect::<Result<_>>()?;
    for (i, (z, zt)) in draws.into_iter().enumerate() {
        state.z[i] = z;
        state.z_tilde[i] = zt;
    }
    Ok(())
}

/// Precision and linear term of the latent full conditional for one subject:
/// with masked design `A = [Lambda diag(1-rho), LambdaTilde diag(rho_tilde)]`
/// the precision is `I + A' D^{-1} A` and the linear term `A' D^{-1} (y - Theta rho)`.
pub fn latent_conditional(
    loadings: &crate::kernel::LoadingsState,
    rho_bits: &[u8],
    y_row: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = loadings.truncation();
    let p = loadings.p();
    let mut rt = vec![0u8; k];
    rho_tilde_bits_into(rho_bits, &mut rt);
    // Design with rows pre-scaled by 1/sqrt(varsigma).
    let mut scaled = DMatrix::zeros(p, 2 * k);
    let mut residual = y_row.clone();
    for l in 0..k {
        if rho_bits[l] == 1 {
            residual -= loadings.theta.column(l);
        }
    }
    for j in 0..p {
        let inv_sd = 1.0 / loadings.varsigma[j].sqrt();
        for l in 0..k {
            if rho_bits[l] == 0 {
                scaled[(j, l)] = loadings.lambda[(j, l)] * inv_sd;
            }
            if rt[l] == 1 {
                scaled[(j, k + l)] = loadings.lambda_tilde[(j, l)] * inv_sd;
            }
        }
        residual[j] *= inv_sd;
    }
    let mut precision = DMatrix::identity(2 * k, 2 * k);
    precision.gemm_tr(1.0, &scaled, &scaled, 1.0);
    let mut linear = DVector::zeros(2 * k);
    linear.gemv_tr(1.0, &scaled, &residual, 0.0);
    (precision, linear)
}

/// Step 4: level-scale shrinkage. For each level, draw the augmented
/// indicator from its categorical conditional with the scale integrated out
/// (stick mass times the spike/slab marginal of the column's scaled
/// loadings), then the stick variables from their beta conditionals, then
/// the scales from their inverse-gamma conditionals.
pub fn update_shrinkage(
    state: &mut ChainState,
    hyper: &HyperParams,
    seed: u64,
    iter: u64,
) -> Result<()> {
    let mut rng = substream(seed, Block::Shrinkage, iter, 0);
    let k = state.truncation();
    let p = state.p();

    // Column sums of squares of the scaled loadings; lambda column 0 is
    // pinned rather than random, so level 0 carries 2p values.
    let col_stats: Vec<(f64, usize)> = (0..k)
        .map(|l| {
            let mut s = 0.0;
            for j in 0..p {
                s += state.theta_star[(j, l)].powi(2);
                s += state.lambda_tilde_star[(j, l)].powi(2);
                if l >= 1 {
                    s += state.lambda_star[(j, l)].powi(2);
                }
            }
            (s, if l == 0 { 2 * p } else { 3 * p })
        })
        .collect();

    // (i) indicators.
    for l in 0..k {
        let (sum_sq, m) = col_stats[l];
        let spike_ll = marginal_log_lik(hyper, hyper.vartheta * hyper.b_gamma, m, sum_sq);
        let slab_ll = marginal_log_lik(hyper, hyper.b_gamma, m, sum_sq);
        let log_w: Vec<f64> = (1..=k)
            .map(|t| {
                let stick = stick_mass(t, &state.shrinkage.nu).max(f64::MIN_POSITIVE);
                stick.ln() + if t <= l { spike_ll } else { slab_ll }
            })
            .collect();
        state.shrinkage.zeta[l] = sample_log_categorical(&log_w, &mut rng) + 1;
    }

    // (ii) stick variables. The residual mass beyond the truncation is
    // lumped into category k, whose stick factor therefore never appears;
    // its conditional is the prior.
    let zeta = &state.shrinkage.zeta;
    for t in 1..=k {
        let (a, b) = if t < k {
            let eq = zeta.iter().filter(|&&z| z == t).count() as f64;
            let gt = zeta.iter().filter(|&&z| z > t).count() as f64;
            (1.0 + eq, hyper.a_nu + gt)
        } else {
            (1.0, hyper.a_nu)
        };
        state.shrinkage.nu[t - 1] = Beta::new(a, b)
            .expect("positive shapes")
            .sample(&mut rng)
            .clamp(1e-12, 1.0 - 1e-12);
    }

    // (iii) scales.
    for l in 0..k {
        let (sum_sq, m) = col_stats[l];
        let (shape, rate) = gamma_conditional(hyper, m, sum_sq, state.shrinkage.is_spike(l));
        let precision: f64 = Gamma::new(shape, 1.0 / rate).expect("positive").sample(&mut rng);
        state.loadings.gamma[l] = (1.0 / precision).max(f64::MIN_POSITIVE);
    }
    Ok(())
}

/// Log marginal density (up to level-independent constants) of `m` scaled
/// loadings with sum of squares `sum_sq` under a zero-mean normal whose
/// variance carries an inverse-gamma prior with shape `a_gamma` and scale `b`:
/// `a ln b - (a + m/2) ln(b + sum_sq / 2)`.
fn marginal_log_lik(hyper: &HyperParams, b: f64, m: usize, sum_sq: f64) -> f64 {
    hyper.a_gamma * b.ln() - (hyper.a_gamma + m as f64 / 2.0) * (b + sum_sq / 2.0).ln()
}

/// Shape and rate of the inverse scale's gamma full conditional:
/// `(a_gamma + m/2, b + sum_sq/2)` with the spike or slab scale as `b`.
pub fn gamma_conditional(
    hyper: &HyperParams,
    m: usize,
    sum_sq: f64,
    spike: bool,
) -> (f64, f64) {
    let b = if spike { hyper.vartheta * hyper.b_gamma } else { hyper.b_gamma };
    (hyper.a_gamma + m as f64 / 2.0, b + sum_sq / 2.0)
}

fn sample_log_categorical<R: Rng>(log_w: &[f64], rng: &mut R) -> usize {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (idx, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return idx;
        }
    }
    log_w.len() - 1
}

#[derive(Clone, Copy, PartialEq)]
enum Family {
    Theta,
    LambdaTilde,
    Lambda,
}

/// Steps 5-6: resample the scaled loading rows from their Gaussian full
/// conditionals and the local scales from their two-component normal-mixture
/// conditionals, family by family (locations, then right-path loadings, then
/// left-path loadings), recomposing the products afterwards.
pub fn update_loadings(
    state: &mut ChainState,
    data: &Dataset,
    seed: u64,
    iter: u64,
) -> Result<()> {
    let k = state.truncation();
    let n = state.n();
    let p = state.p();

    // Path masks are fixed within this step.
    let mut rho_f = DMatrix::zeros(n, k);
    let mut eta = DMatrix::zeros(n, k); // (1 - rho) .* z
    let mut eta_tilde = DMatrix::zeros(n, k); // rho_tilde .* z_tilde
    let mut rt = vec![0u8; k];
    for i in 0..n {
        let bits = state.rho[i].bits();
        rho_tilde_bits_into(bits, &mut rt);
        for l in 0..k {
            rho_f[(i, l)] = bits[l] as f64;
            if bits[l] == 0 {
                eta[(i, l)] = state.z[i][l];
            }
            if rt[l] == 1 {
                eta_tilde[(i, l)] = state.z_tilde[i][l];
            }
        }
    }

    for family in [Family::Theta, Family::LambdaTilde, Family::Lambda] {
        let (regressors, block, first_free) = match family {
            Family::Theta => (&rho_f, Block::LoadTheta, 0usize),
            Family::LambdaTilde => (&eta_tilde, Block::LoadLambdaTilde, 0usize),
            Family::Lambda => (&eta, Block::LoadLambda, 1usize),
        };
        // Residual excluding this family's contribution.
        let mut residual = data.y.clone();
        match family {
            Family::Theta => {
                residual.gemm(-1.0, &eta_tilde, &state.loadings.lambda_tilde.transpose(), 1.0);
                residual.gemm(-1.0, &eta, &state.loadings.lambda.transpose(), 1.0);
            }
            Family::LambdaTilde => {
                residual.gemm(-1.0, &rho_f, &state.loadings.theta.transpose(), 1.0);
                residual.gemm(-1.0, &eta, &state.loadings.lambda.transpose(), 1.0);
            }
            Family::Lambda => {
                residual.gemm(-1.0, &rho_f, &state.loadings.theta.transpose(), 1.0);
                residual.gemm(-1.0, &eta_tilde, &state.loadings.lambda_tilde.transpose(), 1.0);
            }
        }
        let gamma = state.loadings.gamma.clone();
        let (stars, locals): (&DMatrix<f64>, &DMatrix<f64>) = match family {
            Family::Theta => (&state.theta_star, &state.loadings.phi),
            Family::LambdaTilde => (&state.lambda_tilde_star, &state.loadings.psi_tilde),
            Family::Lambda => (&state.lambda_star, &state.loadings.psi),
        };

        let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, block, iter, j as u64);
                let noise_var = state.loadings.varsigma[j];
                let r_j = residual.column(j).clone_owned();
                let mut star_row: DVector<f64> = stars.row(j).transpose();
                let mut local_row: DVector<f64> = locals.row(j).transpose();

                // (a) joint draw of the scaled-loading row over free levels.
                let free: Vec<usize> = (first_free..k).collect();
                let (precision, linear) = loading_row_conditional(
                    regressors,
                    &local_row,
                    &gamma,
                    &r_j,
                    noise_var,
                    &free,
                );
                let chol = Cholesky::new(precision).ok_or_else(|| {
                    Error::Numerical("loading row precision not positive definite".into())
                })?;
                let mean = chol.solve(&linear);
                let raw = DVector::from_fn(free.len(), |_, _| StandardNormal.sample(&mut rng));
                let draw = mean + solve_upper(&chol, raw);
                for (idx, &l) in free.iter().enumerate() {
                    star_row[l] = draw[idx];
                }
                if first_free == 1 {
                    star_row[0] = 0.0;
                }

                // (b) local scales, one at a time against the running residual.
                let mut err = r_j;
                for &l in &free {
                    if local_row[l] != 0.0 || star_row[l] != 0.0 {
                        err.axpy(-local_row[l] * star_row[l], &regressors.column(l), 1.0);
                    }
                }
                for &l in &free {
                    // Remove level l's contribution, then redraw its scale.
                    err.axpy(local_row[l] * star_row[l], &regressors.column(l), 1.0);
                    let v_scale = star_row[l];
                    let col = regressors.column(l);
                    let sum_v_sq = v_scale * v_scale * col.dot(&col);
                    let sum_v_r = v_scale * col.dot(&err);
                    let prec = 1.0 + sum_v_sq / noise_var;
                    let eta_pos = 1.0 + sum_v_r / noise_var;
                    let eta_neg = -1.0 + sum_v_r / noise_var;
                    let log_odds = (eta_pos * eta_pos - eta_neg * eta_neg) / (2.0 * prec);
                    let center = if rng.gen::<f64>() < sigmoid(log_odds) { eta_pos } else { eta_neg };
                    let raw: f64 = StandardNormal.sample(&mut rng);
                    local_row[l] = center / prec + raw / prec.sqrt();
                    err.axpy(-local_row[l] * star_row[l], &regressors.column(l), 1.0);
                }
                if first_free == 1 {
                    // The left-path scale of the root level never sees data;
                    // its conditional is the prior.
                    local_row[0] = sample_local_scale(&mut rng);
                }
                Ok((star_row, local_row))
            })
            .collect::<Result<_>>()?;

        for (j, (star_row, local_row)) in rows.into_iter().enumerate() {
            let composed: DVector<f64> = star_row.component_mul(&local_row);
            match family {
                Family::Theta => {
                    state.theta_star.row_mut(j).copy_from(&star_row.transpose());
                    state.loadings.phi.row_mut(j).copy_from(&local_row.transpose());
                    state.loadings.theta.row_mut(j).copy_from(&composed.transpose());
                }
                Family::LambdaTilde => {
                    state.lambda_tilde_star.row_mut(j).copy_from(&star_row.transpose());
                    state.loadings.psi_tilde.row_mut(j).copy_from(&local_row.transpose());
                    state.loadings.lambda_tilde.row_mut(j).copy_from(&composed.transpose());
                }
                Family::Lambda => {
                    state.lambda_star.row_mut(j).copy_from(&star_row.transpose());
                    state.loadings.psi.row_mut(j).copy_from(&local_row.transpose());
                    let mut row = composed;
                    row[0] = 0.0;
                    state.loadings.lambda.row_mut(j).copy_from(&row.transpose());
                }
            }
        }
    }
    Ok(())
}

/// Precision and linear term of a scaled-loading row's Gaussian full
/// conditional over the free levels: with design `W = G diag(local)` the
/// precision is `diag(1/gamma) + W'W / varsigma` and the linear term
/// `W' r / varsigma`.
pub fn loading_row_conditional(
    regressors: &DMatrix<f64>,
    local_row: &DVector<f64>,
    gamma: &DVector<f64>,
    residual: &DVector<f64>,
    noise_var: f64,
    free: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let m = free.len();
    let mut precision = DMatrix::zeros(m, m);
    let mut linear = DVector::zeros(m);
    for (a, &la) in free.iter().enumerate() {
        let col_a = regressors.column(la);
        let wa = local_row[la];
        for (b, &lb) in free.iter().enumerate().skip(a) {
            let dot = col_a.dot(&regressors.column(lb));
            let value = wa * local_row[lb] * dot / noise_var;
            precision[(a, b)] = value;
            precision[(b, a)] = value;
        }
        precision[(a, a)] += 1.0 / gamma[la];
        linear[a] = wa * col_a.dot(residual) / noise_var;
    }
    (precision, linear)
}

/// Step 7: resample the noise variances from their gamma full conditionals
/// on the precisions, in parallel over features.
pub fn update_noise(
    state: &mut ChainState,
    data: &Dataset,
    hyper: &HyperParams,
    seed: u64,
    iter: u64,
) -> Result<()> {
    let n = state.n();
    let p = state.p();
    // Residuals of the full factorized mean.
    let mut residual = data.y.clone();
    let mut rt = vec![0u8; state.truncation()];
    for i in 0..n {
        rho_tilde_bits_into(state.rho[i].bits(), &mut rt);
        let mean = factor_mean_with(
            &state.loadings.theta,
            &state.loadings.lambda,
            &state.loadings.lambda_tilde,
            state.rho[i].bits(),
            &rt,
            &state.z[i],
            &state.z_tilde[i],
        );
        for j in 0..p {
            residual[(i, j)] -= mean[j];
        }
    }
    let new_vars: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, Block::Noise, iter, j as u64);
            let sum_sq = residual.column(j).norm_squared();
            let (shape, rate) = noise_conditional(hyper, n, sum_sq);
            let precision: f64 = Gamma::new(shape, 1.0 / rate).expect("positive").sample(&mut rng);
            (1.0 / precision).max(f64::MIN_POSITIVE)
        })
        .collect();
    for j in 0..p {
        state.loadings.varsigma[j] = new_vars[j];
    }
    Ok(())
}

/// Shape and rate of a noise precision's gamma full conditional:
/// `(a_sigma + n/2, b_sigma + sum_sq/2)`.
pub fn noise_conditional(hyper: &HyperParams, n: usize, sum_sq: f64) -> (f64, f64) {
    (hyper.a_sigma + n as f64 / 2.0, hyper.b_sigma + sum_sq / 2.0)
}

/// Adaptive truncation: with exponentially decaying probability, drop the
/// trailing level when it sits in the spike and no path occupies it, and
/// grow by a prior-drawn level otherwise. The occupancy guard means dropping
/// never changes any subject's cluster.
pub fn adapt_truncation(
    state: &mut ChainState,
    data: &Dataset,
    hyper: &HyperParams,
    config: &ChainConfig,
    iter: u64,
) -> Result<()> {
    let mut rng = substream(config.seed, Block::Adapt, iter, 0);
    let prob = (config.alpha0 + config.alpha1 * iter as f64).exp();
    if rng.gen::<f64>() >= prob {
        return Ok(());
    }
    let k = state.truncation();
    let trailing = k - 1;
    let droppable = state.shrinkage.is_spike(trailing)
        && state.rho.iter().all(|r| r.bit(trailing) == 0)
        && k > config.k_min;
    if droppable {
        drop_trailing_level(state);
    } else if k < config.k_max {
        append_prior_level(state, data, hyper, &mut rng)?;
    }
    Ok(())
}

fn drop_trailing_level(state: &mut ChainState) {
    let k = state.truncation();
    let last = k - 1;
    let l = &mut state.loadings;
    l.theta = l.theta.clone().remove_column(last);
    l.lambda = l.lambda.clone().remove_column(last);
    l.lambda_tilde = l.lambda_tilde.clone().remove_column(last);
    l.phi = l.phi.clone().remove_column(last);
    l.psi = l.psi.clone().remove_column(last);
    l.psi_tilde = l.psi_tilde.clone().remove_column(last);
    l.gamma = l.gamma.clone().remove_row(last);
    state.theta_star = state.theta_star.clone().remove_column(last);
    state.lambda_star = state.lambda_star.clone().remove_column(last);
    state.lambda_tilde_star = state.lambda_tilde_star.clone().remove_column(last);
    state.shrinkage.nu.pop();
    state.shrinkage.zeta.pop();
    for z in &mut state.shrinkage.zeta {
        *z = (*z).min(last);
    }
    state.coeffs.pop_level();
    for r in &mut state.rho {
        r.pop_bit();
    }
    for v in &mut state.z {
        *v = v.clone().remove_row(last);
    }
    for v in &mut state.z_tilde {
        *v = v.clone().remove_row(last);
    }
}

fn append_prior_level(
    state: &mut ChainState,
    data: &Dataset,
    hyper: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let k = state.truncation();
    let p = state.p();
    let nu_new = Beta::new(1.0, hyper.a_nu)
        .expect("validated")
        .sample(rng)
        .clamp(1e-12, 1.0 - 1e-12);
    state.shrinkage.nu.push(nu_new);
    let zeta_new = sample_stick_category(&state.shrinkage.nu, rng);
    state.shrinkage.zeta.push(zeta_new);
    let spike = zeta_new <= k; // new level index is k
    let scale = if spike { hyper.vartheta * hyper.b_gamma } else { hyper.b_gamma };
    let gamma_new = sample_inverse_gamma(rng, hyper.a_gamma, scale);

    let l = &mut state.loadings;
    l.gamma = l.gamma.clone().insert_row(k, gamma_new);
    let mut grow = |m: &mut DMatrix<f64>| {
        *m = m.clone().insert_column(k, 0.0);
    };
    grow(&mut l.theta);
    grow(&mut l.lambda);
    grow(&mut l.lambda_tilde);
    grow(&mut l.phi);
    grow(&mut l.psi);
    grow(&mut l.psi_tilde);
    grow(&mut state.theta_star);
    grow(&mut state.lambda_star);
    grow(&mut state.lambda_tilde_star);
    let sd = gamma_new.sqrt();
    for j in 0..p {
        let phi = sample_local_scale(rng);
        let psi = sample_local_scale(rng);
        let psi_t = sample_local_scale(rng);
        let raw: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let (t_star, lam_star, lt_star) = (raw[0] * sd, raw[1] * sd, raw[2] * sd);
        state.loadings.phi[(j, k)] = phi;
        state.loadings.psi[(j, k)] = psi;
        state.loadings.psi_tilde[(j, k)] = psi_t;
        state.theta_star[(j, k)] = t_star;
        state.lambda_star[(j, k)] = lam_star;
        state.lambda_tilde_star[(j, k)] = lt_star;
        state.loadings.theta[(j, k)] = phi * t_star;
        state.loadings.lambda[(j, k)] = psi * lam_star;
        state.loadings.lambda_tilde[(j, k)] = psi_t * lt_star;
    }

    let coeff_new = DVector::from_fn(hyper.d, |_, _| StandardNormal.sample(rng));
    for (i, r) in state.rho.iter_mut().enumerate() {
        let xi = data.x.row(i).transpose();
        let prob = path_prob(&xi, &coeff_new)?;
        r.push_bit(rng.gen_bool(prob) as u8);
    }
    state.coeffs.push_level(coeff_new);
    for v in &mut state.z {
        let draw: f64 = StandardNormal.sample(rng);
        *v = v.clone().insert_row(k, draw);
    }
    for v in &mut state.z_tilde {
        let draw: f64 = StandardNormal.sample(rng);
        *v = v.clone().insert_row(k, draw);
    }
    Ok(())
}

/// Solve `L' x = b` for the upper-triangular factor of a Cholesky
/// decomposition; used to draw from N(mean, P^{-1}) as `mean + L^{-T} v`.
fn solve_upper(chol: &Cholesky<f64, Dyn>, b: DVector<f64>) -> DVector<f64> {
    let lt = chol.l().transpose();
    lt.solve_upper_triangular(&b)
        .expect("Cholesky factor is nonsingular")
}
