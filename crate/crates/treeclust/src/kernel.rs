//! Kernel parameter assembly: locations built by accumulating column vectors
//! along tree paths, scales built by successive rank-one subtractions from
//! the background scale, the factorized (path-masked) equivalents, prior
//! collapse probabilities, and the truncation-level suggestion.
//!
//! Two coordinate systems coexist. The `(s, h)` node view uses the printed
//! turn rule [`crate::tree::tau`], under which the top turn is always left.
//! Turn-sequence evaluators ([`mu_for_turns`], [`sigma_for_turns`]) accept
//! explicit turn bits instead; feeding them a stopped path's
//! [`crate::tree::StopPattern::turns_from_root`] (root turn right) makes the
//! node-view formulas agree with the factorized [`mu_from_rho`] /
//! [`cov_from_rho`] exactly, column for column.

use crate::prior::{sample_local_scale, GammaSpec};
use crate::rng::{substream, Block};
use crate::tree::{rho_tilde, tau, PathVector, StopPattern};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// All kernel parameters: location loadings `theta`, left/right scale
/// loadings `lambda` / `lambda_tilde` (each `p x k`, `lambda` column 0
/// identically zero), their local scales, the level scales `gamma`, and the
/// noise variances `varsigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingsState {
    pub theta: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub lambda_tilde: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub psi_tilde: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub varsigma: DVector<f64>,
}

impl LoadingsState {
    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.theta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, k) = (self.p(), self.truncation());
        for (name, m) in [
            ("lambda", &self.lambda),
            ("lambda_tilde", &self.lambda_tilde),
            ("phi", &self.phi),
            ("psi", &self.psi),
            ("psi_tilde", &self.psi_tilde),
        ] {
            if m.nrows() != p || m.ncols() != k {
                return Err(Error::Dimension(format!("{name} must be {p}x{k}")));
            }
        }
        if self.gamma.len() != k {
            return Err(Error::Dimension(format!("gamma must have length {k}")));
        }
        if self.varsigma.len() != p {
            return Err(Error::Dimension(format!("varsigma must have length {p}")));
        }
        if self.lambda.column(0).iter().any(|&v| v != 0.0) {
            return Err(Error::Domain("lambda column 0 must be identically zero".into()));
        }
        if self.gamma.iter().any(|&g| g < 0.0) {
            return Err(Error::Domain("gamma entries must be nonnegative".into()));
        }
        if self.varsigma.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("varsigma entries must be positive".into()));
        }
        Ok(())
    }
}

/// Location of the node with the given turn sequence (entry `t` is the turn
/// at level `t`; the node level is `turns.len()`):
/// `theta_s + sum_{t<s} theta_t * turn_t`.
pub fn mu_for_turns(turns: &[u8], theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let s = turns.len();
    if s >= theta.ncols() {
        return Err(Error::Truncation(format!(
            "node level {s} out of range for truncation {}",
            theta.ncols()
        )));
    }
    let mut mu = theta.column(s).clone_owned();
    for (t, &b) in turns.iter().enumerate() {
        if b == 1 {
            mu += theta.column(t);
        }
    }
    Ok(mu)
}

/// Location of node `(s, h)` under the printed turn rule; the empty sum at
/// `s = 0` leaves just `theta_0`. The background location is the zero vector.
pub fn mu_node(s: usize, h: u64, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    if s >= theta.ncols() {
        return Err(Error::Truncation(format!(
            "level {s} out of range for truncation {}",
            theta.ncols()
        )));
    }
    let turns: Vec<u8> = (0..s).map(|t| tau(s, h, t)).collect::<Result<_>>()?;
    mu_for_turns(&turns, theta)
}

/// Scale of the background kernel:
/// `sum_q (lambda_tilde_q lambda_tilde_q' + lambda_q lambda_q') + diag(varsigma)`.
pub fn sigma_infty(
    lambda: &DMatrix<f64>,
    lambda_tilde: &DMatrix<f64>,
    varsigma: &DVector<f64>,
) -> DMatrix<f64> {
    let p = lambda.nrows();
    let mut sigma = DMatrix::from_diagonal(varsigma);
    debug_assert_eq!(p, varsigma.len());
    for q in 0..lambda.ncols() {
        let l = lambda.column(q);
        let lt = lambda_tilde.column(q);
        sigma.ger(1.0, &lt, &lt, 1.0);
        sigma.ger(1.0, &l, &l, 1.0);
    }
    sigma
}

/// Scale of the node with the given turn sequence, by successive subtraction
/// from the background scale: ancestors drop the loading of the branch not
/// taken (`lambda_tilde_t` on left turns, `lambda_t` on right turns) and the
/// node level drops its own `lambda_s`, so `lambda_tilde_s` stays active.
pub fn sigma_for_turns(
    turns: &[u8],
    lambda: &DMatrix<f64>,
    lambda_tilde: &DMatrix<f64>,
    varsigma: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let s = turns.len();
    if s >= lambda.ncols() {
        return Err(Error::Truncation(format!(
            "node level {s} out of range for truncation {}",
            lambda.ncols()
        )));
    }
    let mut sigma = sigma_infty(lambda, lambda_tilde, varsigma);
    for (t, &b) in turns.iter().enumerate() {
        let col = if b == 1 { lambda.column(t) } else { lambda_tilde.column(t) };
        sigma.ger(-1.0, &col, &col, 1.0);
    }
    let own = lambda.column(s);
    sigma.ger(-1.0, &own, &own, 1.0);
    Ok(sigma)
}

/// Scale of node `(s, h)` under the printed turn rule. The background scale
/// is [`sigma_infty`].
pub fn sigma_node(
    s: usize,
    h: u64,
    lambda: &DMatrix<f64>,
    lambda_tilde: &DMatrix<f64>,
    varsigma: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let k = lambda.ncols();
    if s + 1 > k.saturating_sub(1) {
        return Err(Error::Truncation(format!(
            "level {s} out of range for truncation {k}"
        )));
    }
    let turns: Vec<u8> = (0..s).map(|t| tau(s, h, t)).collect::<Result<_>>()?;
    sigma_for_turns(&turns, lambda, lambda_tilde, varsigma)
}

/// Factorized location: the column-selection sum `Theta rho`.
pub fn mu_from_rho(rho: &PathVector, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    if rho.len() != theta.ncols() {
        return Err(Error::Dimension(format!(
            "path length {} does not match loading columns {}",
            rho.len(),
            theta.ncols()
        )));
    }
    let mut mu = DVector::zeros(theta.nrows());
    for l in 0..rho.len() {
        if rho.bit(l) == 1 {
            mu += theta.column(l);
        }
    }
    Ok(mu)
}

/// Factorized covariance in masked-column form:
/// `LambdaTilde diag(rho_tilde) LambdaTilde' + Lambda diag(1 - rho) Lambda' + diag(varsigma)`.
pub fn cov_from_rho(
    rho: &PathVector,
    lambda: &DMatrix<f64>,
    lambda_tilde: &DMatrix<f64>,
    varsigma: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if rho.len() != lambda.ncols() || rho.len() != lambda_tilde.ncols() {
        return Err(Error::Dimension(format!(
            "path length {} does not match loading columns {}",
            rho.len(),
            lambda.ncols()
        )));
    }
    let rt = rho_tilde(rho);
    let mut sigma = DMatrix::from_diagonal(varsigma);
    for l in 0..rho.len() {
        if rt[l] == 1 {
            let col = lambda_tilde.column(l);
            sigma.ger(1.0, &col, &col, 1.0);
        }
        if rho.bit(l) == 0 {
            let col = lambda.column(l);
            sigma.ger(1.0, &col, &col, 1.0);
        }
    }
    Ok(sigma)
}

/// Spectral norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// Prior used by the collapse experiments: the level-scale specification plus
/// the kernel dimension. Loadings are drawn as `local * N(0, gamma_s)` with
/// local scales from the two-component mixture.
#[derive(Clone, Debug)]
pub struct CollapsePrior {
    pub gamma: GammaSpec,
    pub p: usize,
}

/// Monte Carlo collapse estimate for a child/ancestor kernel pair, with
/// binomial standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapseEstimate {
    pub p_mu: f64,
    pub p_sigma: f64,
    pub se_mu: f64,
    pub se_sigma: f64,
    pub draws: usize,
    /// Set when fewer than 1000 draws were requested.
    pub precision_warning: bool,
}

/// Estimate the prior probabilities that the child kernel's location and
/// scale fall within `(zeta_mu, zeta_sigma)` of the ancestor's (Euclidean
/// norm for locations, spectral norm for scales).
///
/// The ancestor must lie on the child's parent chain (the background counts).
/// Only the parameter columns that enter the child/ancestor difference are
/// sampled; draws use per-draw substreams, so the estimate is reproducible
/// given `(seed, draws)` regardless of worker count.
pub fn collapse_probability(
    child: &StopPattern,
    ancestor: &StopPattern,
    prior: &CollapsePrior,
    draws: usize,
    zeta_mu: f64,
    zeta_sigma: f64,
    seed: u64,
) -> Result<CollapseEstimate> {
    if child.is_background() {
        return Err(Error::Domain("child must be a stopped pattern".into()));
    }
    if !child.has_ancestor(ancestor) {
        return Err(Error::Domain(format!(
            "pattern {ancestor} is not an ancestor of {child}"
        )));
    }
    if draws == 0 {
        return Err(Error::Domain("collapse estimation needs at least one draw".into()));
    }
    let turns = child.turns_from_root()?;
    let m = turns.len();
    let lo = match ancestor.level() {
        None => 0,
        Some(q) => q + 1,
    };
    let p = prior.p;

    let hits: (u64, u64) = (0..draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = substream(seed, Block::Collapse, draw as u64, 0);
            let scales = prior.gamma.sample_scales(m, &mut rng);
            // mu difference: theta_m + sum_{t=lo..m} theta_t turn_t.
            // sigma difference: sum_{t=lo..m} of the dropped branch loading's
            // outer product, plus lambda_m lambda_m'.
            let mut mu_diff = DVector::<f64>::zeros(p);
            let mut sigma_diff = DMatrix::<f64>::zeros(p, p);
            let mut col = DVector::<f64>::zeros(p);
            let mut draw_loading = |rng: &mut rand_chacha::ChaCha8Rng, sd: f64, out: &mut DVector<f64>| {
                for j in 0..p {
                    let local = sample_local_scale(rng);
                    let raw: f64 = StandardNormal.sample(rng);
                    out[j] = local * sd * raw;
                }
            };
            for t in lo..m {
                let sd = scales[t].max(0.0).sqrt();
                // theta column t contributes on right turns.
                draw_loading(&mut rng, sd, &mut col);
                if turns[t] == 1 {
                    mu_diff += &col;
                }
                // The branch not taken drops its loading from the child scale:
                // lambda_t on right turns (t >= 1; lambda_0 is pinned to zero),
                // lambda_tilde_t on left turns.
                draw_loading(&mut rng, sd, &mut col);
                let dropped_active = if turns[t] == 1 { t >= 1 } else { true };
                if dropped_active {
                    sigma_diff.ger(1.0, &col, &col, 1.0);
                }
            }
            let sd_m = scales[m].max(0.0).sqrt();
            draw_loading(&mut rng, sd_m, &mut col);
            mu_diff += &col;
            draw_loading(&mut rng, sd_m, &mut col);
            sigma_diff.ger(1.0, &col, &col, 1.0);

            let mu_hit = mu_diff.norm() < zeta_mu;
            let sigma_hit = spectral_norm(&sigma_diff) < zeta_sigma;
            (mu_hit as u64, sigma_hit as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let n = draws as f64;
    let p_mu = hits.0 as f64 / n;
    let p_sigma = hits.1 as f64 / n;
    Ok(CollapseEstimate {
        p_mu,
        p_sigma,
        se_mu: (p_mu * (1.0 - p_mu) / n).sqrt(),
        se_sigma: (p_sigma * (1.0 - p_sigma) / n).sqrt(),
        draws,
        precision_warning: draws < 1000,
    })
}

/// Per-level collapse estimates for one-level child/parent pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelCollapse {
    pub level: usize,
    pub estimate: CollapseEstimate,
}

/// Result of the truncation scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationSuggestion {
    /// Smallest level such that every deeper scanned level collapses; equals
    /// `max_k` with `satisfied = false` when no such level exists.
    pub level: usize,
    pub satisfied: bool,
    pub per_level: Vec<LevelCollapse>,
}

/// Suggest a truncation level: the smallest `L` such that, for every scanned
/// level `s > L`, the one-level child/parent collapse probabilities both
/// exceed `(xi_mu, xi_sigma)`.
///
/// Scanned pairs stop one level below their parent (the child's last turn is
/// right), so the parameter difference is exactly the child level's columns;
/// every such pair at a level shares that law. Requires the expected
/// level-scale sequence to decay summably, checked numerically up to `max_k`
/// by a tail-ratio test.
pub fn suggest_truncation(
    prior: &CollapsePrior,
    zeta_mu: f64,
    zeta_sigma: f64,
    xi_mu: f64,
    xi_sigma: f64,
    max_k: usize,
    draws: usize,
    seed: u64,
) -> Result<TruncationSuggestion> {
    if max_k < 2 {
        return Err(Error::Domain("truncation scan needs max_k >= 2".into()));
    }
    check_summable(&prior.gamma, max_k)?;

    let mut per_level = Vec::new();
    for m in 2..=max_k {
        let child = StopPattern::new(vec![1u8; m]).expect("all-ones pattern");
        let ancestor = child.parent()?;
        let estimate = collapse_probability(
            &child,
            &ancestor,
            prior,
            draws,
            zeta_mu,
            zeta_sigma,
            seed.wrapping_add(m as u64),
        )?;
        per_level.push(LevelCollapse { level: m, estimate });
    }

    // Smallest L whose deeper levels all pass.
    let mut level = max_k;
    let mut satisfied = false;
    for candidate in (1..max_k).rev() {
        let all_pass = per_level
            .iter()
            .filter(|lc| lc.level > candidate)
            .all(|lc| lc.estimate.p_mu > xi_mu && lc.estimate.p_sigma > xi_sigma);
        if all_pass {
            level = candidate;
            satisfied = true;
        } else {
            break;
        }
    }
    Ok(TruncationSuggestion { level, satisfied, per_level })
}

/// Numerical summability check on the expected level scales: the sequence
/// must either vanish outright or keep a tail ratio bounded away from one.
fn check_summable(gamma: &GammaSpec, max_k: usize) -> Result<()> {
    let means: Vec<f64> = (0..=max_k).map(|s| gamma.mean(s)).collect();
    if means.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::Domain("expected level scales must be finite and nonnegative".into()));
    }
    let tail_ratios: Vec<f64> = (max_k / 2..max_k)
        .filter_map(|s| {
            if means[s] == 0.0 {
                // A vanished tail is trivially summable.
                if means[s + 1] == 0.0 {
                    None
                } else {
                    Some(f64::INFINITY)
                }
            } else {
                Some(means[s + 1] / means[s])
            }
        })
        .collect();
    let worst = tail_ratios.iter().fold(0.0f64, |a, &b| a.max(b));
    if worst > 0.95 {
        return Err(Error::Domain(format!(
            "expected level scales do not decay summably up to {max_k} \
             (worst tail ratio {worst:.4}); the truncation argument needs a \
             convergent expected-scale series"
        )));
    }
    Ok(())
}
