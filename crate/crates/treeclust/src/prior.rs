//! The prior stack: spike-and-slab level scales with stick-breaking spike
//! probabilities, two-component local scales, probit path coefficients, and
//! gamma noise precisions, plus prior samplers for all of them.

use crate::numeric::probit_prob;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Model hyperparameters. `k` is the truncation level, `c` the branching
/// factor (fixed at 2), `d` the covariate dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Inverse-gamma shape of the level scales.
    pub a_gamma: f64,
    /// Inverse-gamma scale of the slab component.
    pub b_gamma: f64,
    /// Spike shrink factor in (0, 1): the spike scale is `vartheta * b_gamma`.
    pub vartheta: f64,
    /// Stick-breaking rate; the prior expected number of non-collapsing levels.
    pub a_nu: f64,
    /// Gamma shape of the noise precisions.
    pub a_sigma: f64,
    /// Gamma rate of the noise precisions.
    pub b_sigma: f64,
    /// Truncation level.
    pub k: usize,
    /// Branching factor; only 2 is supported.
    pub c: usize,
    /// Covariate dimension.
    pub d: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a_gamma: 3.0,
            b_gamma: 1.0,
            vartheta: 0.05,
            a_nu: 2.0,
            a_sigma: 2.0,
            b_sigma: 1.0,
            k: 6,
            c: 2,
            d: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
            ("a_nu", self.a_nu),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.vartheta > 0.0 && self.vartheta < 1.0) {
            return Err(Error::Config(format!(
                "vartheta must lie in (0, 1), got {}",
                self.vartheta
            )));
        }
        if self.c != 2 {
            return Err(Error::Config(format!(
                "branching factor c={} is not supported; only binary trees (c = 2)",
                self.c
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("truncation k must be >= 2, got {}", self.k)));
        }
        if self.d < 1 {
            return Err(Error::Config("covariate dimension d must be >= 1".into()));
        }
        if self.a_gamma <= 1.0 {
            // E(gamma_s) must exist for the collapse/truncation diagnostics.
            return Err(Error::Config(format!(
                "a_gamma must exceed 1 so level scales have finite means, got {}",
                self.a_gamma
            )));
        }
        Ok(())
    }
}

/// Stick-breaking state of the shrinkage process: `nu[t-1]` holds the stick
/// variable of category `t = 1..=k`, and `zeta[l]` the augmented indicator of
/// tree level `l = 0..k`. Level `l` sits in the spike iff `zeta[l] <= l`, so
/// level 0 is always slab.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageState {
    pub nu: Vec<f64>,
    pub zeta: Vec<usize>,
}

impl ShrinkageState {
    pub fn truncation(&self) -> usize {
        self.nu.len()
    }

    /// Whether level `l` currently sits in the spike.
    pub fn is_spike(&self, level: usize) -> bool {
        self.zeta[level] <= level
    }
}

/// Prior stick mass of category `t = 1..=k` with the residual beyond the
/// truncation lumped into `t = k`:
/// `nu_t prod_{m<t} (1 - nu_m)` for `t < k` and `prod_{m<k} (1 - nu_m)` at `t = k`.
pub fn stick_mass(t: usize, nu: &[f64]) -> f64 {
    let k = nu.len();
    debug_assert!(t >= 1 && t <= k);
    let lead: f64 = nu[..t - 1].iter().map(|&v| 1.0 - v).product();
    if t < k {
        nu[t - 1] * lead
    } else {
        lead
    }
}

/// Spike probability at level `s`: `sum_{t<=s} nu_t prod_{m<t} (1 - nu_m)`,
/// the stick-breaking mass of categories up to `s`. Nondecreasing in `s` and
/// zero at `s = 0`.
///
/// The interior product runs over `m < t`; see [`spike_prob_printed`] for the
/// verbatim variant with `m <= t`, which double-counts `1 - nu_t` and breaks
/// the telescoping identity behind the expected-level-count interpretation of
/// the stick rate.
pub fn spike_prob(s: usize, nu: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut lead = 1.0;
    for t in 1..=s.min(nu.len()) {
        total += nu[t - 1] * lead;
        lead *= 1.0 - nu[t - 1];
    }
    total
}

/// Verbatim spike probability with the `m <= t` product, kept for comparison.
pub fn spike_prob_printed(s: usize, nu: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut lead = 1.0;
    for t in 1..=s.min(nu.len()) {
        lead *= 1.0 - nu[t - 1];
        total += nu[t - 1] * lead;
    }
    total
}

/// Draw the shrinkage state and level scales from the prior: stick variables
/// `nu_t ~ Beta(1, a_nu)`, categorical indicators from the stick masses, and
/// `gamma_l` from the slab `IG(a_gamma, b_gamma)` when `zeta_l > l` or the
/// spike `IG(a_gamma, vartheta b_gamma)` otherwise. Marginally the spike
/// probability at level `l < k` equals [`spike_prob`]`(l, nu)`.
pub fn sample_gamma_sequence<R: Rng>(
    hyper: &HyperParams,
    rng: &mut R,
) -> (ShrinkageState, DVector<f64>) {
    let k = hyper.k;
    let beta = Beta::new(1.0, hyper.a_nu).expect("validated hyper");
    let nu: Vec<f64> = (0..k).map(|_| beta.sample(rng)).collect();
    let zeta: Vec<usize> = (0..k).map(|_| sample_stick_category(&nu, rng)).collect();
    let state = ShrinkageState { nu, zeta };
    let gamma = DVector::from_iterator(
        k,
        (0..k).map(|l| {
            let scale = if state.is_spike(l) {
                hyper.vartheta * hyper.b_gamma
            } else {
                hyper.b_gamma
            };
            sample_inverse_gamma(rng, hyper.a_gamma, scale)
        }),
    );
    (state, gamma)
}

/// Draw a category from the truncated stick masses.
pub fn sample_stick_category<R: Rng>(nu: &[f64], rng: &mut R) -> usize {
    let k = nu.len();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for t in 1..=k {
        acc += stick_mass(t, nu);
        if u < acc {
            return t;
        }
    }
    k
}

/// Draw from an inverse gamma with shape `a` and scale `b` (mean `b / (a-1)`).
pub fn sample_inverse_gamma<R: Rng>(rng: &mut R, a: f64, b: f64) -> f64 {
    // If X ~ Gamma(shape a, rate b) then 1/X ~ IG(a, b).
    let g: f64 = Gamma::new(a, 1.0 / b).expect("positive shapes").sample(rng);
    (1.0 / g).max(f64::MIN_POSITIVE)
}

/// Draw a `p x k` matrix of local scales from `0.5 N(1,1) + 0.5 N(-1,1)`.
/// The mixture has mean 0 and variance 2.
pub fn sample_local_scales<R: Rng>(p: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(p, k, |_, _| sample_local_scale(rng))
}

/// One draw from the local-scale mixture.
pub fn sample_local_scale<R: Rng>(rng: &mut R) -> f64 {
    let center = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let z: f64 = StandardNormal.sample(rng);
    center + z
}

/// Probit path coefficients: one `d`-vector per tree level `1..=k-1` (the
/// root branch is deterministic, so level 0 carries none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbitCoeffs {
    coeffs: Vec<DVector<f64>>,
}

impl ProbitCoeffs {
    /// Wrap per-level coefficient vectors for levels `1..=coeffs.len()`.
    pub fn new(coeffs: Vec<DVector<f64>>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Dimension("probit coefficients need at least one level".into()));
        }
        let d = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != d) {
            return Err(Error::Dimension("probit coefficient dimensions differ across levels".into()));
        }
        if coeffs.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite probit coefficient".into()));
        }
        Ok(ProbitCoeffs { coeffs })
    }

    /// Number of levels carrying coefficients (`k - 1`).
    pub fn levels(&self) -> usize {
        self.coeffs.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.coeffs[0].len()
    }

    /// Coefficient vector of tree level `s` (`1 <= s <= levels`).
    pub fn level(&self, s: usize) -> &DVector<f64> {
        &self.coeffs[s - 1]
    }

    pub fn level_mut(&mut self, s: usize) -> &mut DVector<f64> {
        &mut self.coeffs[s - 1]
    }

    pub fn push_level(&mut self, coeff: DVector<f64>) {
        self.coeffs.push(coeff);
    }

    pub fn pop_level(&mut self) {
        self.coeffs.pop();
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.coeffs.iter()
    }
}

/// Draw standard-normal probit coefficients for levels `1..=k-1`.
pub fn sample_probit_coeffs<R: Rng>(hyper: &HyperParams, rng: &mut R) -> ProbitCoeffs {
    let coeffs = (1..hyper.k)
        .map(|_| DVector::from_fn(hyper.d, |_, _| StandardNormal.sample(rng)))
        .collect();
    ProbitCoeffs::new(coeffs).expect("k >= 2 validated")
}

/// Subject-level right-branch probability `Phi(x' b)` with the linear
/// predictor clamped at +-8 standard deviations.
pub fn path_prob(x: &DVector<f64>, coeff: &DVector<f64>) -> Result<f64> {
    if x.len() != coeff.len() {
        return Err(Error::Dimension(format!(
            "covariate dimension {} does not match coefficient dimension {}",
            x.len(),
            coeff.len()
        )));
    }
    Ok(probit_prob(x.dot(coeff)))
}

/// Draw noise variances: precisions from `Gamma(a_sigma, rate b_sigma)`,
/// returned as their reciprocals.
pub fn sample_noise_variances<R: Rng>(hyper: &HyperParams, p: usize, rng: &mut R) -> DVector<f64> {
    let gamma = Gamma::new(hyper.a_sigma, 1.0 / hyper.b_sigma).expect("validated hyper");
    DVector::from_iterator(p, (0..p).map(|_| 1.0 / gamma.sample(rng).max(f64::MIN_POSITIVE)))
}

/// Level-scale specification for prior collapse experiments: what drives
/// `E(gamma_s)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum GammaSpec {
    /// Deterministic `gamma_s = coeff * ratio^s`.
    Geometric { coeff: f64, ratio: f64 },
    /// Deterministic per-level scales, zero beyond the listed levels.
    Fixed(Vec<f64>),
    /// Constant scale at every level (not summable; rejected by the
    /// truncation scan).
    Constant(f64),
    /// The spike-and-slab stack; scales are drawn rather than deterministic.
    SpikeSlab(HyperParams),
}

impl GammaSpec {
    /// Expected scale at level `s`.
    pub fn mean(&self, s: usize) -> f64 {
        match self {
            GammaSpec::Geometric { coeff, ratio } => coeff * ratio.powi(s as i32),
            GammaSpec::Fixed(values) => values.get(s).copied().unwrap_or(0.0),
            GammaSpec::Constant(value) => *value,
            GammaSpec::SpikeSlab(hyper) => {
                // E(1 - spike prob at s) = (a_nu / (1 + a_nu))^s under the
                // corrected stick product, so the mean decays geometrically
                // to the spike floor vartheta * b_gamma / (a_gamma - 1).
                let r = hyper.a_nu / (1.0 + hyper.a_nu);
                let slab_mean = hyper.b_gamma / (hyper.a_gamma - 1.0);
                let decay = r.powi(s as i32);
                slab_mean * (decay + (1.0 - decay) * hyper.vartheta)
            }
        }
    }

    /// Draw the level scales for levels `0..=max_level`.
    pub fn sample_scales<R: Rng>(&self, max_level: usize, rng: &mut R) -> Vec<f64> {
        match self {
            GammaSpec::Geometric { .. } | GammaSpec::Fixed(_) | GammaSpec::Constant(_) => {
                (0..=max_level).map(|s| self.mean(s)).collect()
            }
            GammaSpec::SpikeSlab(hyper) => {
                let mut local = hyper.clone();
                local.k = max_level + 1;
                let (_, gamma) = sample_gamma_sequence(&local, rng);
                gamma.iter().copied().collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Block};
    use proptest::prelude::*;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        substream(seed, Block::SimParams, 0, 0)
    }

    #[test]
    fn spike_prob_examples() {
        let nu = vec![1.0, 0.2, 0.2];
        for s in 1..=3 {
            assert!((spike_prob(s, &nu) - 1.0).abs() < 1e-15);
        }
        let nu = vec![0.5; 4];
        assert!((spike_prob(2, &nu) - 0.75).abs() < 1e-15);
        assert_eq!(spike_prob(0, &nu), 0.0);
        // Finite truncation leaves residual mass.
        let nu = vec![0.3; 8];
        assert!(spike_prob(8, &nu) < 1.0);
    }

    #[test]
    fn printed_spike_prob_differs() {
        let nu = vec![0.5, 0.5];
        // Verbatim product m <= t double-counts 1 - nu_t.
        assert!((spike_prob_printed(1, &nu) - 0.25).abs() < 1e-15);
        assert!((spike_prob(1, &nu) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stick_masses_sum_to_one() {
        let nu = vec![0.4, 0.1, 0.8, 0.3];
        let total: f64 = (1..=4).map(|t| stick_mass(t, &nu)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_sequence_spike_rate_matches_spike_prob() {
        let hyper = HyperParams { k: 6, a_nu: 1.5, ..HyperParams::default() };
        let reps = 20_000;
        let mut spike_counts = vec![0usize; hyper.k];
        let mut prob_sums = vec![0.0f64; hyper.k];
        for rep in 0..reps {
            let mut r = substream(9, Block::SimParams, rep as u64, 0);
            let (state, _) = sample_gamma_sequence(&hyper, &mut r);
            for l in 0..hyper.k {
                spike_counts[l] += state.is_spike(l) as usize;
                prob_sums[l] += spike_prob(l, &state.nu);
            }
        }
        // Compare marginal spike frequency against the averaged spike_prob
        // for levels below the truncation boundary.
        for l in 0..hyper.k - 1 {
            let freq = spike_counts[l] as f64 / reps as f64;
            let expect = prob_sums[l] / reps as f64;
            let se = (expect * (1.0 - expect) / reps as f64).sqrt().max(1e-4);
            assert!(
                (freq - expect).abs() < 4.0 * se,
                "level {l}: freq {freq} vs spike_prob {expect}"
            );
        }
        assert_eq!(spike_counts[0], 0, "level 0 never spikes");
    }

    #[test]
    fn slab_level_count_matches_stick_rate() {
        // Expected number of slab levels is about a_nu when a_nu << k.
        let hyper = HyperParams { k: 40, a_nu: 3.0, ..HyperParams::default() };
        let reps = 10_000;
        let counts: Vec<f64> = (0..reps)
            .map(|rep| {
                let mut r = substream(17, Block::SimParams, rep as u64, 0);
                let (state, _) = sample_gamma_sequence(&hyper, &mut r);
                (0..hyper.k).filter(|&l| !state.is_spike(l)).count() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        // Level 0 is always slab and the stick sum starts at level 1, so the
        // truncated expectation is 1 + a_nu (1 - r^(k-1)).
        let r = hyper.a_nu / (1.0 + hyper.a_nu);
        let expect = 1.0 + hyper.a_nu * (1.0 - r.powi(hyper.k as i32 - 1));
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn spike_scale_shrinks_with_vartheta() {
        let hyper = HyperParams { vartheta: 1e-6, k: 12, a_nu: 1.0, ..HyperParams::default() };
        let mut r = rng(3);
        let mut spikes = Vec::new();
        let mut slabs = Vec::new();
        for _ in 0..400 {
            let (state, gamma) = sample_gamma_sequence(&hyper, &mut r);
            for l in 0..hyper.k {
                if state.is_spike(l) {
                    spikes.push(gamma[l]);
                } else {
                    slabs.push(gamma[l]);
                }
            }
        }
        let spike_mean = spikes.iter().sum::<f64>() / spikes.len() as f64;
        let slab_mean = slabs.iter().sum::<f64>() / slabs.len() as f64;
        assert!(spike_mean < 1e-4 * slab_mean, "spike {spike_mean} vs slab {slab_mean}");
    }

    #[test]
    fn gamma_mean_nonincreasing_in_level() {
        let hyper = HyperParams { k: 8, a_nu: 1.0, vartheta: 0.02, ..HyperParams::default() };
        let reps = 30_000;
        let mut sums = vec![0.0f64; hyper.k];
        for rep in 0..reps {
            let mut r = substream(23, Block::SimParams, rep as u64, 0);
            let (_, gamma) = sample_gamma_sequence(&hyper, &mut r);
            for l in 0..hyper.k {
                sums[l] += gamma[l];
            }
        }
        // Means decrease in expectation; allow Monte Carlo slack via the
        // analytic means.
        for l in 0..hyper.k - 1 {
            let spec = GammaSpec::SpikeSlab(hyper.clone());
            assert!(spec.mean(l + 1) < spec.mean(l));
        }
        let first = sums[1] / reps as f64;
        let last = sums[hyper.k - 1] / reps as f64;
        assert!(last < first, "empirical mean should decay: {first} -> {last}");
    }

    #[test]
    fn local_scale_moments() {
        let mut r = rng(12);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_local_scale(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * (2.0f64 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 2.0).abs() < 0.05 * 2.0, "variance {var}");
    }

    #[test]
    fn local_scales_reproducible() {
        let a = sample_local_scales(4, 3, &mut rng(7));
        let b = sample_local_scales(4, 3, &mut rng(7));
        assert_eq!(a, b);
    }

    #[test]
    fn path_prob_examples() {
        let x = DVector::from_vec(vec![1.0]);
        let zero = DVector::from_vec(vec![0.0]);
        assert!((path_prob(&x, &zero).unwrap() - 0.5).abs() < 1e-15);
        let b = DVector::from_vec(vec![1.6448536]);
        assert!((path_prob(&x, &b).unwrap() - 0.95).abs() < 1e-6);
        let big = DVector::from_vec(vec![50.0]);
        let p = path_prob(&x, &big).unwrap();
        assert!(p < 1.0 && p > 0.0);
        assert!(path_prob(&DVector::from_vec(vec![1.0, 2.0]), &zero).is_err());
    }

    #[test]
    fn noise_precision_moments() {
        let hyper = HyperParams { a_sigma: 1.0, b_sigma: 1.0, ..HyperParams::default() };
        let mut r = rng(4);
        let n = 100_000;
        let precisions: Vec<f64> = (0..n)
            .map(|_| 1.0 / sample_noise_variances(&hyper, 1, &mut r)[0])
            .collect();
        let mean = precisions.iter().sum::<f64>() / n as f64;
        let var = precisions.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "precision mean {mean}");
        assert!(precisions.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn gamma_spec_means() {
        let geo = GammaSpec::Geometric { coeff: 1.0, ratio: 0.5 };
        assert!((geo.mean(3) - 0.125).abs() < 1e-15);
        let fixed = GammaSpec::Fixed(vec![1.0, 0.5, 0.2, 0.1]);
        assert_eq!(fixed.mean(9), 0.0);
        let constant = GammaSpec::Constant(0.7);
        assert_eq!(constant.mean(100), 0.7);
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { c: 3, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams { vartheta: 1.2, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams { a_gamma: 0.9, ..HyperParams::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_spike_prob_nondecreasing(nu in proptest::collection::vec(0.001f64..0.999, 1..12)) {
            let mut prev = 0.0;
            for s in 0..=nu.len() {
                let p = spike_prob(s, &nu);
                prop_assert!(p >= prev - 1e-15);
                prop_assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }
}
