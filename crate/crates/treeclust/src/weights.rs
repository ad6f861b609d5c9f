//! Branch-probability sequences and level weights.
//!
//! The weight process is driven by independent branch probabilities `w_s`
//! with `w_0 = 1`: `w_s` is the probability of turning right from level `s`
//! to `s+1`, and stopping follows a stick-breaking construction whose factor
//! at level `s` is `w_{s+1}`. Two formulations coexist:
//!
//! - the node-view formula [`pi_node`] over `(s, h)` indices, whose printed
//!   turn rule zeroes every weight at `s >= 1` through a `1 - w_0 = 0`
//!   factor; the amended variant ([`WeightRule::Amended`]) treats the top
//!   turn factor as `w_0 = 1` instead, which restores the intended
//!   normalization (see [`WeightRule`]);
//! - the canonical path view [`canonical_pattern_prob`], a plain product of
//!   independent Bernoulli branch terms over the encoded path, which sums to
//!   one exactly over all stop patterns and the background.

use crate::tree::{encode_node, tau, StopPattern};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Which top-turn convention the node-view weight formula uses.
///
/// `Printed` follows the source rule verbatim ("even or s = 0"): for levels
/// `s >= 1` the factor at `t = 0` is `1 - w_0 = 0`, so every node weight
/// vanishes. `Amended` reads the condition as "even or t = 0", making the
/// root factor `w_0 = 1`; under this variant the level weights match the
/// stick-breaking stop probabilities and sum to one with the background.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRule {
    Printed,
    Amended,
}

/// Branch probabilities `w` of length `k`: `w[0] = 1` exactly and every
/// later entry strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    w: Vec<f64>,
}

impl WeightSequence {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w[0] != 1.0 {
            return Err(Error::Domain("weight sequence must start with w_0 = 1".into()));
        }
        if w.iter().skip(1).any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::Domain(
                "branch probabilities beyond the root must lie strictly in (0, 1)".into(),
            ));
        }
        Ok(WeightSequence { w })
    }

    /// Truncation level (number of stored weights).
    pub fn truncation(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, s: usize) -> f64 {
        self.w[s]
    }
}

/// Independent Beta shapes `(a_s, b_s)` for `w_s`, `s = 1..=len`.
#[derive(Clone, Debug)]
pub struct BetaSpec {
    shapes: Vec<(f64, f64)>,
}

impl BetaSpec {
    pub fn new(shapes: Vec<(f64, f64)>) -> Result<Self> {
        if shapes.iter().any(|&(a, b)| a <= 0.0 || b <= 0.0) {
            return Err(Error::Domain("Beta shapes must be positive".into()));
        }
        Ok(BetaSpec { shapes })
    }

    /// Truncation implied by the spec: one root weight plus the shaped levels.
    pub fn truncation(&self) -> usize {
        self.shapes.len() + 1
    }

    /// Prior mean of `w_s` (`s >= 1`).
    pub fn mean(&self, s: usize) -> f64 {
        let (a, b) = self.shapes[s - 1];
        a / (a + b)
    }

    /// The sequence of prior means with the root weight prepended, clamped
    /// away from the open-interval bounds so it forms a valid sequence.
    pub fn mean_sequence(&self) -> WeightSequence {
        let mut w = vec![1.0];
        w.extend((1..self.truncation()).map(|s| self.mean(s).clamp(1e-12, 1.0 - 1e-12)));
        WeightSequence { w }
    }

    /// Draw a weight sequence from the independent Beta priors.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> WeightSequence {
        let mut w = vec![1.0];
        for &(a, b) in &self.shapes {
            let draw: f64 = Beta::new(a, b).expect("validated shapes").sample(rng);
            w.push(draw.clamp(1e-12, 1.0 - 1e-12));
        }
        WeightSequence { w }
    }
}

/// Weight of node `(s, h)` under the stick-breaking stop construction with
/// infinite products truncated at `k - 1`:
/// `w_{s+1} * prod_{q=s+2}^{k-1} (1 - w_q) * prod_{t=0}^{s} w~_ated`.
pub fn pi_node(s: usize, h: u64, w: &WeightSequence, rule: WeightRule) -> Result<f64> {
    let k = w.truncation();
    if s + 2 > k {
        return Err(Error::Truncation(format!(
            "level {s} requires w_{} beyond truncation k={k}",
            s + 1
        )));
    }
    if h < 1 || h > (1u64 << s) {
        return Err(Error::Domain(format!("index h={h} out of range at level {s}")));
    }
    let mut value = w.get(s + 1);
    for q in (s + 2)..k {
        value *= 1.0 - w.get(q);
    }
    for t in 0..=s {
        let even = if t < s {
            tau(s, h, t)? == 1
        } else {
            // t = s: ceil(h / 2^0) = h itself.
            h % 2 == 0
        };
        let right = match rule {
            WeightRule::Printed => even || s == 0,
            WeightRule::Amended => even || t == 0,
        };
        value *= if right { w.get(t) } else { 1.0 - w.get(t) };
    }
    Ok(value)
}

/// Total weight of level `s`: the sum of [`pi_node`] over `h = 1..=2^s`.
pub fn level_weight(s: usize, w: &WeightSequence, rule: WeightRule) -> Result<f64> {
    (1..=(1u64 << s)).map(|h| pi_node(s, h, w, rule)).sum()
}

/// Background weight `prod_{q=1}^{k-1} (1 - w_q)`: the mass of paths that
/// never stop within the truncation.
pub fn pi_background(w: &WeightSequence) -> f64 {
    (1..w.truncation()).map(|q| 1.0 - w.get(q)).product()
}

/// Probability of a stop pattern under the canonical path encoding: the
/// product of independent Bernoulli branch terms
/// `prod_{t=1}^{k-1} w_t^{rho_{t+1}} (1 - w_t)^{1 - rho_{t+1}}`.
/// The background pattern reproduces [`pi_background`] exactly.
pub fn canonical_pattern_prob(pattern: &StopPattern, w: &WeightSequence) -> Result<f64> {
    let k = w.truncation();
    let rho = encode_node(pattern, k)?;
    let mut value = 1.0;
    for t in 1..k {
        value *= if rho.bit(t) == 1 { w.get(t) } else { 1.0 - w.get(t) };
    }
    Ok(value)
}

/// Expected total weight of level `s` under independent Beta priors, by
/// plugging the prior means into the node-view product (each `w_t` appears
/// at most once per factor, so the expectation factorizes).
pub fn expected_level_weight(s: usize, prior: &BetaSpec, rule: WeightRule) -> Result<f64> {
    if s < 1 {
        return Err(Error::Domain("expected level weight requires s >= 1".into()));
    }
    level_weight(s, &prior.mean_sequence(), rule)
}

/// Absolute deviation of the canonical pattern probabilities from total mass
/// one, summed over every pattern encodable at the truncation (background
/// included).
pub fn normalization_check(w: &WeightSequence) -> f64 {
    let total: f64 = StopPattern::all_up_to(w.truncation())
        .iter()
        .map(|p| canonical_pattern_prob(p, w).expect("patterns fit the truncation"))
        .sum();
    (total - 1.0).abs()
}
