//! Canonical addressing of tree nodes and path/stop encodings.
//!
//! A subject's cluster is a binary path vector `rho` of length `k` (the
//! truncation level): the root bit is always 1, interior bits record
//! right/left turns, and the own-level bit of the stopping node is 1 with
//! trailing zeros after it. The canonical cluster label is the [`StopPattern`]:
//! the path bits after the root with trailing zeros stripped. The empty
//! pattern is the background cluster, the catch-all kernel that absorbs paths
//! that never stop within the truncation.
//!
//! The node view indexes kernels by `(level s, within-level index h)`. The two
//! views are bridged by turn-bit sequences: [`tau`] implements the printed
//! index rule, while [`StopPattern::turns_from_root`] gives the turn sequence
//! of a stopped path with the root turn fixed to "right" (the path's root bit
//! is always 1).

use crate::{Error, Result};
use std::fmt;

/// Canonical cluster label: a bit string that is empty (background) or ends
/// in 1. Bit `t` (1-based) is the turn taken at tree level `t`; the final 1
/// marks the stopping level.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StopPattern {
    bits: Vec<u8>,
}

impl StopPattern {
    /// The background cluster (empty pattern).
    pub fn background() -> Self {
        StopPattern { bits: Vec::new() }
    }

    /// Build a pattern from bits; the last bit, if any, must be 1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("pattern bits must be 0 or 1".into()));
        }
        if let Some(&last) = bits.last() {
            if last != 1 {
                return Err(Error::Domain("stop pattern must end in 1".into()));
            }
        }
        Ok(StopPattern { bits })
    }

    /// Parse from a '0'/'1' string; "" is the background.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(Error::Data(format!("invalid pattern character {c:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        StopPattern::new(bits)
    }

    pub fn is_background(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Tree level of the cluster: pattern length, or `None` for the
    /// background (conceptually infinite level).
    pub fn level(&self) -> Option<usize> {
        if self.is_background() {
            None
        } else {
            Some(self.bits.len())
        }
    }

    /// Longest proper prefix ending in 1, or the background if none exists.
    /// Errors on the background itself, which has no parent.
    pub fn parent(&self) -> Result<StopPattern> {
        if self.is_background() {
            return Err(Error::Domain("background pattern has no parent".into()));
        }
        let mut bits = self.bits.clone();
        bits.pop();
        while let Some(&last) = bits.last() {
            if last == 1 {
                break;
            }
            bits.pop();
        }
        Ok(StopPattern { bits })
    }

    /// Whether `ancestor` lies on this pattern's parent chain (the background
    /// is an ancestor of every non-background pattern).
    pub fn has_ancestor(&self, ancestor: &StopPattern) -> bool {
        let mut cur = self.clone();
        while let Ok(p) = cur.parent() {
            if p == *ancestor {
                return true;
            }
            cur = p;
        }
        false
    }

    /// Turn sequence of the node this pattern stops at, root turn included:
    /// `(1, b_1, ..., b_{s-1})` for a pattern `(b_1, ..., b_{s-1}, 1)` at
    /// level `s`. The root turn is always right because the path's root bit
    /// is always 1. Errors on the background, which stops at no node.
    pub fn turns_from_root(&self) -> Result<Vec<u8>> {
        if self.is_background() {
            return Err(Error::Domain("background pattern has no node turns".into()));
        }
        let s = self.bits.len();
        let mut turns = Vec::with_capacity(s);
        turns.push(1);
        turns.extend_from_slice(&self.bits[..s - 1]);
        Ok(turns)
    }

    /// All patterns encodable at truncation `k`: the background plus every
    /// 1-terminated bit string of length 1..=k-1. There are 2^(k-1) of them.
    pub fn all_up_to(k: usize) -> Vec<StopPattern> {
        let mut out = vec![StopPattern::background()];
        for len in 1..k {
            for prefix in 0u64..(1 << (len - 1)) {
                let mut bits: Vec<u8> = (0..len - 1).map(|t| ((prefix >> t) & 1) as u8).collect();
                bits.push(1);
                out.push(StopPattern { bits });
            }
        }
        out
    }
}

impl fmt::Display for StopPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Binary truncated path vector `rho` of length `k`; entry `t+1` (1-based)
/// carries the turn/stop bit associated with tree level `t`, and the first
/// entry (the root) is always 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathVector {
    bits: Vec<u8>,
}

impl PathVector {
    /// Validate and wrap raw bits (0-based storage of the 1-based entries).
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits[0] != 1 {
            return Err(Error::Domain("path vector must start with the root bit 1".into()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("path bits must be 0 or 1".into()));
        }
        Ok(PathVector { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid path always holds at least the root bit
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bit(&self, idx: usize) -> u8 {
        self.bits[idx]
    }

    /// Set a non-root bit (index >= 1 in 0-based storage).
    pub fn set_bit(&mut self, idx: usize, value: u8) {
        assert!(idx >= 1 && idx < self.bits.len(), "root bit is immutable");
        assert!(value <= 1);
        self.bits[idx] = value;
    }

    /// Grow the truncation by one trailing bit.
    pub fn push_bit(&mut self, value: u8) {
        assert!(value <= 1);
        self.bits.push(value);
    }

    /// Shrink the truncation by one level; the dropped bit must be 0 so the
    /// encoded cluster is unchanged.
    pub fn pop_bit(&mut self) {
        assert!(self.bits.len() >= 2, "cannot drop the root bit");
        let dropped = self.bits.pop().expect("non-empty");
        assert_eq!(dropped, 0, "cannot drop an occupied level");
    }

    /// Parse from a '0'/'1' string of length k.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(Error::Data(format!("invalid path character {c:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        PathVector::new(bits)
    }
}

impl fmt::Display for PathVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl serde::Serialize for StopPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for StopPattern {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(deserializer)?;
        StopPattern::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl serde::Serialize for PathVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for PathVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(deserializer)?;
        PathVector::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Printed node-index rule: 1 iff `ceil(h / 2^(s-t))` is even.
///
/// The clause "or s = 0" of the source rule is vacuous here since `t < s`
/// forces `s >= 1`; the rule is implemented verbatim. Note the top turn
/// (`t = 0`) is 0 for every `h`, and sibling pairs (same `ceil(h/2)`) share
/// all bits with `t < s`.
pub fn tau(s: usize, h: u64, t: usize) -> Result<u8> {
    if t >= s {
        return Err(Error::Domain(format!("tau requires t < s, got t={t}, s={s}")));
    }
    if s >= 64 {
        return Err(Error::Domain(format!("level {s} out of range")));
    }
    if h < 1 || h > (1u64 << s) {
        return Err(Error::Domain(format!("index h={h} out of range at level {s}")));
    }
    let q = (h + (1u64 << (s - t)) - 1) >> (s - t); // ceil(h / 2^(s-t))
    Ok((q % 2 == 0) as u8)
}

/// All printed turn bits `(tau(s,h,0), ..., tau(s,h,s-1))` of node `(s, h)`.
pub fn tau_bits(s: usize, h: u64) -> Result<Vec<u8>> {
    (0..s).map(|t| tau(s, h, t)).collect()
}

/// Within-level index of the node whose printed turn bits at `t = 1..s-1`
/// equal `turns[1..]` (entry 0, the root turn, is not representable by the
/// printed rule and is ignored). `sibling` selects between the two
/// parameter-identical siblings.
pub fn node_index_for_turns(turns: &[u8], sibling: u8) -> Result<u64> {
    let s = turns.len();
    if s == 0 || s >= 63 {
        return Err(Error::Domain("turn sequence length out of range".into()));
    }
    let mut h_minus_1 = sibling as u64;
    for (t, &b) in turns.iter().enumerate().skip(1) {
        h_minus_1 |= (b as u64) << (s - t);
    }
    Ok(h_minus_1 + 1)
}

/// Deterministic encoding of a realized path: root bit 1, the pattern bits,
/// then zeros up to length `k`. The background encodes as `(1, 0, ..., 0)`.
pub fn encode_node(pattern: &StopPattern, k: usize) -> Result<PathVector> {
    if pattern.bits().len() + 1 > k {
        return Err(Error::Truncation(format!(
            "pattern of length {} does not fit truncation k={k}",
            pattern.bits().len()
        )));
    }
    let mut bits = vec![0u8; k];
    bits[0] = 1;
    bits[1..=pattern.bits().len()].copy_from_slice(pattern.bits());
    Ok(PathVector { bits })
}

/// Inverse of [`encode_node`]: strips the root bit and trailing zeros.
pub fn decode(rho: &PathVector) -> StopPattern {
    let mut bits: Vec<u8> = rho.bits()[1..].to_vec();
    while let Some(&last) = bits.last() {
        if last == 1 {
            break;
        }
        bits.pop();
    }
    StopPattern { bits }
}

/// Expanded stop indicator: entry `s` (1-based) is
/// `rho_s + prod_{t >= s} (1 - rho_t)`, i.e. the path bit OR the indicator
/// that the path never turns right again. Always binary, pointwise >= rho,
/// and all-ones past the last 1 of rho.
pub fn rho_tilde(rho: &PathVector) -> Vec<u8> {
    rho_tilde_bits(rho.bits())
}

/// [`rho_tilde`] on raw path bits; `out` is overwritten in place by
/// [`rho_tilde_bits_into`] for hot loops.
pub fn rho_tilde_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len()];
    rho_tilde_bits_into(bits, &mut out);
    out
}

pub fn rho_tilde_bits_into(bits: &[u8], out: &mut [u8]) {
    debug_assert_eq!(bits.len(), out.len());
    let mut tail_all_zero = 1u8;
    for s in (0..bits.len()).rev() {
        tail_all_zero &= 1 - bits[s];
        out[s] = bits[s] | tail_all_zero;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pat(s: &str) -> StopPattern {
        StopPattern::parse(s).unwrap()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(2, 3, 1).unwrap(), 1); // ceil(3/2) = 2 even
        assert_eq!(tau(2, 1, 1).unwrap(), 0); // ceil(1/2) = 1 odd
        assert_eq!(tau(2, 3, 0).unwrap(), 0); // ceil(3/4) = 1 odd
    }

    #[test]
    fn tau_rejects_out_of_range() {
        assert!(tau(2, 5, 1).is_err());
        assert!(tau(2, 0, 1).is_err());
        assert!(tau(2, 3, 2).is_err());
    }

    #[test]
    fn encode_examples() {
        let enc = |p: &StopPattern, k| encode_node(p, k).unwrap().bits().to_vec();
        assert_eq!(enc(&StopPattern::background(), 4), vec![1, 0, 0, 0]);
        assert_eq!(enc(&pat("1"), 4), vec![1, 1, 0, 0]);
        assert_eq!(enc(&pat("01"), 5), vec![1, 0, 1, 0, 0]);
        assert!(encode_node(&pat("111"), 3).is_err());
    }

    #[test]
    fn decode_examples() {
        let d = |bits: Vec<u8>| decode(&PathVector::new(bits).unwrap());
        assert_eq!(d(vec![1, 0, 1, 0, 0]), pat("01"));
        assert_eq!(d(vec![1, 0, 0, 0]), StopPattern::background());
        assert_eq!(d(vec![1, 1, 1, 1]), pat("111"));
        assert!(PathVector::new(vec![0, 1, 0]).is_err());
    }

    #[test]
    fn rho_tilde_examples() {
        let rt = |bits: Vec<u8>| rho_tilde(&PathVector::new(bits).unwrap());
        assert_eq!(rt(vec![1, 0, 1, 0, 0]), vec![1, 0, 1, 1, 1]);
        assert_eq!(rt(vec![1, 0, 0, 0]), vec![1, 1, 1, 1]);
        assert_eq!(rt(vec![1, 1, 1, 1]), vec![1, 1, 1, 1]);
    }

    #[test]
    fn parent_examples() {
        assert_eq!(pat("01").parent().unwrap(), StopPattern::background());
        assert_eq!(pat("101").parent().unwrap(), pat("1"));
        assert_eq!(pat("1").parent().unwrap(), StopPattern::background());
        assert!(StopPattern::background().parent().is_err());
    }

    #[test]
    fn node_level_examples() {
        assert_eq!(StopPattern::background().level(), None);
        assert_eq!(pat("1").level(), Some(1));
        assert_eq!(pat("01").level(), Some(2));
    }

    #[test]
    fn round_trip_exhaustive_small_k() {
        for k in 2..=12usize {
            for p in StopPattern::all_up_to(k) {
                let rho = encode_node(&p, k).unwrap();
                assert_eq!(decode(&rho), p);
            }
        }
        assert_eq!(StopPattern::all_up_to(12).len(), 1 << 11);
    }

    #[test]
    fn parent_reaches_background_within_level_steps() {
        for p in StopPattern::all_up_to(9) {
            if p.is_background() {
                continue;
            }
            let mut cur = p.clone();
            let mut steps = 0usize;
            while !cur.is_background() {
                let parent = cur.parent().unwrap();
                match (parent.level(), cur.level()) {
                    (Some(lp), Some(lc)) => assert!(lp < lc),
                    (None, Some(_)) => {}
                    _ => unreachable!(),
                }
                cur = parent;
                steps += 1;
            }
            assert!(steps <= p.level().unwrap());
        }
    }

    #[test]
    fn sibling_pairs_share_tau_bits() {
        // Exhaustive for s <= 6: same ceil(h/2) implies identical tau bits.
        for s in 1..=6usize {
            for h in (1..=(1u64 << s)).step_by(2) {
                let a = tau_bits(s, h).unwrap();
                let b = tau_bits(s, h + 1).unwrap();
                assert_eq!(a, b, "siblings {h}, {} at level {s}", h + 1);
            }
        }
    }

    #[test]
    fn node_index_round_trips_turns() {
        for s in 1..=6usize {
            for h in 1..=(1u64 << s) {
                let bits = tau_bits(s, h).unwrap();
                // The printed rule cannot express the root turn; entry 0 is 0.
                assert_eq!(bits[0], 0);
                for sibling in 0..2u8 {
                    let h2 = node_index_for_turns(&bits, sibling).unwrap();
                    assert_eq!(tau_bits(s, h2).unwrap(), bits);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn prop_round_trip(bits in proptest::collection::vec(0u8..2, 0..10), k in 11usize..14) {
            let mut bits = bits;
            bits.push(1);
            let p = StopPattern::new(bits).unwrap();
            let rho = encode_node(&p, k).unwrap();
            prop_assert_eq!(decode(&rho), p);
        }

        #[test]
        fn prop_rho_tilde_dominates(bits in proptest::collection::vec(0u8..2, 1..12)) {
            let mut bits = bits;
            bits[0] = 1;
            let rho = PathVector::new(bits).unwrap();
            let rt = rho_tilde(&rho);
            let last_one = (0..rho.len()).rev().find(|&i| rho.bit(i) == 1).unwrap();
            for i in 0..rho.len() {
                prop_assert!(rt[i] >= rho.bit(i));
                if i < last_one {
                    prop_assert_eq!(rt[i], rho.bit(i));
                }
                if i > last_one {
                    prop_assert_eq!(rt[i], 1);
                }
            }
        }
    }
}
