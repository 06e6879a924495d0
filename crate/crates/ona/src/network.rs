//! Directed co-occurrence accumulation over a moving window of turns.

use serde::{Deserialize, Serialize};

use crate::ingest::{CodedTurn, Conversation};
use crate::OnaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulation {
    /// Every (ground turn, response turn, code pair) adds one.
    #[default]
    Summed,
    /// A code pair counts at most once per response turn.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OnaNetwork {
    pub unit_id: String,
    /// Number of codes K; `adjacency` has K² entries, ground-major.
    pub codes: usize,
    pub adjacency: Vec<f64>,
    pub normalized: bool,
    /// Set when normalization met a zero vector; such units are left out
    /// of projections.
    #[serde(default)]
    pub excluded: bool,
    /// How many turns carried each code.
    pub code_counts: Vec<u64>,
}

impl OnaNetwork {
    pub fn zero(unit_id: impl Into<String>, codes: usize) -> Self {
        Self {
            unit_id: unit_id.into(),
            codes,
            adjacency: vec![0.0; codes * codes],
            normalized: false,
            excluded: false,
            code_counts: vec![0; codes],
        }
    }

    pub fn weight(&self, ground: usize, response: usize) -> f64 {
        self.adjacency[ground * self.codes + response]
    }

    pub fn norm(&self) -> f64 {
        self.adjacency.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.adjacency.iter().all(|w| *w == 0.0)
    }

    /// Elementwise sum, for group aggregates.
    pub fn add(&mut self, other: &OnaNetwork) {
        for (a, b) in self.adjacency.iter_mut().zip(&other.adjacency) {
            *a += b;
        }
        for (a, b) in self.code_counts.iter_mut().zip(&other.code_counts) {
            *a += b;
        }
    }
}

/// Accumulates one conversation. For each response turn, the grounds are
/// the up to `window - 1` turns before it.
pub fn accumulate_turns(
    unit_id: &str,
    turns: &[CodedTurn],
    codes: usize,
    window: usize,
    mode: Accumulation,
) -> Result<OnaNetwork, OnaError> {
    if window == 0 {
        return Err(OnaError::Window);
    }
    let mut net = OnaNetwork::zero(unit_id, codes);
    let mut seen = vec![false; codes * codes];
    for (r, response) in turns.iter().enumerate() {
        if let Some(&bad) = response.codes.iter().find(|&&c| c >= codes) {
            return Err(OnaError::UnknownCode { line: 0, code: format!("index {bad}") });
        }
        for &c in &response.codes {
            net.code_counts[c] += 1;
        }
        seen.iter_mut().for_each(|s| *s = false);
        for ground in &turns[r.saturating_sub(window - 1)..r] {
            for &g in &ground.codes {
                for &c in &response.codes {
                    let i = g * codes + c;
                    match mode {
                        Accumulation::Summed => net.adjacency[i] += 1.0,
                        Accumulation::Binary if !seen[i] => {
                            seen[i] = true;
                            net.adjacency[i] += 1.0;
                        }
                        Accumulation::Binary => {}
                    }
                }
            }
        }
    }
    Ok(net)
}

/// One network per conversation; conversations never share grounds.
pub fn accumulate(
    conversations: &[Conversation],
    codes: usize,
    window: usize,
    mode: Accumulation,
) -> Result<Vec<OnaNetwork>, OnaError> {
    conversations.iter().map(|c| accumulate_turns(&c.id, &c.turns, codes, window, mode)).collect()
}

/// Scales to unit Euclidean norm. A zero vector is returned unchanged and
/// flagged as excluded.
pub fn normalize(net: &OnaNetwork) -> OnaNetwork {
    let mut out = net.clone();
    let norm = net.norm();
    out.normalized = true;
    if norm == 0.0 {
        out.excluded = true;
    } else {
        out.adjacency.iter_mut().for_each(|w| *w /= norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn turns(codes: &[&[usize]]) -> Vec<CodedTurn> {
        codes
            .iter()
            .enumerate()
            .map(|(i, c)| CodedTurn {
                conversation_id: "c".into(),
                seq: i as u64,
                speaker: "D1".into(),
                directed_to_agent: false,
                codes: c.iter().copied().collect::<BTreeSet<_>>(),
            })
            .collect()
    }

    #[test]
    fn worked_example() {
        let net = accumulate_turns("c", &turns(&[&[0], &[1], &[0]]), 2, 4, Accumulation::Summed).unwrap();
        assert_eq!(net.weight(0, 1), 1.0);
        assert_eq!(net.weight(0, 0), 1.0);
        assert_eq!(net.weight(1, 0), 1.0);
        assert_eq!(net.weight(1, 1), 0.0);
        assert_eq!(net.code_counts, vec![2, 1]);
    }

    #[test]
    fn within_turn_pairs_do_not_count() {
        let net = accumulate_turns("c", &turns(&[&[0, 1]]), 2, 4, Accumulation::Summed).unwrap();
        assert!(net.is_zero());
    }

    #[test]
    fn window_of_one_has_no_grounds() {
        let net = accumulate_turns("c", &turns(&[&[0], &[1]]), 2, 1, Accumulation::Summed).unwrap();
        assert!(net.is_zero());
        assert!(matches!(accumulate_turns("c", &[], 2, 0, Accumulation::Summed), Err(OnaError::Window)));
    }

    #[test]
    fn binary_counts_each_pair_once_per_response() {
        let t = turns(&[&[0], &[0], &[1]]);
        let summed = accumulate_turns("c", &t, 2, 4, Accumulation::Summed).unwrap();
        let binary = accumulate_turns("c", &t, 2, 4, Accumulation::Binary).unwrap();
        assert_eq!(summed.weight(0, 1), 2.0);
        assert_eq!(binary.weight(0, 1), 1.0);
    }

    #[test]
    fn three_four_five() {
        let mut net = OnaNetwork::zero("u", 2);
        net.adjacency = vec![3.0, 4.0, 0.0, 0.0];
        let n = normalize(&net);
        assert_eq!(n.adjacency, vec![0.6, 0.8, 0.0, 0.0]);
        assert!(!n.excluded);
        let z = normalize(&OnaNetwork::zero("z", 2));
        assert!(z.excluded && z.is_zero());
    }
}
