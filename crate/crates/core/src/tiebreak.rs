//! Greedy action selection with explicit tie handling.
//!
//! Every argmax in the crate goes through [`select_action`], so the same
//! tie semantics apply to policy improvement, Frank-Wolfe linearization and
//! exact policy iteration.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Relative gap under which two candidate values are treated as tied.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    SmallestIndex,
    LargestIndex,
    /// Pick the given action whenever it is among the maximizers, else the
    /// smallest tied index.
    PreferAction(usize),
}

impl Default for TieBreak {
    fn default() -> Self {
        TieBreak::SmallestIndex
    }
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TieBreak::SmallestIndex => write!(f, "smallest"),
            TieBreak::LargestIndex => write!(f, "largest"),
            TieBreak::PreferAction(a) => write!(f, "prefer:{a}"),
        }
    }
}

impl FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smallest" | "smallest-index" => Ok(TieBreak::SmallestIndex),
            "largest" | "largest-index" => Ok(TieBreak::LargestIndex),
            // counterexample vocabulary: Move = 0, Stay = 1
            "prefer-move" => Ok(TieBreak::PreferAction(0)),
            "prefer-stay" => Ok(TieBreak::PreferAction(1)),
            other => match other.strip_prefix("prefer:") {
                Some(a) => a
                    .parse()
                    .map(TieBreak::PreferAction)
                    .map_err(|_| format!("bad action index in tie-break rule '{other}'")),
                None => Err(format!(
                    "unknown tie-break rule '{other}' (expected smallest, largest, prefer:<a>, prefer-stay, prefer-move)"
                )),
            },
        }
    }
}

/// Whether `value` is tied with the row maximum `best` under relative tolerance `tol`.
#[inline]
pub fn is_tied(best: f64, value: f64, tol: f64) -> bool {
    best - value <= tol * best.abs().max(value.abs())
}

/// Index of a maximizing entry of `row`, ties resolved by `rule`.
///
/// Panics on an empty row.
pub fn select_action(row: &[f64], rule: TieBreak, tol: f64) -> usize {
    assert!(!row.is_empty(), "select_action on empty row");
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied = row
        .iter()
        .enumerate()
        .filter(|(_, &v)| is_tied(best, v, tol))
        .map(|(a, _)| a);
    match rule {
        TieBreak::SmallestIndex => tied.next().expect("maximum is always tied with itself"),
        TieBreak::LargestIndex => tied.last().expect("maximum is always tied with itself"),
        TieBreak::PreferAction(pref) => {
            let tied: Vec<usize> = tied.collect();
            if tied.contains(&pref) {
                pref
            } else {
                tied[0]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_maximum_wins() {
        assert_eq!(select_action(&[1.0, 0.0], TieBreak::SmallestIndex, DEFAULT_TIE_TOL), 0);
        assert_eq!(select_action(&[1.0, 0.0], TieBreak::PreferAction(1), DEFAULT_TIE_TOL), 0);
        assert_eq!(select_action(&[-3.0, -1.0, -2.0], TieBreak::LargestIndex, 0.0), 1);
    }

    #[test]
    fn tie_semantics() {
        let row = [1.0, 1.0];
        assert_eq!(select_action(&row, TieBreak::SmallestIndex, DEFAULT_TIE_TOL), 0);
        assert_eq!(select_action(&row, TieBreak::LargestIndex, DEFAULT_TIE_TOL), 1);
        assert_eq!(select_action(&row, TieBreak::PreferAction(1), DEFAULT_TIE_TOL), 1);
        // rounding-level difference is still a tie
        let row = [-5000.0, -5000.0 + 1e-10];
        assert_eq!(select_action(&row, TieBreak::PreferAction(0), DEFAULT_TIE_TOL), 0);
        // zeros tie with each other
        assert_eq!(select_action(&[0.0, 0.0], TieBreak::PreferAction(1), DEFAULT_TIE_TOL), 1);
    }

    #[test]
    fn parse_round_trip() {
        for rule in [TieBreak::SmallestIndex, TieBreak::LargestIndex, TieBreak::PreferAction(3)] {
            assert_eq!(rule.to_string().parse::<TieBreak>().unwrap(), rule);
        }
        assert_eq!("prefer-stay".parse::<TieBreak>().unwrap(), TieBreak::PreferAction(1));
        assert!("bogus".parse::<TieBreak>().is_err());
    }
}
