//! Multi-click post-processing.
//!
//! | pattern                       | decision            |
//! |-------------------------------|---------------------|
//! | single click on h, v, d or a  | that outcome        |
//! | h and v only                  | random h or v       |
//! | d and a only                  | random d or a       |
//! | no click                      | no click            |
//! | anything else                 | discard             |

use crate::receiver::{Basis, DetectorId};

/// Raw click probability of each detector, indexed by [`DetectorId`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawClickProbs {
    pub p: [f64; 4],
}

impl RawClickProbs {
    pub fn new(p: [f64; 4]) -> Self {
        debug_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)), "click probs {p:?}");
        Self { p }
    }

    pub fn get(&self, det: DetectorId) -> f64 {
        self.p[det.index()]
    }
}

/// Bob's decision after squashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SquashDecision {
    Outcome(DetectorId),
    Discard,
    NoClick,
}

impl SquashDecision {
    pub const ALL: [SquashDecision; 6] = [
        SquashDecision::Outcome(DetectorId::H),
        SquashDecision::Outcome(DetectorId::V),
        SquashDecision::Outcome(DetectorId::D),
        SquashDecision::Outcome(DetectorId::A),
        SquashDecision::Discard,
        SquashDecision::NoClick,
    ];

    pub fn index(self) -> usize {
        match self {
            SquashDecision::Outcome(d) => d.index(),
            SquashDecision::Discard => 4,
            SquashDecision::NoClick => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SquashDecision::Outcome(DetectorId::H) => "outcome_h",
            SquashDecision::Outcome(DetectorId::V) => "outcome_v",
            SquashDecision::Outcome(DetectorId::D) => "outcome_d",
            SquashDecision::Outcome(DetectorId::A) => "outcome_a",
            SquashDecision::Discard => "discard",
            SquashDecision::NoClick => "no_click",
        }
    }
}

/// Set of detectors that clicked in one bit slot; bit `i` is detector `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ClickPattern(pub u8);

impl ClickPattern {
    pub fn all() -> impl Iterator<Item = ClickPattern> {
        (0u8..16).map(ClickPattern)
    }

    pub fn clicked(self, det: DetectorId) -> bool {
        self.0 & (1 << det.index()) != 0
    }

    pub fn with(self, det: DetectorId) -> ClickPattern {
        ClickPattern(self.0 | (1 << det.index()))
    }

    /// Probability of this exact pattern for independent detectors.
    pub fn probability(self, probs: &RawClickProbs) -> f64 {
        DetectorId::ALL
            .iter()
            .map(|&d| {
                let p = probs.get(d);
                if self.clicked(d) {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }
}

/// Squashing map for one pattern, before the coin flip of a double click.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squashed {
    Single(DetectorId),
    /// Both detectors of one basis clicked; the outcome is a fair coin between them.
    Split(Basis),
    Discard,
    NoClick,
}

pub fn squash(pattern: ClickPattern) -> Squashed {
    let hv = Basis::Hv
        .detectors()
        .map(|d| pattern.clicked(d));
    let da = Basis::Da
        .detectors()
        .map(|d| pattern.clicked(d));
    let any_hv = hv[0] || hv[1];
    let any_da = da[0] || da[1];
    match (any_hv, any_da) {
        (false, false) => Squashed::NoClick,
        (true, true) => Squashed::Discard,
        (true, false) => match hv {
            [true, true] => Squashed::Split(Basis::Hv),
            [true, false] => Squashed::Single(DetectorId::H),
            _ => Squashed::Single(DetectorId::V),
        },
        (false, true) => match da {
            [true, true] => Squashed::Split(Basis::Da),
            [true, false] => Squashed::Single(DetectorId::D),
            _ => Squashed::Single(DetectorId::A),
        },
    }
}

/// Probability of every decision, by enumerating the 16 click patterns.
pub fn decision_distribution(probs: &RawClickProbs) -> [f64; 6] {
    let mut out = [0.0; 6];
    for pattern in ClickPattern::all() {
        let w = pattern.probability(probs);
        match squash(pattern) {
            Squashed::Single(d) => out[SquashDecision::Outcome(d).index()] += w,
            Squashed::Split(b) => {
                for d in b.detectors() {
                    out[SquashDecision::Outcome(d).index()] += 0.5 * w;
                }
            }
            Squashed::Discard => out[SquashDecision::Discard.index()] += w,
            Squashed::NoClick => out[SquashDecision::NoClick.index()] += w,
        }
    }
    out
}

/// Probability that Bob ends up with an outcome in `basis`.
pub fn basis_prob(probs: &RawClickProbs, basis: Basis) -> f64 {
    let [x, y] = basis.detectors().map(|d| probs.get(d));
    let [o1, o2] = basis.other().detectors().map(|d| probs.get(d));
    (1.0 - o1) * (1.0 - o2) * (x + y - x * y)
}

/// Probability that Bob's squashed outcome is `det`.
pub fn outcome_prob(probs: &RawClickProbs, det: DetectorId) -> f64 {
    let p = probs.get(det);
    let partner = probs.get(det.partner());
    let [o1, o2] = det.basis().other().detectors().map(|d| probs.get(d));
    (p - p * partner / 2.0) * (1.0 - o1) * (1.0 - o2)
}
