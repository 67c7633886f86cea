//! Photon-level Monte Carlo simulation of the attack.
//!
//! Nothing here reuses the analytic click or squashing formulas: photon
//! numbers are drawn from a Poisson distribution and each photon is routed
//! through the beam splitter, the polarizing beam splitters, and the
//! detector efficiency one at a time. Runs are split into fixed-size batches,
//! each with its own ChaCha8 stream derived from the seed, so results do not
//! depend on thread scheduling.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson};
use rayon::prelude::*;

use crate::attack::{
    AttackScenario, EveMeasurementModel, GeneralizedStrategy, Observables, RestrictedStrategy,
    ScramblingPolicy, Strategy,
};
use crate::receiver::{
    AttackAngle, ClickModel, DetectorId, EfficiencyMap, Polarization, ReceiverParams,
    ScramblingAngle,
};
use crate::squashing::{squash, ClickPattern, SquashDecision, Squashed};

/// Trials per independently seeded batch.
pub const BATCH_SIZE: u64 = 1 << 16;

/// Default |z| threshold for [`compare`].
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialConfig {
    pub trials: u64,
    pub seed: u64,
}

/// Strategy, policy and receiver bundle simulated by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCase {
    pub strategy: Strategy,
    pub policy: ScramblingPolicy,
    pub scenario: AttackScenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EmpiricalStats {
    pub trials: u64,
    pub pattern_counts: [u64; 16],
    /// Indexed by [`SquashDecision::index`].
    pub decision_counts: [u64; 6],
    pub sift_count: u64,
    pub error_count: u64,
}

impl EmpiricalStats {
    fn merge(mut self, other: &EmpiricalStats) -> Self {
        self.trials += other.trials;
        for (a, b) in self.pattern_counts.iter_mut().zip(other.pattern_counts) {
            *a += b;
        }
        for (a, b) in self.decision_counts.iter_mut().zip(other.decision_counts) {
            *a += b;
        }
        self.sift_count += other.sift_count;
        self.error_count += other.error_count;
        self
    }

    /// Fraction of trials that were sifted.
    pub fn rate(&self) -> f64 {
        self.sift_count as f64 / self.trials as f64
    }

    pub fn rate_standard_error(&self) -> f64 {
        binomial_se(self.rate(), self.trials)
    }

    /// Fraction of sifted trials in error.
    pub fn qber(&self) -> Option<f64> {
        (self.sift_count > 0).then(|| self.error_count as f64 / self.sift_count as f64)
    }

    pub fn qber_standard_error(&self) -> Option<f64> {
        self.qber().map(|q| binomial_se(q, self.sift_count))
    }
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Simulates one pulse and returns which detectors clicked.
pub fn simulate_pulse<R: Rng + ?Sized>(
    pol: Polarization,
    angle: AttackAngle,
    mu: f64,
    theta: ScramblingAngle,
    params: &ReceiverParams,
    map: &EfficiencyMap,
    rng: &mut R,
) -> ClickPattern {
    let mut pattern = ClickPattern::default();
    let photons = if mu > 0.0 {
        Poisson::new(mu).expect("positive mean").sample(rng) as u64
    } else {
        0
    };
    let arriving = pol.rotate(theta);
    for _ in 0..photons {
        let arm_is_hv = rng.random_bool(0.5);
        let [first, second] = if arm_is_hv {
            [DetectorId::H, DetectorId::V]
        } else {
            [DetectorId::D, DetectorId::A]
        };
        let det = if arriving.basis().detectors() == [first, second] {
            if rng.random::<f64>() < params.fidelity() {
                arriving.aligned_detector()
            } else {
                arriving.orthogonal().aligned_detector()
            }
        } else if rng.random_bool(0.5) {
            first
        } else {
            second
        };
        if rng.random::<f64>() < map.get(det, angle) {
            pattern = pattern.with(det);
        }
    }
    for det in DetectorId::ALL {
        if rng.random::<f64>() < params.dark_count(det) {
            pattern = pattern.with(det);
        }
    }
    pattern
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn simulate_batch(case: &OracleCase, trials: u64, rng: &mut ChaCha8Rng) -> EmpiricalStats {
    let OracleCase {
        strategy,
        policy,
        scenario,
    } = case;
    let eve = &scenario.eve;
    let eve_weights = [
        eve.p_correct(),
        eve.p_wrong(),
        eve.p_noncompat(),
        eve.p_noncompat(),
        eve.p_no_detection(),
    ];
    let generalized = strategy.as_generalized();
    let theta_weights = policy.weights();
    let mut stats = EmpiricalStats {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let alice = Polarization::from_index(rng.random_range(0..4));
        let [c0, c1] = alice.conjugates();
        let resent = match pick(&eve_weights, rng) {
            0 => Some(alice),
            1 => Some(alice.orthogonal()),
            2 => Some(c0),
            3 => Some(c1),
            _ => None,
        };
        let theta = ScramblingAngle::ALL[pick(&theta_weights, rng)];
        let pattern = match resent {
            Some(q) => {
                let k = pick(&generalized.f()[q.index()], rng);
                let mu = generalized.mu()[q.index()][k];
                let angle = AttackAngle::from_index(k);
                simulate_pulse(q, angle, mu, theta, &scenario.params, &scenario.map, rng)
            }
            None => simulate_pulse(alice, AttackAngle(DetectorId::H), 0.0, theta, &scenario.params, &scenario.map, rng),
        };
        stats.pattern_counts[pattern.0 as usize] += 1;
        let decision = match squash(pattern) {
            Squashed::Single(d) => SquashDecision::Outcome(d),
            Squashed::Split(b) => {
                let [x, y] = b.detectors();
                SquashDecision::Outcome(if rng.random_bool(0.5) { x } else { y })
            }
            Squashed::Discard => SquashDecision::Discard,
            Squashed::NoClick => SquashDecision::NoClick,
        };
        stats.decision_counts[decision.index()] += 1;
        if let SquashDecision::Outcome(det) = decision {
            let logical = det.polarization().unrotate(theta);
            if logical.basis() == alice.basis() {
                stats.sift_count += 1;
                if logical == alice.orthogonal() {
                    stats.error_count += 1;
                }
            }
        }
    }
    stats
}

/// Runs the full protocol `cfg.trials` times.
pub fn simulate_protocol(case: &OracleCase, cfg: &TrialConfig) -> EmpiricalStats {
    let batches = cfg.trials.div_ceil(BATCH_SIZE);
    let parts: Vec<EmpiricalStats> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b);
            let n = BATCH_SIZE.min(cfg.trials - b * BATCH_SIZE);
            simulate_batch(case, n, &mut rng)
        })
        .collect();
    parts
        .iter()
        .fold(EmpiricalStats::default(), |acc, s| acc.merge(s))
}

/// One analytic-vs-empirical comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub analytic: f64,
    pub empirical: f64,
    pub standard_error: f64,
    /// `None` when the standard error is zero.
    pub z: Option<f64>,
    pub pass: bool,
}

impl ZScore {
    pub fn new(analytic: f64, empirical: f64, standard_error: f64, threshold: f64) -> Self {
        if standard_error > 0.0 {
            let z = (empirical - analytic) / standard_error;
            Self {
                analytic,
                empirical,
                standard_error,
                z: Some(z),
                pass: z.abs() <= threshold,
            }
        } else {
            // zero variance: every trial agreed, so only an exact match is consistent
            Self {
                analytic,
                empirical,
                standard_error,
                z: None,
                pass: (empirical - analytic).abs() <= 1e-12,
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.z.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub rate: ZScore,
    /// `None` when nothing was sifted (analytic or empirical).
    pub qber: Option<ZScore>,
    pub pass: bool,
}

impl Comparison {
    pub fn has_degenerate(&self) -> bool {
        self.rate.is_degenerate() || self.qber.is_some_and(|q| q.is_degenerate())
    }
}

pub fn compare(analytic: &Observables, empirical: &EmpiricalStats, threshold: f64) -> Comparison {
    let rate = ZScore::new(
        analytic.rate_total,
        empirical.rate(),
        empirical.rate_standard_error(),
        threshold,
    );
    let qber = match (analytic.qber, empirical.qber(), empirical.qber_standard_error()) {
        (Some(a), Some(e), Some(se)) => Some(ZScore::new(a, e, se, threshold)),
        _ => None,
    };
    // sifting in one but not the other is only acceptable when the rate z-score passes
    let pass = rate.pass && qber.is_none_or(|q| q.pass);
    Comparison { rate, qber, pass }
}

/// Draws a random but valid scenario for oracle checks. Intensities stay
/// below 10 so photon-by-photon simulation remains cheap.
pub fn random_case<R: Rng + ?Sized>(rng: &mut R, click_model: ClickModel) -> OracleCase {
    let log_uniform = |rng: &mut R, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let simplex = |rng: &mut R| -> [f64; 4] {
        let w: [f64; 4] = std::array::from_fn(|_| Exp1.sample(rng));
        let s: f64 = w.iter().sum();
        w.map(|x| x / s)
    };

    let mut eta = [[0.0; 4]; 4];
    for row in eta.iter_mut() {
        for e in row.iter_mut() {
            *e = log_uniform(rng, 0.01, 1.0);
        }
    }
    let dark = std::array::from_fn(|_| rng.random_range(0.0..1e-4));
    let fidelity = rng.random_range(0.8..1.0);
    let params = ReceiverParams::new(dark, fidelity, click_model).expect("valid receiver");
    let map = EfficiencyMap::new(eta).expect("valid map");

    let e = simplex(rng);
    let eve = EveMeasurementModel::new(e[0], e[1], e[2] / 2.0).expect("valid eve model");

    let policy = ScramblingPolicy::new(normalized(simplex(rng))).expect("valid policy");
    let strategy = if rng.random_bool(0.5) {
        let mu = std::array::from_fn(|_| log_uniform(rng, 0.05, 10.0));
        RestrictedStrategy::new(mu).expect("valid").into()
    } else {
        let mu = std::array::from_fn(|_| std::array::from_fn(|_| log_uniform(rng, 0.05, 10.0)));
        let f = std::array::from_fn(|_| normalized(simplex(rng)));
        GeneralizedStrategy::new(mu, f).expect("valid").into()
    };
    OracleCase {
        strategy,
        policy,
        scenario: AttackScenario { params, map, eve },
    }
}

/// Renormalizes so the last component absorbs rounding.
fn normalized(mut w: [f64; 4]) -> [f64; 4] {
    w[3] = 1.0 - w[0] - w[1] - w[2];
    if w[3] < 0.0 {
        w[3] = 0.0;
    }
    w
}

/// The seeded suite of random cases used by validation.
pub fn random_suite(master_seed: u64, count: usize, click_model: ClickModel) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count).map(|_| random_case(&mut rng, click_model)).collect()
}
