//! Sifted key rate and error rate under Eve's intercept-resend attack.
//!
//! Eve measures Alice's pulse in a random basis and resends her outcome
//! `q` towards Bob. With probability `f[q][k]` she aims the pulse at attack
//! angle `k` with mean photon number `mu[q][k]`. Bob rotates the incoming
//! polarization by a scrambling angle drawn from his policy, clicks, and
//! squashes. A pulse sent by Alice in polarization `j` is sifted when Bob's
//! logical outcome falls in `j`'s basis and is an error when it is `j`'s
//! orthogonal partner.

use crate::error::{check_intensity, check_range, ModelError, Result};
use crate::receiver::{
    click_prob_unchecked, AttackAngle, Basis, ClickModel, DetectorId, EfficiencyMap, Polarization,
    ReceiverParams, ScramblingAngle,
};
use crate::squashing::{basis_prob, decision_distribution, outcome_prob, RawClickProbs};

/// Tolerance on probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Eve's own measurement statistics.
///
/// `p_correct`/`p_wrong`: Eve measured in Alice's basis and got the right or
/// the wrong outcome. `p_noncompat`: Eve measured in the other basis and got
/// one particular outcome there (so `2 * p_noncompat` in total). The
/// remainder is the probability that Eve registered nothing and sends nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EveMeasurementModel {
    p_correct: f64,
    p_wrong: f64,
    p_noncompat: f64,
}

impl EveMeasurementModel {
    pub fn new(p_correct: f64, p_wrong: f64, p_noncompat: f64) -> Result<Self> {
        check_range("eve.p_correct", p_correct, 0.0, 1.0)?;
        check_range("eve.p_wrong", p_wrong, 0.0, 1.0)?;
        check_range("eve.p_noncompat", p_noncompat, 0.0, 0.5)?;
        let total = p_correct + p_wrong + 2.0 * p_noncompat;
        if total > 1.0 + 1e-12 {
            return Err(ModelError::InvalidEveModel { total });
        }
        Ok(Self {
            p_correct,
            p_wrong,
            p_noncompat,
        })
    }

    /// Eve always forwards Alice's state unchanged; used for the honest channel.
    pub fn transparent() -> Self {
        Self {
            p_correct: 1.0,
            p_wrong: 0.0,
            p_noncompat: 0.0,
        }
    }

    pub fn p_correct(&self) -> f64 {
        self.p_correct
    }

    pub fn p_wrong(&self) -> f64 {
        self.p_wrong
    }

    pub fn p_noncompat(&self) -> f64 {
        self.p_noncompat
    }

    /// Probability that Eve has no outcome and Bob only sees dark counts.
    pub fn p_no_detection(&self) -> f64 {
        (1.0 - self.p_correct - self.p_wrong - 2.0 * self.p_noncompat).max(0.0)
    }

    /// The polarizations Eve resends when Alice sent `alice`, with their probabilities.
    pub fn branches(&self, alice: Polarization) -> [(Polarization, f64); 4] {
        let [c0, c1] = alice.conjugates();
        [
            (alice, self.p_correct),
            (alice.orthogonal(), self.p_wrong),
            (c0, self.p_noncompat),
            (c1, self.p_noncompat),
        ]
    }
}

impl Default for EveMeasurementModel {
    fn default() -> Self {
        Self {
            p_correct: 0.5,
            p_wrong: 0.0,
            p_noncompat: 0.25,
        }
    }
}

/// Eve resends polarization `q` at attack angle `q` with intensity `mu[q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedStrategy {
    mu: [f64; 4],
}

impl RestrictedStrategy {
    pub fn new(mu: [f64; 4]) -> Result<Self> {
        for q in Polarization::ALL {
            check_intensity(&format!("mu.{q:?}"), mu[q.index()])?;
        }
        Ok(Self { mu })
    }

    pub fn uniform(mu: f64) -> Result<Self> {
        Self::new([mu; 4])
    }

    pub fn mu(&self) -> [f64; 4] {
        self.mu
    }
}

/// Eve resends polarization `q` at attack angle `k` with probability
/// `f[q][k]` and intensity `mu[q][k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedStrategy {
    mu: [[f64; 4]; 4],
    f: [[f64; 4]; 4],
}

impl GeneralizedStrategy {
    pub fn new(mu: [[f64; 4]; 4], f: [[f64; 4]; 4]) -> Result<Self> {
        for q in Polarization::ALL {
            for k in AttackAngle::ALL {
                let (qi, ki) = (q.index(), k.index());
                check_intensity(&format!("mu.{q:?}.{}", k.0.label()), mu[qi][ki])?;
                check_range(&format!("f.{q:?}.{}", k.0.label()), f[qi][ki], 0.0, 1.0)?;
            }
            let sum: f64 = f[q.index()].iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(ModelError::NotNormalized {
                    field: format!("f.{q:?}"),
                    sum,
                });
            }
        }
        Ok(Self { mu, f })
    }

    pub fn mu(&self) -> [[f64; 4]; 4] {
        self.mu
    }

    pub fn f(&self) -> [[f64; 4]; 4] {
        self.f
    }
}

impl From<RestrictedStrategy> for GeneralizedStrategy {
    fn from(r: RestrictedStrategy) -> Self {
        let mut mu = [[0.0; 4]; 4];
        let mut f = [[0.0; 4]; 4];
        for q in Polarization::ALL {
            let k = AttackAngle::targeting(q).index();
            mu[q.index()][k] = r.mu[q.index()];
            f[q.index()][k] = 1.0;
        }
        Self { mu, f }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Restricted(RestrictedStrategy),
    Generalized(GeneralizedStrategy),
}

impl Strategy {
    /// Calls `visit(angle, probability, mu)` for each way Eve may send `q`.
    #[inline]
    fn for_each_pulse(&self, q: Polarization, mut visit: impl FnMut(AttackAngle, f64, f64)) {
        match self {
            Strategy::Restricted(r) => visit(AttackAngle::targeting(q), 1.0, r.mu[q.index()]),
            Strategy::Generalized(g) => {
                for k in AttackAngle::ALL {
                    visit(k, g.f[q.index()][k.index()], g.mu[q.index()][k.index()]);
                }
            }
        }
    }

    pub fn as_generalized(&self) -> GeneralizedStrategy {
        match *self {
            Strategy::Restricted(r) => r.into(),
            Strategy::Generalized(g) => g,
        }
    }
}

impl From<RestrictedStrategy> for Strategy {
    fn from(r: RestrictedStrategy) -> Self {
        Strategy::Restricted(r)
    }
}

impl From<GeneralizedStrategy> for Strategy {
    fn from(g: GeneralizedStrategy) -> Self {
        Strategy::Generalized(g)
    }
}

/// Probability distribution over Bob's four scrambling rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScramblingPolicy {
    weights: [f64; 4],
}

impl ScramblingPolicy {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        for t in ScramblingAngle::ALL {
            check_range(
                &format!("scrambling.weights[{}]", t.index()),
                weights[t.index()],
                0.0,
                1.0,
            )?;
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ModelError::NotNormalized {
                field: "scrambling.weights".into(),
                sum,
            });
        }
        Ok(Self { weights })
    }

    pub fn uniform() -> Self {
        Self {
            weights: [0.25; 4],
        }
    }

    /// Scrambling disabled.
    pub fn none() -> Self {
        Self::fixed(ScramblingAngle::Deg0)
    }

    pub fn fixed(theta: ScramblingAngle) -> Self {
        let mut weights = [0.0; 4];
        weights[theta.index()] = 1.0;
        Self { weights }
    }

    pub fn weight(&self, theta: ScramblingAngle) -> f64 {
        self.weights[theta.index()]
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }
}

impl Default for ScramblingPolicy {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Alice-to-Bob line without Eve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HonestChannel {
    loss_db: f64,
    alice_mu: f64,
}

impl HonestChannel {
    pub const DEFAULT_ALICE_MU: f64 = 0.5;

    /// `loss_db` may be `+inf` for a fully opaque line.
    pub fn new(loss_db: f64, alice_mu: f64) -> Result<Self> {
        if loss_db.is_nan() || loss_db < 0.0 {
            return Err(ModelError::OutOfRange {
                field: "channel.loss_db".into(),
                value: loss_db,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        check_intensity("channel.alice_mu", alice_mu)?;
        Ok(Self { loss_db, alice_mu })
    }

    pub fn loss_db(&self) -> f64 {
        self.loss_db
    }

    pub fn alice_mu(&self) -> f64 {
        self.alice_mu
    }

    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }
}

/// Everything about Bob's receiver and Eve's measurement that a strategy is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttackScenario {
    pub params: ReceiverParams,
    pub map: EfficiencyMap,
    pub eve: EveMeasurementModel,
}

/// Sifted rates and errors seen by Bob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub rate_total: f64,
    pub rate_per_pol: [f64; 4],
    pub error_total: f64,
    pub error_per_pol: [f64; 4],
    /// `None` when nothing is sifted.
    pub qber: Option<f64>,
}

impl Observables {
    pub fn qber(&self) -> Result<f64> {
        self.qber.ok_or(ModelError::UndefinedQber)
    }
}

/// Squashed statistics of one pulse: basis probabilities indexed by
/// [`Basis::index`] and outcome probabilities indexed by [`DetectorId::index`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct PulseResponse {
    basis: [f64; 2],
    outcome: [f64; 4],
}

impl PulseResponse {
    fn from_closed_forms(probs: &RawClickProbs) -> Self {
        Self {
            basis: Basis::ALL.map(|b| basis_prob(probs, b)),
            outcome: DetectorId::ALL.map(|d| outcome_prob(probs, d)),
        }
    }

    fn from_enumeration(probs: &RawClickProbs) -> Self {
        let d = decision_distribution(probs);
        Self {
            basis: [d[0] + d[1], d[2] + d[3]],
            outcome: [d[0], d[1], d[2], d[3]],
        }
    }

    #[inline]
    fn add_scaled(&mut self, w: f64, other: &PulseResponse) {
        for b in 0..2 {
            self.basis[b] += w * other.basis[b];
        }
        for d in 0..4 {
            self.outcome[d] += w * other.outcome[d];
        }
    }
}

#[derive(Clone, Copy)]
enum SquashPath {
    ClosedForm,
    Enumeration,
}

fn click_vector(
    q: Polarization,
    angle: AttackAngle,
    mu: f64,
    theta: ScramblingAngle,
    params: &ReceiverParams,
    map: &EfficiencyMap,
) -> RawClickProbs {
    RawClickProbs::new(DetectorId::ALL.map(|d| click_prob_unchecked(d, q, angle, mu, theta, params, map)))
}

fn pulse_response(
    q: Polarization,
    angle: AttackAngle,
    mu: f64,
    theta: ScramblingAngle,
    params: &ReceiverParams,
    map: &EfficiencyMap,
    path: SquashPath,
) -> PulseResponse {
    let probs = click_vector(q, angle, mu, theta, params, map);
    match path {
        SquashPath::ClosedForm => PulseResponse::from_closed_forms(&probs),
        SquashPath::Enumeration => PulseResponse::from_enumeration(&probs),
    }
}

/// Bob's statistics when only dark counts can fire.
fn dark_response(params: &ReceiverParams, path: SquashPath) -> PulseResponse {
    let c = params.dark_counts();
    match (params.click_model(), path) {
        (ClickModel::PaperApprox, _) => {
            let mut r = PulseResponse::default();
            for b in Basis::ALL {
                let [x, y] = b.detectors().map(|d| c[d.index()]);
                r.basis[b.index()] = x + y - x * y;
            }
            for d in DetectorId::ALL {
                let (e, o) = (c[d.index()], c[d.partner().index()]);
                r.outcome[d.index()] = e - e * o / 2.0;
            }
            r
        }
        (ClickModel::ExactComplement, SquashPath::ClosedForm) => {
            PulseResponse::from_closed_forms(&RawClickProbs::new(c))
        }
        (ClickModel::ExactComplement, SquashPath::Enumeration) => {
            PulseResponse::from_enumeration(&RawClickProbs::new(c))
        }
    }
}

/// Physical basis in which Bob sifts Alice's `alice` under rotation `theta`.
fn sifting_basis(alice: Polarization, theta: ScramblingAngle) -> Basis {
    alice.rotate(theta).basis()
}

/// Physical detector whose click is an error for Alice's `alice` under rotation `theta`.
fn error_detector(alice: Polarization, theta: ScramblingAngle) -> DetectorId {
    alice.orthogonal().rotate(theta).aligned_detector()
}

/// Combines per-resend responses into `(rate, error)` for Alice's polarization.
fn rate_and_error(
    alice: Polarization,
    theta: ScramblingAngle,
    eve: &EveMeasurementModel,
    resent: impl Fn(Polarization) -> PulseResponse,
    dark: &PulseResponse,
) -> (f64, f64) {
    let b = sifting_basis(alice, theta).index();
    let e = error_detector(alice, theta).index();
    let mut rate = 0.0;
    let mut error = 0.0;
    for (q, w) in eve.branches(alice) {
        let r = resent(q);
        rate += w * r.basis[b];
        error += w * r.outcome[e];
    }
    let w0 = eve.p_no_detection();
    rate += w0 * dark.basis[b];
    error += w0 * dark.outcome[e];
    (rate, error)
}

/// Sifted rate for Alice's `alice` when every pulse Eve resends goes to
/// angle `angle` with intensity `mu`, under rotation `theta`.
pub fn conditional_rate(
    alice: Polarization,
    angle: AttackAngle,
    theta: ScramblingAngle,
    mu: f64,
    eve: &EveMeasurementModel,
    params: &ReceiverParams,
    map: &EfficiencyMap,
) -> Result<f64> {
    check_intensity("mu", mu)?;
    let dark = dark_response(params, SquashPath::ClosedForm);
    let resent = |q| pulse_response(q, angle, mu, theta, params, map, SquashPath::ClosedForm);
    Ok(rate_and_error(alice, theta, eve, resent, &dark).0)
}

/// Error counterpart of [`conditional_rate`].
pub fn conditional_error(
    alice: Polarization,
    angle: AttackAngle,
    theta: ScramblingAngle,
    mu: f64,
    eve: &EveMeasurementModel,
    params: &ReceiverParams,
    map: &EfficiencyMap,
) -> Result<f64> {
    check_intensity("mu", mu)?;
    let dark = dark_response(params, SquashPath::ClosedForm);
    let resent = |q| pulse_response(q, angle, mu, theta, params, map, SquashPath::ClosedForm);
    Ok(rate_and_error(alice, theta, eve, resent, &dark).1)
}

fn mixture_response(
    strategy: &Strategy,
    q: Polarization,
    theta: ScramblingAngle,
    scenario: &AttackScenario,
    path: SquashPath,
) -> PulseResponse {
    let mut mix = PulseResponse::default();
    strategy.for_each_pulse(q, |angle, f, mu| {
        let r = pulse_response(q, angle, mu, theta, &scenario.params, &scenario.map, path);
        mix.add_scaled(f, &r);
    });
    mix
}

/// Sifted rate for Alice's `alice` under rotation `theta` with Eve following `strategy`.
pub fn strategy_rate(
    alice: Polarization,
    theta: ScramblingAngle,
    strategy: &Strategy,
    scenario: &AttackScenario,
) -> f64 {
    strategy_rate_and_error(alice, theta, strategy, scenario).0
}

/// Error counterpart of [`strategy_rate`].
pub fn strategy_error(
    alice: Polarization,
    theta: ScramblingAngle,
    strategy: &Strategy,
    scenario: &AttackScenario,
) -> f64 {
    strategy_rate_and_error(alice, theta, strategy, scenario).1
}

fn strategy_rate_and_error(
    alice: Polarization,
    theta: ScramblingAngle,
    strategy: &Strategy,
    scenario: &AttackScenario,
) -> (f64, f64) {
    let path = SquashPath::ClosedForm;
    let dark = dark_response(&scenario.params, path);
    let resent = |q| mixture_response(strategy, q, theta, scenario, path);
    rate_and_error(alice, theta, &scenario.eve, resent, &dark)
}

/// Aggregates rates and errors over Alice's four states and Bob's scrambling policy.
pub fn observables(
    strategy: &Strategy,
    policy: &ScramblingPolicy,
    scenario: &AttackScenario,
) -> Observables {
    observables_via(strategy, policy, scenario, SquashPath::ClosedForm)
}

/// Same as [`observables`] but squashes every pulse by enumerating all 16
/// click patterns instead of using the closed-form basis/outcome products.
/// Kept as an independent cross-check of the fast path.
pub fn observables_enumerated(
    strategy: &Strategy,
    policy: &ScramblingPolicy,
    scenario: &AttackScenario,
) -> Observables {
    observables_via(strategy, policy, scenario, SquashPath::Enumeration)
}

fn observables_via(
    strategy: &Strategy,
    policy: &ScramblingPolicy,
    scenario: &AttackScenario,
    path: SquashPath,
) -> Observables {
    let dark = dark_response(&scenario.params, path);
    let mut rate_per_pol = [0.0; 4];
    let mut error_per_pol = [0.0; 4];
    for theta in ScramblingAngle::ALL {
        let w = policy.weight(theta);
        if w == 0.0 {
            continue;
        }
        let mixes = Polarization::ALL.map(|q| mixture_response(strategy, q, theta, scenario, path));
        for alice in Polarization::ALL {
            let (r, e) =
                rate_and_error(alice, theta, &scenario.eve, |q| mixes[q.index()], &dark);
            rate_per_pol[alice.index()] += w * r;
            error_per_pol[alice.index()] += w * e;
        }
    }
    let rate_total = rate_per_pol.iter().sum::<f64>() / 4.0;
    let error_total = error_per_pol.iter().sum::<f64>() / 4.0;
    let qber = (rate_total > 0.0).then(|| error_total / rate_total);
    Observables {
        rate_total,
        rate_per_pol,
        error_total,
        error_per_pol,
        qber,
    }
}

fn honest_setup(
    channel: &HonestChannel,
    params: &ReceiverParams,
    nominal_eta: f64,
) -> Result<(Strategy, AttackScenario)> {
    let mu = channel.alice_mu() * channel.transmittance();
    let strategy = RestrictedStrategy::uniform(mu)?.into();
    let scenario = AttackScenario {
        params: *params,
        map: EfficiencyMap::uniform(nominal_eta)?,
        eve: EveMeasurementModel::transparent(),
    };
    Ok((strategy, scenario))
}

/// Expected Alice-Bob sifted key rate without Eve.
pub fn honest_baseline(
    channel: &HonestChannel,
    params: &ReceiverParams,
    nominal_eta: f64,
) -> Result<f64> {
    Ok(honest_rates_per_pol(channel, params, nominal_eta)?.0)
}

/// Honest total rate and the rate for each of Alice's polarizations.
pub fn honest_rates_per_pol(
    channel: &HonestChannel,
    params: &ReceiverParams,
    nominal_eta: f64,
) -> Result<(f64, [f64; 4])> {
    let (strategy, scenario) = honest_setup(channel, params, nominal_eta)?;
    let obs = observables(&strategy, &ScramblingPolicy::none(), &scenario);
    Ok((obs.rate_total, obs.rate_per_pol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;
    use Polarization::*;
    use ScramblingAngle::*;

    const E1: f64 = 0.632_120_558_828_557_7; // 1 - e^-1
    const E05: f64 = 0.393_469_340_287_366_6; // 1 - e^-0.5

    fn ideal(click_model: ClickModel) -> ReceiverParams {
        ReceiverParams::new([0.0; 4], 1.0, click_model).unwrap()
    }

    fn single_entry_map(det: DetectorId, angle: DetectorId) -> EfficiencyMap {
        let mut eta = [[0.0; 4]; 4];
        eta[det.index()][angle.index()] = 1.0;
        EfficiencyMap::new(eta).unwrap()
    }

    fn h() -> AttackAngle {
        AttackAngle(DetectorId::H)
    }

    #[test]
    fn no_sensitivity_no_rate() {
        let p = ideal(ClickModel::PaperApprox);
        let map = EfficiencyMap::uniform(0.0).unwrap();
        for alice in Polarization::ALL {
            for k in AttackAngle::ALL {
                for t in ScramblingAngle::ALL {
                    let eve = EveMeasurementModel::default();
                    assert_eq!(conditional_rate(alice, k, t, 3.0, &eve, &p, &map).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn conditional_rate_shared_angle() {
        // All four resend branches share angle h and mu = 2. The correct branch
        // gives 1/2 (1 - e^-1); each wrong-basis branch reaches h with overlap 1/4.
        let p = ideal(ClickModel::PaperApprox);
        let map = single_entry_map(DetectorId::H, DetectorId::H);
        let eve = EveMeasurementModel::default();
        let got = conditional_rate(H, h(), Deg0, 2.0, &eve, &p, &map).unwrap();
        assert!((got - (0.5 * E1 + 0.5 * E05)).abs() < 1e-14, "{got}");
        assert!((got - 0.512_794_949_557_962_1).abs() < 1e-12);
        // under 45° all light on h is logically in DA
        let got = conditional_rate(H, h(), Deg45, 2.0, &eve, &p, &map).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn only_correct_branch_lit() {
        // Eve resends H at angle h with mu 2 and sends vacuum for D and A.
        let p = ideal(ClickModel::PaperApprox);
        let scenario = AttackScenario {
            params: p,
            map: single_entry_map(DetectorId::H, DetectorId::H),
            eve: EveMeasurementModel::default(),
        };
        let s: Strategy = RestrictedStrategy::new([2.0, 0.0, 0.0, 0.0]).unwrap().into();
        let got = strategy_rate(H, Deg0, &s, &scenario);
        assert!((got - 0.316_060_279_414_278_8).abs() < 1e-12, "{got}");
        assert_eq!(strategy_rate(H, Deg45, &s, &scenario), 0.0);
    }

    #[test]
    fn conditional_error_examples() {
        let p = ideal(ClickModel::PaperApprox);
        let eve = EveMeasurementModel::default();
        let map = EfficiencyMap::diagonal(0.1, 0.0).unwrap();
        assert_eq!(conditional_error(H, h(), Deg0, 2.0, &eve, &p, &map).unwrap(), 0.0);

        let perfect = EveMeasurementModel::new(1.0, 0.0, 0.0).unwrap();
        for alice in Polarization::ALL {
            let k = AttackAngle::targeting(alice);
            for mu in [0.1, 1.0, 50.0] {
                assert_eq!(
                    conditional_error(alice, k, Deg0, mu, &perfect, &p, &EfficiencyMap::uniform(0.3).unwrap())
                        .unwrap(),
                    0.0
                );
            }
        }

        // Wrong-basis resend of A at angle a under 45°: A -> H, a quarter of the
        // light reaches physical a, which is logical V (the error) for Alice's H.
        let a = AttackAngle(DetectorId::A);
        let map = single_entry_map(DetectorId::A, DetectorId::A);
        let scenario = AttackScenario {
            params: p,
            map,
            eve,
        };
        let s: Strategy = RestrictedStrategy::new([0.0, 0.0, 0.0, 2.0]).unwrap().into();
        let got = strategy_error(H, Deg45, &s, &scenario);
        assert!((got - 0.25 * E05).abs() < 1e-14);
        assert!((got - 0.098_367_335_071_841_6).abs() < 1e-12);
        // the shared-angle form also lights a from the D branch
        let shared = conditional_error(H, a, Deg45, 2.0, &eve, &p, &map).unwrap();
        assert!((shared - 0.5 * E05).abs() < 1e-14);
    }

    #[test]
    fn strategy_mixtures() {
        let scenario = AttackScenario::default();
        let (eve, p, map) = (scenario.eve, scenario.params, scenario.map);
        // every resent polarization aimed at h with one intensity is the shared-angle form
        let mu = 1.3;
        let at_h: Strategy = GeneralizedStrategy::new([[mu; 4]; 4], [[1.0, 0.0, 0.0, 0.0]; 4])
            .unwrap()
            .into();
        for alice in Polarization::ALL {
            for t in ScramblingAngle::ALL {
                let direct = conditional_rate(alice, h(), t, mu, &eve, &p, &map).unwrap();
                assert!((direct - strategy_rate(alice, t, &at_h, &scenario)).abs() < 1e-15);
                let direct = conditional_error(alice, h(), t, mu, &eve, &p, &map).unwrap();
                assert!((direct - strategy_error(alice, t, &at_h, &scenario)).abs() < 1e-15);
            }
        }

        // uniform f with equal mu is the mean of the four shared-angle rates
        let uniform: Strategy = GeneralizedStrategy::new([[mu; 4]; 4], [[0.25; 4]; 4]).unwrap().into();
        for t in ScramblingAngle::ALL {
            let mean: f64 = AttackAngle::ALL
                .iter()
                .map(|&k| conditional_rate(H, k, t, mu, &eve, &p, &map).unwrap())
                .sum::<f64>()
                / 4.0;
            assert!((strategy_rate(H, t, &uniform, &scenario) - mean).abs() < 1e-15);
        }

        // degenerate rows reproduce the restricted attack
        let r = RestrictedStrategy::new([0.7, 1.3, 2.1, 0.4]).unwrap();
        let g: Strategy = GeneralizedStrategy::from(r).into();
        for alice in Polarization::ALL {
            for t in ScramblingAngle::ALL {
                assert_eq!(
                    strategy_rate(alice, t, &r.into(), &scenario),
                    strategy_rate(alice, t, &g, &scenario)
                );
            }
        }
    }

    #[test]
    fn zero_intensity_zero_rate() {
        let scenario = AttackScenario {
            params: ideal(ClickModel::PaperApprox),
            ..Default::default()
        };
        let s: Strategy = RestrictedStrategy::uniform(0.0).unwrap().into();
        let obs = observables(&s, &ScramblingPolicy::uniform(), &scenario);
        assert_eq!(obs.rate_total, 0.0);
        assert_eq!(obs.qber, None);
        assert_eq!(obs.qber(), Err(ModelError::UndefinedQber));
    }

    #[test]
    fn intercept_resend_quarter_without_mismatch() {
        let scenario = AttackScenario {
            params: ideal(ClickModel::PaperApprox),
            map: EfficiencyMap::uniform(0.1).unwrap(),
            eve: EveMeasurementModel::default(),
        };
        let s: Strategy = RestrictedStrategy::uniform(1e-6).unwrap().into();
        let q = observables(&s, &ScramblingPolicy::none(), &scenario).qber().unwrap();
        assert!((q - 0.25).abs() < 1e-6, "{q}");
        // brute force over Eve's basis choice in the single-photon limit:
        // right basis -> no error, wrong basis -> Bob's bit is a coin flip.
        let brute = 0.5 * 0.0 + 0.5 * 0.5;
        assert!((q - brute).abs() < 1e-6);
    }

    #[test]
    fn mismatch_routes_clicks_without_scrambling() {
        let scenario = AttackScenario::default();
        let s: Strategy = RestrictedStrategy::uniform(5.0).unwrap().into();
        let obs = observables(&s, &ScramblingPolicy::none(), &scenario);
        assert!(obs.qber().unwrap() < 0.01, "{:?}", obs);
    }

    #[test]
    fn observables_invariants() {
        let scenario = AttackScenario::default();
        let s: Strategy = RestrictedStrategy::new([0.3, 40.0, 2.0, 900.0]).unwrap().into();
        let obs = observables(&s, &ScramblingPolicy::uniform(), &scenario);
        let mean = obs.rate_per_pol.iter().sum::<f64>() / 4.0;
        assert_eq!(obs.rate_total, mean);
        for j in 0..4 {
            assert!(obs.error_per_pol[j] <= obs.rate_per_pol[j] + 1e-12);
        }
        let q = obs.qber().unwrap();
        assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn reduces_to_unscrambled_and_uniform_aggregates() {
        let scenario = AttackScenario::default();
        let s: Strategy = RestrictedStrategy::new([0.3, 4.0, 2.0, 9.0]).unwrap().into();
        let unscrambled = observables(&s, &ScramblingPolicy::none(), &scenario);
        for j in Polarization::ALL {
            let r = strategy_rate(j, Deg0, &s, &scenario);
            assert_eq!(unscrambled.rate_per_pol[j.index()], r);
        }
        let direct_total: f64 = Polarization::ALL
            .iter()
            .map(|&j| strategy_rate(j, Deg0, &s, &scenario))
            .sum::<f64>()
            / 4.0;
        assert_eq!(unscrambled.rate_total, direct_total);

        let uniform = observables(&s, &ScramblingPolicy::uniform(), &scenario);
        let mut rate = 0.0;
        let mut err = 0.0;
        for j in Polarization::ALL {
            for t in ScramblingAngle::ALL {
                rate += 0.25 * 0.25 * strategy_rate(j, t, &s, &scenario);
                err += 0.25 * 0.25 * strategy_error(j, t, &s, &scenario);
            }
        }
        assert!((uniform.rate_total - rate).abs() < 1e-16);
        assert!((uniform.qber.unwrap() - err / rate).abs() < 1e-13);
    }

    #[test]
    fn restricted_embedding_is_bit_identical() {
        let scenario = AttackScenario::default();
        let r = RestrictedStrategy::new([0.3, 40.0, 2.0, 900.0]).unwrap();
        for policy in [ScramblingPolicy::none(), ScramblingPolicy::uniform()] {
            let a = observables(&r.into(), &policy, &scenario);
            let b = observables(&Strategy::Generalized(r.into()), &policy, &scenario);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn no_mismatch_means_no_scrambling_dependence() {
        let scenario = AttackScenario {
            map: EfficiencyMap::uniform(0.13).unwrap(),
            params: ReceiverParams::new([2e-6; 4], 0.97, ClickModel::PaperApprox).unwrap(),
            ..Default::default()
        };
        let s: Strategy = RestrictedStrategy::new([0.3, 1.0, 2.0, 0.5]).unwrap().into();
        let base = observables(&s, &ScramblingPolicy::fixed(Deg0), &scenario);
        for t in ScramblingAngle::ALL {
            let o = observables(&s, &ScramblingPolicy::fixed(t), &scenario);
            assert!((o.rate_total - base.rate_total).abs() < 1e-15);
            assert!((o.qber.unwrap() - base.qber.unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn honest_baseline_examples() {
        let p = ideal(ClickModel::PaperApprox);
        let opaque = HonestChannel::new(f64::INFINITY, 0.5).unwrap();
        assert_eq!(honest_baseline(&opaque, &p, 0.1).unwrap(), 0.0);

        let ch = HonestChannel::new(0.0, 0.5).unwrap();
        let got = honest_baseline(&ch, &p, 0.1).unwrap();
        let x: f64 = 0.025;
        let expect = (-x / 2.0 * 2.0).exp() * (1.0 - (-x).exp());
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        assert!((got - 0.024_080_487_527_618_7).abs() < 1e-12);

        let far = honest_baseline(&HonestChannel::new(30.0, 0.5).unwrap(), &p, 0.1).unwrap();
        let farther =
            honest_baseline(&HonestChannel::new(30.0 + 3.010_299_956_639_812, 0.5).unwrap(), &p, 0.1)
                .unwrap();
        assert!((far / farther - 2.0).abs() < 1e-3);
    }

    #[test]
    fn honest_baseline_ignores_scrambling() {
        let p = ReceiverParams::default();
        let ch = HonestChannel::new(5.0, 0.5).unwrap();
        let (strategy, scenario) = honest_setup(&ch, &p, 0.1).unwrap();
        let base = observables(&strategy, &ScramblingPolicy::none(), &scenario);
        for policy in [
            ScramblingPolicy::uniform(),
            ScramblingPolicy::fixed(Deg135),
            ScramblingPolicy::new([0.1, 0.2, 0.3, 0.4]).unwrap(),
        ] {
            let o = observables(&strategy, &policy, &scenario);
            assert!((o.rate_total - base.rate_total).abs() < 1e-16);
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            EveMeasurementModel::new(0.6, 0.1, 0.2),
            Err(ModelError::InvalidEveModel { .. })
        ));
        assert!(ScramblingPolicy::new([0.5, 0.5, 0.5, 0.0]).is_err());
        let mut f = [[0.25; 4]; 4];
        f[2] = [0.3, 0.3, 0.3, 0.0];
        let err = GeneralizedStrategy::new([[1.0; 4]; 4], f).unwrap_err();
        assert_eq!(err.to_string(), "f.D: weights must sum to 1, got 0.8999999999999999");
        assert!(RestrictedStrategy::new([1.0, -1.0, 0.0, 0.0]).is_err());
        assert!(HonestChannel::new(-1.0, 0.5).is_err());
        let eve = EveMeasurementModel::default();
        let p = ReceiverParams::default();
        let m = EfficiencyMap::default();
        assert!(conditional_rate(H, h(), Deg0, -0.1, &eve, &p, &m).is_err());
    }

    // Dihedral relabelings of the four polarizations that keep bases and
    // orthogonality intact, as (permutation, reverses rotation sense).
    const SYMMETRIES: [([usize; 4], bool); 8] = [
        ([0, 1, 2, 3], false),
        ([2, 3, 1, 0], false), // +45°: H->D, V->A, D->V, A->H
        ([1, 0, 3, 2], false), // +90°
        ([3, 2, 0, 1], false), // +135°
        ([1, 0, 2, 3], true),  // H<->V
        ([0, 1, 3, 2], true),  // D<->A
        ([2, 3, 0, 1], true),  // H<->D, V<->A
        ([3, 2, 1, 0], true),  // H<->A, V<->D
    ];

    proptest! {
        #[test]
        fn relabeling_equivariance(
            sym in 0usize..8,
            eta in proptest::array::uniform4(proptest::array::uniform4(0.0f64..0.5)),
            dark in proptest::array::uniform4(0.0f64..1e-3),
            mu in proptest::array::uniform4(proptest::array::uniform4(0.0f64..20.0)),
            raw_f in proptest::array::uniform4(proptest::array::uniform4(0.01f64..1.0)),
            fidelity in 0.5f64..=1.0,
            theta in 0usize..4,
        ) {
            let (perm, reflect) = SYMMETRIES[sym];
            let f = raw_f.map(|row| {
                let s: f64 = row.iter().sum();
                row.map(|x| x / s)
            });
            let mut peta = [[0.0; 4]; 4];
            let mut pdark = [0.0; 4];
            let mut pmu = [[0.0; 4]; 4];
            let mut pf = [[0.0; 4]; 4];
            for i in 0..4 {
                pdark[perm[i]] = dark[i];
                for k in 0..4 {
                    peta[perm[i]][perm[k]] = eta[i][k];
                    pmu[perm[i]][perm[k]] = mu[i][k];
                    pf[perm[i]][perm[k]] = f[i][k];
                }
            }
            let theta = ScramblingAngle::ALL[theta];
            let ptheta = if reflect { ScramblingAngle::ALL[(4 - theta.steps()) % 4] } else { theta };
            let scen = |eta, dark| AttackScenario {
                params: ReceiverParams::new(dark, fidelity, ClickModel::PaperApprox).unwrap(),
                map: EfficiencyMap::new(eta).unwrap(),
                eve: EveMeasurementModel::default(),
            };
            let a = observables(&GeneralizedStrategy::new(mu, f).unwrap().into(),
                &ScramblingPolicy::fixed(theta), &scen(eta, dark));
            let b = observables(&GeneralizedStrategy::new(pmu, pf).unwrap().into(),
                &ScramblingPolicy::fixed(ptheta), &scen(peta, pdark));
            prop_assert!((a.rate_total - b.rate_total).abs() <= 1e-14 * a.rate_total.max(1e-300));
            if let (Some(x), Some(y)) = (a.qber, b.qber) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn errors_never_exceed_rates(
            eta in proptest::array::uniform4(proptest::array::uniform4(0.0f64..1.0)),
            mu in proptest::array::uniform4(0.0f64..200.0),
            c in 0.0f64..0.01,
            w in proptest::array::uniform4(0.0f64..1.0),
        ) {
            let s: f64 = w.iter().sum::<f64>().max(1e-9);
            let policy = ScramblingPolicy::new(w.map(|x| if s == 1e-9 { 0.25 } else { x / s })).unwrap();
            let scenario = AttackScenario {
                params: ReceiverParams::new([c; 4], 0.95, ClickModel::PaperApprox).unwrap(),
                map: EfficiencyMap::new(eta).unwrap(),
                eve: EveMeasurementModel::default(),
            };
            let obs = observables(&RestrictedStrategy::new(mu).unwrap().into(), &policy, &scenario);
            for j in 0..4 {
                prop_assert!(obs.error_per_pol[j] <= obs.rate_per_pol[j] + 1e-12);
            }
        }

        #[test]
        fn enumeration_path_agrees(
            eta in proptest::array::uniform4(proptest::array::uniform4(0.0f64..1.0)),
            mu in proptest::array::uniform4(proptest::array::uniform4(0.0f64..30.0)),
            c in 0.0f64..1e-3,
            exact in any::<bool>(),
        ) {
            let model = if exact { ClickModel::ExactComplement } else { ClickModel::PaperApprox };
            let scenario = AttackScenario {
                params: ReceiverParams::new([c; 4], 0.9, model).unwrap(),
                map: EfficiencyMap::new(eta).unwrap(),
                eve: EveMeasurementModel::new(0.4, 0.05, 0.2).unwrap(),
            };
            let s: Strategy = GeneralizedStrategy::new(mu, [[0.1, 0.2, 0.3, 0.4]; 4]).unwrap().into();
            let a = observables(&s, &ScramblingPolicy::uniform(), &scenario);
            let b = observables_enumerated(&s, &ScramblingPolicy::uniform(), &scenario);
            prop_assert!((a.rate_total - b.rate_total).abs() < 1e-12);
            prop_assert!((a.error_total - b.error_total).abs() < 1e-12);
        }
    }
}
