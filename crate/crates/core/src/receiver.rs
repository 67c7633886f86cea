//! Bob's four-detector passive-basis receiver.
//!
//! Light of polarization `pol` is optionally rotated by the scrambling
//! wave plate, split 50/50 between the HV and DA arms, and projected onto
//! the two detectors of each arm. Every detector's efficiency depends on
//! the spatial angle the light arrives from ([`AttackAngle`]), which is the
//! side channel Eve exploits.

use serde::{Deserialize, Serialize};

use crate::error::{check_intensity, check_range, ModelError, Result};

/// Measurement basis, either the rectilinear or the diagonal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Hv,
    Da,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Hv, Basis::Da];

    pub fn index(self) -> usize {
        match self {
            Basis::Hv => 0,
            Basis::Da => 1,
        }
    }

    pub fn other(self) -> Basis {
        match self {
            Basis::Hv => Basis::Da,
            Basis::Da => Basis::Hv,
        }
    }

    /// The two physical detectors measuring this basis.
    pub fn detectors(self) -> [DetectorId; 2] {
        match self {
            Basis::Hv => [DetectorId::H, DetectorId::V],
            Basis::Da => [DetectorId::D, DetectorId::A],
        }
    }
}

/// Polarization of a light pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
}

/// Order in which a 45° rotation advances a polarization.
const ROTATION_CYCLE: [Polarization; 4] = [
    Polarization::H,
    Polarization::D,
    Polarization::V,
    Polarization::A,
];

impl Polarization {
    pub const ALL: [Polarization; 4] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Polarization {
        Self::ALL[i]
    }

    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Hv,
            Polarization::D | Polarization::A => Basis::Da,
        }
    }

    /// Orthogonal partner in the same basis.
    pub fn orthogonal(self) -> Polarization {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::D => Polarization::A,
            Polarization::A => Polarization::D,
        }
    }

    /// The two polarizations of the conjugate basis.
    pub fn conjugates(self) -> [Polarization; 2] {
        match self.basis() {
            Basis::Hv => [Polarization::D, Polarization::A],
            Basis::Da => [Polarization::H, Polarization::V],
        }
    }

    /// Detector whose polarizing beam splitter port this polarization exits.
    pub fn aligned_detector(self) -> DetectorId {
        DetectorId::ALL[self.index()]
    }

    fn cycle_position(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::D => 1,
            Polarization::V => 2,
            Polarization::A => 3,
        }
    }

    /// Rotates the polarization by the scrambling angle.
    pub fn rotate(self, theta: ScramblingAngle) -> Polarization {
        ROTATION_CYCLE[(self.cycle_position() + theta.steps()) % 4]
    }

    /// Inverse of [`Polarization::rotate`].
    pub fn unrotate(self, theta: ScramblingAngle) -> Polarization {
        ROTATION_CYCLE[(self.cycle_position() + 4 - theta.steps()) % 4]
    }
}

/// One of Bob's four physical detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    #[serde(rename = "h")]
    H,
    #[serde(rename = "v")]
    V,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "a")]
    A,
}

impl DetectorId {
    pub const ALL: [DetectorId; 4] = [DetectorId::H, DetectorId::V, DetectorId::D, DetectorId::A];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> DetectorId {
        Self::ALL[i]
    }

    pub fn basis(self) -> Basis {
        self.polarization().basis()
    }

    /// The other detector of the same basis.
    pub fn partner(self) -> DetectorId {
        self.polarization().orthogonal().aligned_detector()
    }

    /// Polarization this detector registers when no rotation is applied.
    pub fn polarization(self) -> Polarization {
        Polarization::ALL[self.index()]
    }

    pub fn label(self) -> &'static str {
        match self {
            DetectorId::H => "h",
            DetectorId::V => "v",
            DetectorId::D => "d",
            DetectorId::A => "a",
        }
    }
}

/// Spatial direction at which one detector is most sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttackAngle(pub DetectorId);

impl AttackAngle {
    pub const ALL: [AttackAngle; 4] = [
        AttackAngle(DetectorId::H),
        AttackAngle(DetectorId::V),
        AttackAngle(DetectorId::D),
        AttackAngle(DetectorId::A),
    ];

    pub fn index(self) -> usize {
        self.0.index()
    }

    pub fn from_index(i: usize) -> AttackAngle {
        Self::ALL[i]
    }

    /// Attack angle targeting the detector aligned with `pol`.
    pub fn targeting(pol: Polarization) -> AttackAngle {
        AttackAngle(pol.aligned_detector())
    }
}

/// Polarization rotation applied by Bob's half-wave plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScramblingAngle {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl ScramblingAngle {
    pub const ALL: [ScramblingAngle; 4] = [
        ScramblingAngle::Deg0,
        ScramblingAngle::Deg45,
        ScramblingAngle::Deg90,
        ScramblingAngle::Deg135,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of 45° steps.
    pub fn steps(self) -> usize {
        self.index()
    }

    pub fn degrees(self) -> u32 {
        45 * self.steps() as u32
    }

    /// Applying `self` then `other` (angles add mod 180°).
    pub fn compose(self, other: ScramblingAngle) -> ScramblingAngle {
        Self::ALL[(self.steps() + other.steps()) % 4]
    }
}

/// How raw click probabilities combine dark counts with the light term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickModel {
    /// `min(1, c + 1 - exp(-x))`, the additive approximation.
    #[default]
    PaperApprox,
    /// `1 - (1 - c) exp(-x)`, dark counts and photons as independent causes.
    ExactComplement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    dark_counts: [f64; 4],
    fidelity: f64,
    click_model: ClickModel,
}

impl ReceiverParams {
    pub const DEFAULT_DARK_COUNT: f64 = 1e-6;
    pub const DEFAULT_FIDELITY: f64 = 0.98;

    pub fn new(dark_counts: [f64; 4], fidelity: f64, click_model: ClickModel) -> Result<Self> {
        for det in DetectorId::ALL {
            let c = dark_counts[det.index()];
            if !(c.is_finite() && (0.0..1.0).contains(&c)) {
                return Err(ModelError::OutOfRange {
                    field: format!("dark_counts.{}", det.label()),
                    value: c,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        check_range("fidelity", fidelity, 0.5, 1.0)?;
        Ok(Self {
            dark_counts,
            fidelity,
            click_model,
        })
    }

    pub fn dark_count(&self, det: DetectorId) -> f64 {
        self.dark_counts[det.index()]
    }

    pub fn dark_counts(&self) -> [f64; 4] {
        self.dark_counts
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn click_model(&self) -> ClickModel {
        self.click_model
    }

    pub fn with_click_model(mut self, click_model: ClickModel) -> Self {
        self.click_model = click_model;
        self
    }
}

impl Default for ReceiverParams {
    fn default() -> Self {
        Self {
            dark_counts: [Self::DEFAULT_DARK_COUNT; 4],
            fidelity: Self::DEFAULT_FIDELITY,
            click_model: ClickModel::PaperApprox,
        }
    }
}

/// Detection efficiency of each detector for light arriving at each attack angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMap {
    eta: [[f64; 4]; 4],
}

impl EfficiencyMap {
    pub const DEFAULT_MATCHED: f64 = 0.1;
    pub const DEFAULT_MISMATCHED: f64 = 0.001;

    /// `eta[detector][attack_angle]`.
    pub fn new(eta: [[f64; 4]; 4]) -> Result<Self> {
        for det in DetectorId::ALL {
            for angle in AttackAngle::ALL {
                let field = format!("eta.{}.{}", det.label(), angle.0.label());
                check_range(&field, eta[det.index()][angle.index()], 0.0, 1.0)?;
            }
        }
        Ok(Self { eta })
    }

    /// Each detector is `matched`-efficient at its own attack angle and
    /// `mismatched`-efficient at the other three.
    pub fn diagonal(matched: f64, mismatched: f64) -> Result<Self> {
        let mut eta = [[mismatched; 4]; 4];
        for (i, row) in eta.iter_mut().enumerate() {
            row[i] = matched;
        }
        Self::new(eta)
    }

    /// No mismatch: every entry equal.
    pub fn uniform(eta: f64) -> Result<Self> {
        Self::new([[eta; 4]; 4])
    }

    pub fn get(&self, det: DetectorId, angle: AttackAngle) -> f64 {
        self.eta[det.index()][angle.index()]
    }

    pub fn table(&self) -> [[f64; 4]; 4] {
        self.eta
    }

    /// True if no detector's efficiency depends on the attack angle.
    pub fn is_angle_independent(&self) -> bool {
        self.eta.iter().all(|row| row.iter().all(|&e| e == row[0]))
    }
}

impl Default for EfficiencyMap {
    fn default() -> Self {
        Self::diagonal(Self::DEFAULT_MATCHED, Self::DEFAULT_MISMATCHED)
            .expect("default efficiency map is valid")
    }
}

/// Fraction of the pulse intensity reaching `det`, including the 50/50 basis split.
pub fn overlap_factor(
    pol: Polarization,
    theta: ScramblingAngle,
    det: DetectorId,
    fidelity: f64,
) -> f64 {
    let rotated = pol.rotate(theta);
    if rotated.aligned_detector() == det {
        fidelity / 2.0
    } else if rotated.orthogonal().aligned_detector() == det {
        (1.0 - fidelity) / 2.0
    } else {
        0.25
    }
}

/// Click probability from a dark count probability and a detected mean photon number.
pub(crate) fn combine_click(model: ClickModel, dark: f64, detected_mu: f64) -> f64 {
    // 1 - exp(-x) without cancellation for tiny x
    let light = -(-detected_mu).exp_m1();
    match model {
        ClickModel::PaperApprox => (dark + light).min(1.0),
        ClickModel::ExactComplement => dark + (1.0 - dark) * light,
    }
}

/// Raw click probability at `det` for a pulse of polarization `pol` and mean
/// photon number `mu`, sent at `angle` and rotated by `theta` at the receiver.
pub fn raw_click_prob(
    det: DetectorId,
    pol: Polarization,
    angle: AttackAngle,
    mu: f64,
    theta: ScramblingAngle,
    params: &ReceiverParams,
    map: &EfficiencyMap,
) -> Result<f64> {
    check_intensity("mu", mu)?;
    Ok(click_prob_unchecked(det, pol, angle, mu, theta, params, map))
}

#[inline]
pub(crate) fn click_prob_unchecked(
    det: DetectorId,
    pol: Polarization,
    angle: AttackAngle,
    mu: f64,
    theta: ScramblingAngle,
    params: &ReceiverParams,
    map: &EfficiencyMap,
) -> f64 {
    let detected = mu * overlap_factor(pol, theta, det, params.fidelity()) * map.get(det, angle);
    combine_click(params.click_model(), params.dark_count(det), detected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use Polarization::*;
    use ScramblingAngle::*;

    fn params(c: f64, f: f64, model: ClickModel) -> ReceiverParams {
        ReceiverParams::new([c; 4], f, model).unwrap()
    }

    fn single_entry_map(det: DetectorId, angle: DetectorId) -> EfficiencyMap {
        let mut eta = [[0.0; 4]; 4];
        eta[det.index()][angle.index()] = 1.0;
        EfficiencyMap::new(eta).unwrap()
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(H.rotate(Deg0), H);
        assert_eq!(H.rotate(Deg45), D);
        assert_eq!(H.rotate(Deg90), V);
        assert_eq!(D.rotate(Deg45), V);
        assert_eq!(V.rotate(Deg90), H);
    }

    #[test]
    fn rotation_is_a_four_cycle() {
        for p in Polarization::ALL {
            let mut q = p;
            for _ in 0..4 {
                q = q.rotate(Deg45);
            }
            assert_eq!(q, p);
            for t in ScramblingAngle::ALL {
                assert_eq!(p.rotate(t).unrotate(t), p);
                for u in ScramblingAngle::ALL {
                    assert_eq!(p.rotate(t).rotate(u), p.rotate(t.compose(u)));
                }
            }
        }
    }

    #[test]
    fn partners_and_conjugates() {
        assert_eq!(H.orthogonal(), V);
        assert_eq!(D.orthogonal(), A);
        assert_eq!(H.conjugates(), [D, A]);
        assert_eq!(A.conjugates(), [H, V]);
        assert_eq!(DetectorId::D.partner(), DetectorId::A);
        assert_eq!(DetectorId::V.basis(), Basis::Hv);
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_factor(H, Deg0, DetectorId::H, 1.0), 0.5);
        assert_eq!(overlap_factor(H, Deg0, DetectorId::V, 1.0), 0.0);
        assert_eq!(overlap_factor(H, Deg0, DetectorId::D, 0.98), 0.25);
        assert_eq!(overlap_factor(H, Deg45, DetectorId::D, 0.98), 0.49);
        assert!((overlap_factor(H, Deg90, DetectorId::H, 0.98) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn click_examples() {
        let p0 = params(0.0, 1.0, ClickModel::PaperApprox);
        let hh = single_entry_map(DetectorId::H, DetectorId::H);
        let h = AttackAngle(DetectorId::H);
        let got = raw_click_prob(DetectorId::H, H, h, 0.0, Deg0, &p0, &hh).unwrap();
        assert_eq!(got, 0.0);
        let got = raw_click_prob(DetectorId::H, H, h, 2.0, Deg0, &p0, &hh).unwrap();
        assert!((got - 0.632_120_558_828_557_7).abs() < 1e-15);
        let all = EfficiencyMap::uniform(1.0).unwrap();
        let got = raw_click_prob(DetectorId::V, H, h, 5.0, Deg0, &p0, &all).unwrap();
        assert_eq!(got, 0.0);
        let dh = single_entry_map(DetectorId::D, DetectorId::H);
        let got = raw_click_prob(DetectorId::D, H, h, 2.0, Deg0, &p0, &dh).unwrap();
        assert!((got - 0.393_469_340_287_366_6).abs() < 1e-15);
    }

    #[test]
    fn negative_intensity_rejected() {
        let p = ReceiverParams::default();
        let m = EfficiencyMap::default();
        let err = raw_click_prob(DetectorId::H, H, AttackAngle(DetectorId::H), -1.0, Deg0, &p, &m);
        assert!(matches!(err, Err(ModelError::NegativeIntensity { .. })));
    }

    #[test]
    fn paper_approx_clamps_to_one() {
        let p = params(0.5, 1.0, ClickModel::PaperApprox);
        let m = EfficiencyMap::uniform(1.0).unwrap();
        let got =
            raw_click_prob(DetectorId::H, H, AttackAngle(DetectorId::H), 100.0, Deg0, &p, &m).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ReceiverParams::new([1.0, 0.0, 0.0, 0.0], 0.9, ClickModel::PaperApprox).is_err());
        assert!(ReceiverParams::new([0.0; 4], 0.4, ClickModel::PaperApprox).is_err());
        assert!(EfficiencyMap::diagonal(1.2, 0.0).is_err());
        let err = EfficiencyMap::diagonal(0.1, -0.1).unwrap_err();
        assert!(err.to_string().starts_with("eta.h.v"));
    }

    fn arb_model() -> impl Strategy<Value = ClickModel> {
        prop_oneof![Just(ClickModel::PaperApprox), Just(ClickModel::ExactComplement)]
    }

    proptest! {
        #[test]
        fn monotone_in_mu_eta_and_dark(
            model in arb_model(),
            pol in 0usize..4, det in 0usize..4, angle in 0usize..4, theta in 0usize..4,
            mu in 0.0f64..50.0, dmu in 0.0f64..10.0,
            eta in 0.0f64..0.9, deta in 0.0f64..0.1,
            c in 0.0f64..0.5, dc in 0.0f64..0.4,
            f in 0.5f64..=1.0,
        ) {
            let pol = Polarization::from_index(pol);
            let det = DetectorId::from_index(det);
            let angle = AttackAngle::from_index(angle);
            let theta = ScramblingAngle::ALL[theta];
            let base_p = params(c, f, model);
            let m = EfficiencyMap::uniform(eta).unwrap();
            let base = raw_click_prob(det, pol, angle, mu, theta, &base_p, &m).unwrap();
            let more_mu = raw_click_prob(det, pol, angle, mu + dmu, theta, &base_p, &m).unwrap();
            let more_eta = raw_click_prob(det, pol, angle, mu, theta, &base_p,
                &EfficiencyMap::uniform(eta + deta).unwrap()).unwrap();
            let more_c = raw_click_prob(det, pol, angle, mu, theta, &params(c + dc, f, model), &m).unwrap();
            prop_assert!(more_mu >= base);
            prop_assert!(more_eta >= base);
            prop_assert!(more_c >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn zero_intensity_gives_dark_count(model in arb_model(), c in 0.0f64..0.9, det in 0usize..4) {
            let det = DetectorId::from_index(det);
            let p = params(c, 0.9, model);
            let got = raw_click_prob(det, H, AttackAngle(DetectorId::V), 0.0, Deg45, &p,
                &EfficiencyMap::default()).unwrap();
            prop_assert_eq!(got, c);
        }

        #[test]
        fn exact_complement_below_paper_approx(
            c in 0.0f64..1e-4, mu in 0.0f64..20.0, eta in 0.0f64..1.0,
            pol in 0usize..4, det in 0usize..4, theta in 0usize..4,
        ) {
            let pol = Polarization::from_index(pol);
            let det = DetectorId::from_index(det);
            let theta = ScramblingAngle::ALL[theta];
            let m = EfficiencyMap::uniform(eta).unwrap();
            let angle = AttackAngle(DetectorId::H);
            let approx = raw_click_prob(det, pol, angle, mu, theta,
                &params(c, 0.95, ClickModel::PaperApprox), &m).unwrap();
            let exact = raw_click_prob(det, pol, angle, mu, theta,
                &params(c, 0.95, ClickModel::ExactComplement), &m).unwrap();
            let x = mu * overlap_factor(pol, theta, det, 0.95) * eta;
            prop_assert!(exact <= approx + 1e-15);
            prop_assert!(approx - exact <= c * c + c * x + 1e-15);
        }

        #[test]
        fn detector_relabeling_is_equivariant(
            perm_seed in 0usize..24,
            dark in proptest::array::uniform4(0.0f64..1e-3),
            eta in proptest::array::uniform4(proptest::array::uniform4(0.0f64..1.0)),
            mu in 0.0f64..10.0, pol in 0usize..4, angle in 0usize..4, theta in 0usize..4,
        ) {
            // Permuting the stored rows of the dark-count and efficiency tables
            // together with the detector being queried leaves the result unchanged.
            let perm = nth_permutation(perm_seed);
            let pol = Polarization::from_index(pol);
            let angle = AttackAngle::from_index(angle);
            let theta = ScramblingAngle::ALL[theta];
            let p = ReceiverParams::new(dark, 0.97, ClickModel::ExactComplement).unwrap();
            let m = EfficiencyMap::new(eta).unwrap();
            for det in DetectorId::ALL {
                let base = raw_click_prob(det, pol, angle, mu, theta, &p, &m).unwrap();
                let x = mu * overlap_factor(pol, theta, det, 0.97);
                let slot = perm[det.index()];
                let mut pdark = [0.0; 4];
                let mut peta = [[0.0; 4]; 4];
                for i in 0..4 {
                    pdark[perm[i]] = dark[i];
                    peta[perm[i]] = eta[i];
                }
                let moved = combine_click(ClickModel::ExactComplement, pdark[slot],
                    x * peta[slot][angle.index()]);
                prop_assert_eq!(base, moved);
            }
        }
    }

    fn nth_permutation(mut n: usize) -> [usize; 4] {
        let mut pool = vec![0, 1, 2, 3];
        let mut out = [0; 4];
        for (i, slot) in out.iter_mut().enumerate() {
            let fact = [6, 2, 1, 1][i];
            *slot = pool.remove(n / fact);
            n %= fact;
        }
        out
    }
}
