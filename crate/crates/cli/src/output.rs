//! File formats written and read by the CLI.

use std::io::Write;
use std::path::Path;

use mismatch_core::attack::{GeneralizedStrategy, Observables, RestrictedStrategy, Strategy};
use mismatch_core::optimizer::{OptimizationResult, RoundSummary};
use mismatch_core::oracle::ZScore;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Values for Alice's or Eve's polarizations, keyed H, V, D, A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerPol<T> {
    #[serde(rename = "H")]
    pub h: T,
    #[serde(rename = "V")]
    pub v: T,
    #[serde(rename = "D")]
    pub d: T,
    #[serde(rename = "A")]
    pub a: T,
}

impl<T: Copy> PerPol<T> {
    pub fn from_array(x: [T; 4]) -> Self {
        Self { h: x[0], v: x[1], d: x[2], a: x[3] }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.h, self.v, self.d, self.a]
    }
}

/// Strategy file. Rows are the polarization Eve resends; in the generalized
/// form each row lists attack angles h, v, d, a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "space")]
pub enum StrategyFile {
    #[serde(rename = "restricted_4")]
    Restricted4 { mu: PerPol<f64> },
    #[serde(rename = "generalized_32")]
    Generalized32 {
        mu: PerPol<[f64; 4]>,
        f: PerPol<[f64; 4]>,
    },
}

impl From<&Strategy> for StrategyFile {
    fn from(s: &Strategy) -> Self {
        match s {
            Strategy::Restricted(r) => StrategyFile::Restricted4 {
                mu: PerPol::from_array(r.mu()),
            },
            Strategy::Generalized(g) => StrategyFile::Generalized32 {
                mu: PerPol::from_array(g.mu()),
                f: PerPol::from_array(g.f()),
            },
        }
    }
}

impl StrategyFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Restricted {
            #[allow(dead_code)]
            space: String,
            mu: PerPol<f64>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Generalized {
            #[allow(dead_code)]
            space: String,
            mu: PerPol<[f64; 4]>,
            f: PerPol<[f64; 4]>,
        }
        fn typed<'de, T: Deserialize<'de>>(v: &'de serde_json::Value) -> Result<T, CliError> {
            serde_path_to_error::deserialize(v)
                .map_err(|e| CliError::Input(format!("strategy.{}: {}", e.path(), e.inner())))
        }

        // tag first, then the matching shape, so errors keep their field path
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Input(format!("strategy: {e}")))?;
        match value.get("space").and_then(|s| s.as_str()) {
            Some("restricted_4") => {
                let r: Restricted = typed(&value)?;
                Ok(StrategyFile::Restricted4 { mu: r.mu })
            }
            Some("generalized_32") => {
                let g: Generalized = typed(&value)?;
                Ok(StrategyFile::Generalized32 { mu: g.mu, f: g.f })
            }
            _ => Err(CliError::Input(
                "strategy.space: expected \"restricted_4\" or \"generalized_32\"".into(),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks simplex and sign constraints.
    pub fn to_strategy(&self) -> Result<Strategy, CliError> {
        let bad = |e: mismatch_core::ModelError| CliError::Input(format!("strategy.{e}"));
        Ok(match *self {
            StrategyFile::Restricted4 { mu } => RestrictedStrategy::new(mu.to_array()).map_err(bad)?.into(),
            StrategyFile::Generalized32 { mu, f } => {
                GeneralizedStrategy::new(mu.to_array(), f.to_array()).map_err(bad)?.into()
            }
        })
    }

    /// 4×4 `(f, mu)` tables; restricted strategies are shown embedded.
    pub fn matrices(&self) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let g = self.to_strategy().expect("written strategies are valid").as_generalized();
        (g.f(), g.mu())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservablesOut {
    pub rate_total: f64,
    pub rate_per_pol: PerPol<f64>,
    pub error_total: f64,
    pub error_per_pol: PerPol<f64>,
    pub qber: Option<f64>,
}

impl From<&Observables> for ObservablesOut {
    fn from(o: &Observables) -> Self {
        Self {
            rate_total: o.rate_total,
            rate_per_pol: PerPol::from_array(o.rate_per_pol),
            error_total: o.error_total,
            error_per_pol: PerPol::from_array(o.error_per_pol),
            qber: o.qber,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config_sha256,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub loss_db: f64,
    pub r_ab: f64,
    pub constraint: &'static str,
    pub residuals: Vec<f64>,
    pub residual_max: f64,
    pub observables: ObservablesOut,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOut {
    pub round: usize,
    pub penalty: f64,
    pub qber: f64,
    pub residual_max: f64,
    pub evaluations: usize,
}

impl From<&RoundSummary> for RoundOut {
    fn from(r: &RoundSummary) -> Self {
        Self {
            round: r.round,
            penalty: r.penalty,
            qber: r.qber,
            residual_max: r.max_abs_residual,
            evaluations: r.evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub provenance: Provenance,
    pub loss_db: f64,
    pub r_ab: f64,
    pub space: &'static str,
    pub constraint: &'static str,
    pub qber: f64,
    pub qber_defined: bool,
    pub feasible: bool,
    pub residuals: Vec<f64>,
    pub residual_max: f64,
    pub restarts_used: usize,
    pub best_restart: usize,
    pub evaluations: usize,
    pub observables: ObservablesOut,
    pub strategy: StrategyFile,
    pub trace: Vec<RoundOut>,
}

impl OptimizeReport {
    pub fn new(
        provenance: Provenance,
        loss_db: f64,
        r_ab: f64,
        space: &'static str,
        constraint: &'static str,
        r: &OptimizationResult,
    ) -> Self {
        Self {
            provenance,
            loss_db,
            r_ab,
            space,
            constraint,
            qber: r.qber,
            qber_defined: r.observables.qber.is_some(),
            feasible: r.feasible,
            residuals: r.residuals.clone(),
            residual_max: r.max_abs_residual(),
            restarts_used: r.restarts_used,
            best_restart: r.best_restart,
            evaluations: r.evaluations,
            observables: (&r.observables).into(),
            strategy: (&r.strategy).into(),
            trace: r.trace.iter().map(Into::into).collect(),
        }
    }
}

/// One row of the sweep table. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub loss_db: f64,
    pub r_ab: Option<f64>,
    pub rate_total: Option<f64>,
    pub rate_h: Option<f64>,
    pub rate_v: Option<f64>,
    pub rate_d: Option<f64>,
    pub rate_a: Option<f64>,
    pub qber: Option<f64>,
    pub residual_max: Option<f64>,
    pub feasible: bool,
    pub restarts_used: Option<usize>,
    pub evaluations: Option<usize>,
    pub strategy_path: String,
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "loss_db",
    "r_ab",
    "rate_total",
    "rate_h",
    "rate_v",
    "rate_d",
    "rate_a",
    "qber",
    "residual_max",
    "feasible",
    "restarts_used",
    "evaluations",
    "strategy_path",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZOut {
    pub analytic: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub z: Option<f64>,
    pub pass: bool,
}

impl From<&ZScore> for ZOut {
    fn from(z: &ZScore) -> Self {
        Self {
            analytic: z.analytic,
            empirical: z.empirical,
            standard_error: z.standard_error,
            z: z.z,
            pass: z.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOut {
    pub index: usize,
    pub strategy_space: &'static str,
    pub trial_seed: u64,
    pub sifted: u64,
    pub errors: u64,
    pub rate: ZOut,
    pub qber: Option<ZOut>,
    pub degenerate: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTest {
    /// Shift applied to the analytic rate of case 0, in standard errors.
    pub shift_standard_errors: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub provenance: Provenance,
    pub trials: u64,
    pub scenarios: usize,
    pub suite_seed: u64,
    pub click_model: String,
    pub z_threshold: f64,
    pub defect_injected: bool,
    pub passed: usize,
    pub failed: usize,
    pub degenerate: usize,
    pub max_abs_z: f64,
    pub self_test: SelfTest,
    pub pass: bool,
    pub cases: Vec<CaseOut>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path.display().to_string()))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(CliError::io("stdout"))
}

/// `pol,h,v,d,a` table with one row per resent polarization.
pub fn write_matrix(path: &Path, m: &[[f64; 4]; 4]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["pol", "h", "v", "d", "a"]).map_err(err)?;
    for (pol, row) in ["H", "V", "D", "A"].iter().zip(m) {
        let mut rec = vec![pol.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(CliError::io(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_round_trip() {
        let s: Strategy = RestrictedStrategy::new([0.1, 0.2, 0.3, 0.4]).unwrap().into();
        let file = StrategyFile::from(&s);
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"space\":\"restricted_4\""));
        let back = StrategyFile::parse(&text).unwrap().to_strategy().unwrap();
        assert_eq!(back, s);

        let g: Strategy = GeneralizedStrategy::from(RestrictedStrategy::uniform(2.0).unwrap()).into();
        let text = serde_json::to_string(&StrategyFile::from(&g)).unwrap();
        assert_eq!(StrategyFile::parse(&text).unwrap().to_strategy().unwrap(), g);
    }

    #[test]
    fn bad_row_sum_names_the_row() {
        let text = r#"{"space":"generalized_32",
            "mu":{"H":[1,1,1,1],"V":[1,1,1,1],"D":[1,1,1,1],"A":[1,1,1,1]},
            "f":{"H":[1,0,0,0],"V":[0,0.9,0,0],"D":[0,0,1,0],"A":[0,0,0,1]}}"#;
        let err = StrategyFile::parse(text).unwrap().to_strategy().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("strategy.f.V"), "{err}");
    }

    #[test]
    fn negative_intensity_and_bad_shape() {
        let err = StrategyFile::parse(r#"{"space":"restricted_4","mu":{"H":1,"V":-1,"D":1,"A":1}}"#)
            .unwrap()
            .to_strategy()
            .unwrap_err();
        assert!(err.to_string().contains("strategy.mu.V"), "{err}");
        let err = StrategyFile::parse(r#"{"space":"restricted_4","mu":{"H":1,"V":1,"D":1}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let err = StrategyFile::parse(r#"{"space":"restricted_4","mu":{"H":1,"V":"x","D":1,"A":1}}"#).unwrap_err();
        assert!(err.to_string().contains("mu.V"), "{err}");
    }

    #[test]
    fn sweep_columns_follow_the_row_struct() {
        let row = SweepRow {
            loss_db: 0.0,
            r_ab: None,
            rate_total: None,
            rate_h: None,
            rate_v: None,
            rate_d: None,
            rate_a: None,
            qber: None,
            residual_max: None,
            feasible: false,
            restarts_used: None,
            evaluations: None,
            strategy_path: String::new(),
        };
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_COLUMNS.join(","));
    }
}
