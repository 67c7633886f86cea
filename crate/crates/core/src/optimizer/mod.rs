//! Eve's optimization: minimize QBER while keeping Bob's sifted rate equal
//! to what he expects from the honest line.
//!
//! Equality constraints are handled with a quadratic penalty on the rate
//! residuals (relative to the target rate), tightened over several rounds.
//! Each round runs Nelder–Mead on an unconstrained encoding: intensities in
//! log space, and every row of attack-angle probabilities as softmax logits.
//! Several seeded starting points run independently; the best feasible one
//! wins.

pub mod nelder_mead;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{
    honest_rates_per_pol, observables, AttackScenario, GeneralizedStrategy, HonestChannel,
    Observables, RestrictedStrategy, ScramblingPolicy, Strategy,
};
use crate::error::ModelError;
use nelder_mead::{minimize, NelderMeadOptions};

/// Smallest intensity reachable in log space; treated as vacuum.
pub const MU_FLOOR: f64 = 1e-12;

/// Logit given to off-target angles in the heuristic start.
const OFF_TARGET_LOGIT: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("honest sifted rate is zero at {loss_db} dB; nothing to match")]
    NoHonestRate { loss_db: f64 },
    #[error("target rate is zero; nothing to match")]
    ZeroTargetRate,
    #[error("sweep needs at least one loss point")]
    EmptyLossList,
    #[error("optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintMode {
    /// `R_e = R_ab`.
    TotalRate,
    /// `R_e(j) = R_ab` for each of Alice's polarizations.
    PerChannelRate,
}

impl ConstraintMode {
    pub fn constraint_count(self) -> usize {
        match self {
            ConstraintMode::TotalRate => 1,
            ConstraintMode::PerChannelRate => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategySpace {
    /// One intensity per polarization, always at that polarization's attack angle.
    Restricted4,
    /// Intensity and probability for every (polarization, attack angle) pair.
    Generalized32,
}

impl StrategySpace {
    fn dimension(self) -> usize {
        match self {
            StrategySpace::Restricted4 => 4,
            StrategySpace::Generalized32 => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    /// Nelder–Mead simplex size at which a round stops.
    pub inner_tol: f64,
    /// Evaluation budget of one Nelder–Mead run.
    pub inner_max_evals: usize,
    /// Largest absolute rate residual counted as feasible.
    pub feasibility_tol: f64,
    pub mu_max: f64,
    pub seed: u64,
    /// Match each `R_e(j)` to Alice's honest per-polarization rate instead
    /// of the common total `R_ab` (per-channel mode only).
    pub match_honest_per_polarization: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 64,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_rounds: 6,
            inner_tol: 1e-10,
            inner_max_evals: 4000,
            feasibility_tol: 1e-6,
            mu_max: 1e4,
            seed: 0,
            match_honest_per_polarization: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.restarts == 0 {
            return bad("restarts must be positive");
        }
        if !(self.penalty_init > 0.0) {
            return bad("penalty_init must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty_growth must exceed 1");
        }
        if self.penalty_rounds == 0 {
            return bad("penalty_rounds must be positive");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol must be positive");
        }
        if self.inner_max_evals == 0 {
            return bad("inner_max_evals must be positive");
        }
        if !(self.feasibility_tol > 0.0) {
            return bad("feasibility_tol must be positive");
        }
        if !(self.mu_max > MU_FLOOR) || !self.mu_max.is_finite() {
            return bad("mu_max must be finite and above the vacuum floor");
        }
        Ok(())
    }
}

/// Honest rates Eve has to reproduce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTargets {
    pub total: f64,
    pub per_pol: [f64; 4],
}

impl RateTargets {
    pub fn from_channel(
        channel: &HonestChannel,
        scenario: &AttackScenario,
        nominal_eta: f64,
    ) -> Result<Self, OptimizerError> {
        let (total, per_pol) = honest_rates_per_pol(channel, &scenario.params, nominal_eta)?;
        Ok(Self { total, per_pol })
    }
}

/// One constrained minimization problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub space: StrategySpace,
    pub mode: ConstraintMode,
    pub policy: ScramblingPolicy,
    pub scenario: AttackScenario,
    pub targets: RateTargets,
    pub match_honest_per_polarization: bool,
}

impl Problem {
    fn constraint_targets(&self) -> Vec<f64> {
        match self.mode {
            ConstraintMode::TotalRate => vec![self.targets.total],
            ConstraintMode::PerChannelRate if self.match_honest_per_polarization => {
                self.targets.per_pol.to_vec()
            }
            ConstraintMode::PerChannelRate => vec![self.targets.total; 4],
        }
    }
}

/// QBER and constraint residuals of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// QBER, or 1 when nothing is sifted.
    pub qber: f64,
    pub qber_defined: bool,
    /// `R_e - R_ab` (total mode) or `R_e(j) - R_ab` for H, V, D, A.
    pub residuals: Vec<f64>,
    pub observables: Observables,
}

impl Objective {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

pub fn objective(strategy: &Strategy, problem: &Problem) -> Objective {
    let obs = observables(strategy, &problem.policy, &problem.scenario);
    let targets = problem.constraint_targets();
    let residuals = match problem.mode {
        ConstraintMode::TotalRate => vec![obs.rate_total - targets[0]],
        ConstraintMode::PerChannelRate => obs
            .rate_per_pol
            .iter()
            .zip(&targets)
            .map(|(r, t)| r - t)
            .collect(),
    };
    Objective {
        qber: obs.qber.unwrap_or(1.0),
        qber_defined: obs.qber.is_some(),
        residuals,
        observables: obs,
    }
}

/// Maps unconstrained search vectors onto strategies.
#[derive(Debug, Clone, Copy)]
struct Encoding {
    space: StrategySpace,
    log_min: f64,
    log_max: f64,
}

impl Encoding {
    fn new(space: StrategySpace, mu_max: f64) -> Self {
        Self {
            space,
            log_min: MU_FLOOR.ln(),
            log_max: mu_max.ln(),
        }
    }

    fn mu(&self, y: f64) -> f64 {
        y.clamp(self.log_min, self.log_max).exp()
    }

    fn decode(&self, x: &[f64]) -> Strategy {
        match self.space {
            StrategySpace::Restricted4 => {
                let mu = std::array::from_fn(|i| self.mu(x[i]));
                Strategy::Restricted(RestrictedStrategy::new(mu).expect("encoded intensities are valid"))
            }
            StrategySpace::Generalized32 => {
                let mu = std::array::from_fn(|q| std::array::from_fn(|k| self.mu(x[4 * q + k])));
                let f = std::array::from_fn(|q| softmax(&x[16 + 4 * q..16 + 4 * q + 4]));
                Strategy::Generalized(GeneralizedStrategy::new(mu, f).expect("softmax rows are normalized"))
            }
        }
    }

    /// Vector with every polarization aimed at its own angle with intensity `mu`.
    fn targeted(&self, mu: [f64; 4]) -> Vec<f64> {
        match self.space {
            StrategySpace::Restricted4 => mu.iter().map(|m| m.max(MU_FLOOR).ln()).collect(),
            StrategySpace::Generalized32 => {
                let mut x = vec![0.0; 32];
                for q in 0..4 {
                    for k in 0..4 {
                        x[4 * q + k] = mu[q].max(MU_FLOOR).ln();
                        x[16 + 4 * q + k] = if q == k { 0.0 } else { OFF_TARGET_LOGIT };
                    }
                }
                x
            }
        }
    }

    /// Generalized vector close to an embedded restricted vector.
    fn embed_restricted(&self, restricted: &[f64]) -> Vec<f64> {
        let mu = std::array::from_fn(|q| restricted[q].exp());
        Encoding::new(StrategySpace::Generalized32, self.log_max.exp()).targeted(mu)
    }

    fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let log_mu = |rng: &mut R| rng.random_range(1e-3f64.ln()..1e2f64.ln());
        match self.space {
            StrategySpace::Restricted4 => (0..4).map(|_| log_mu(rng)).collect(),
            StrategySpace::Generalized32 => {
                let mut x = vec![0.0; 32];
                for v in x.iter_mut().take(16) {
                    *v = log_mu(rng);
                }
                // Dirichlet(1,1,1,1) rows via normalized exponentials; logits are the logs
                for q in 0..4 {
                    for k in 0..4 {
                        let e: f64 = Exp1.sample(rng);
                        x[16 + 4 * q + k] = e.max(f64::MIN_POSITIVE).ln();
                    }
                }
                x
            }
        }
    }
}

fn softmax(logits: &[f64]) -> [f64; 4] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; 4] = std::array::from_fn(|i| (logits[i] - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Summary of the incumbent after one penalty round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub penalty: f64,
    pub qber: f64,
    pub max_abs_residual: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub strategy: Strategy,
    pub qber: f64,
    pub residuals: Vec<f64>,
    pub feasible: bool,
    pub restarts_used: usize,
    /// Which starting point produced this result (0 = heuristic start). In
    /// the generalized space the last index is the embedded restricted optimum.
    pub best_restart: usize,
    pub evaluations: usize,
    /// Penalty rounds of the winning start.
    pub trace: Vec<RoundSummary>,
    pub observables: Observables,
    /// Encoded search vector, usable as a warm start.
    pub encoded: Vec<f64>,
}

impl OptimizationResult {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

struct StartOutcome {
    x: Vec<f64>,
    strategy: Strategy,
    objective: Objective,
    evaluations: usize,
    trace: Vec<RoundSummary>,
}

fn penalized(obj: &Objective, scales: &[f64], weight: f64) -> f64 {
    let p: f64 = obj
        .residuals
        .iter()
        .zip(scales)
        .map(|(r, s)| (r / s).powi(2))
        .sum();
    obj.qber + weight * p
}

fn run_start(problem: &Problem, enc: &Encoding, cfg: &OptimizerConfig, x0: Vec<f64>) -> StartOutcome {
    let scales: Vec<f64> = problem
        .constraint_targets()
        .iter()
        .map(|t| t.max(f64::MIN_POSITIVE))
        .collect();
    let eval = |x: &[f64]| objective(&enc.decode(x), problem);

    let mut x = x0;
    let mut incumbent = eval(&x);
    let mut evaluations = 1;
    let mut trace = Vec::with_capacity(cfg.penalty_rounds);
    for round in 0..cfg.penalty_rounds {
        let weight = cfg.penalty_init * cfg.penalty_growth.powi(round as i32);
        let opts = NelderMeadOptions {
            tol: cfg.inner_tol,
            max_evals: cfg.inner_max_evals,
            initial_step: if round == 0 { 0.5 } else { 0.1 },
        };
        let out = minimize(|y| penalized(&eval(y), &scales, weight), &x, &opts);
        evaluations += out.evals + 1;
        let candidate = eval(&out.x);
        // keep the incumbent's residual from growing between rounds
        if round == 0 || candidate.max_abs_residual() <= incumbent.max_abs_residual() {
            x = out.x;
            incumbent = candidate;
        }
        trace.push(RoundSummary {
            round,
            penalty: weight,
            qber: incumbent.qber,
            max_abs_residual: incumbent.max_abs_residual(),
            evaluations,
        });
    }
    StartOutcome {
        strategy: enc.decode(&x),
        x,
        objective: incumbent,
        evaluations,
        trace,
    }
}

/// Common intensity whose targeted strategy matches the total honest rate,
/// ignoring errors. Bisects in log space on the rising side of the rate curve.
fn matched_common_mu(problem: &Problem, enc: &Encoding, mu_max: f64) -> f64 {
    let rate = |log_mu: f64| {
        let mu = log_mu.exp();
        objective(&enc.decode(&enc.targeted([mu; 4])), problem)
            .observables
            .rate_total
    };
    let target = problem.targets.total;
    let mut lo = 1e-6f64.ln();
    if rate(lo) >= target {
        return lo.exp();
    }
    let top = mu_max.ln();
    let mut hi = lo;
    let mut best = (rate(lo), lo);
    loop {
        hi = (hi + std::f64::consts::LN_2).min(top);
        let r = rate(hi);
        if r > best.0 {
            best = (r, hi);
        }
        if r >= target {
            break;
        }
        if hi >= top {
            return best.1.exp();
        }
        lo = hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn starting_points(problem: &Problem, enc: &Encoding, cfg: &OptimizerConfig) -> Vec<Vec<f64>> {
    let mut starts = Vec::with_capacity(cfg.restarts);
    let mu = matched_common_mu(problem, enc, cfg.mu_max);
    starts.push(enc.targeted([mu; 4]));
    for i in 1..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        starts.push(enc.random(&mut rng));
    }
    starts
}

fn select(outcomes: Vec<(usize, StartOutcome)>, cfg: &OptimizerConfig) -> (usize, StartOutcome) {
    let feasible = |o: &StartOutcome| o.objective.max_abs_residual() <= cfg.feasibility_tol;
    let any_feasible = outcomes.iter().any(|(_, o)| feasible(o));
    outcomes
        .into_iter()
        .filter(|(_, o)| !any_feasible || feasible(o))
        .min_by(|(ia, a), (ib, b)| {
            let by_norm = a.objective.residual_norm().total_cmp(&b.objective.residual_norm());
            let primary = if any_feasible {
                a.objective.qber.total_cmp(&b.objective.qber).then(by_norm)
            } else {
                by_norm
            };
            primary.then(ia.cmp(ib))
        })
        .expect("at least one start")
}

/// Minimizes QBER under the rate-matching constraints.
pub fn optimize(problem: &Problem, cfg: &OptimizerConfig) -> Result<OptimizationResult, OptimizerError> {
    optimize_from(problem, cfg, None)
}

/// Like [`optimize`], with an extra starting point (e.g. the previous sweep point).
pub fn optimize_from(
    problem: &Problem,
    cfg: &OptimizerConfig,
    warm_start: Option<&[f64]>,
) -> Result<OptimizationResult, OptimizerError> {
    cfg.validate()?;
    if !(problem.targets.total > 0.0) {
        return Err(OptimizerError::ZeroTargetRate);
    }
    let enc = Encoding::new(problem.space, cfg.mu_max);
    let mut starts = starting_points(problem, &enc, cfg);
    if let Some(w) = warm_start.filter(|w| w.len() == problem.space.dimension()) {
        starts.push(w.to_vec());
    }
    let mut outcomes: Vec<(usize, StartOutcome)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, x0)| (i, run_start(problem, &enc, cfg, x0)))
        .collect();
    if problem.space == StrategySpace::Generalized32 {
        // the restricted optimum, embedded exactly, competes with the 32-D starts
        let sub = Problem {
            space: StrategySpace::Restricted4,
            ..*problem
        };
        let r = optimize_from(&sub, cfg, None)?;
        let strategy = Strategy::Generalized(r.strategy.as_generalized());
        outcomes.push((
            outcomes.len(),
            StartOutcome {
                x: enc.embed_restricted(&r.encoded),
                objective: objective(&strategy, problem),
                strategy,
                evaluations: r.evaluations,
                trace: r.trace,
            },
        ));
    }
    let restarts_used = outcomes.len();
    let evaluations = outcomes.iter().map(|(_, o)| o.evaluations).sum();
    let (best_restart, best) = select(outcomes, cfg);

    let obj = objective(&best.strategy, problem);
    Ok(OptimizationResult {
        strategy: best.strategy,
        qber: obj.qber,
        feasible: obj.max_abs_residual() <= cfg.feasibility_tol,
        residuals: obj.residuals,
        restarts_used,
        best_restart,
        evaluations,
        trace: best.trace,
        observables: obj.observables,
        encoded: best.x,
    })
}

/// Everything that stays fixed across the points of a loss sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetup {
    pub space: StrategySpace,
    pub mode: ConstraintMode,
    pub policy: ScramblingPolicy,
    pub scenario: AttackScenario,
    pub alice_mu: f64,
    pub nominal_eta: f64,
    pub warm_start: bool,
}

impl SweepSetup {
    pub fn problem_at(&self, loss_db: f64, cfg: &OptimizerConfig) -> Result<Problem, OptimizerError> {
        let channel = HonestChannel::new(loss_db, self.alice_mu)?;
        let targets = RateTargets::from_channel(&channel, &self.scenario, self.nominal_eta)?;
        if !(targets.total > 0.0) {
            return Err(OptimizerError::NoHonestRate { loss_db });
        }
        Ok(Problem {
            space: self.space,
            mode: self.mode,
            policy: self.policy,
            scenario: self.scenario,
            targets,
            match_honest_per_polarization: cfg.match_honest_per_polarization,
        })
    }
}

/// Optimizes every loss point. Results are in input order; a failing point
/// does not stop the sweep.
pub fn sweep(
    losses: &[f64],
    setup: &SweepSetup,
    cfg: &OptimizerConfig,
) -> Result<Vec<Result<OptimizationResult, OptimizerError>>, OptimizerError> {
    if losses.is_empty() {
        return Err(OptimizerError::EmptyLossList);
    }
    cfg.validate()?;
    let point = |loss: f64, warm: Option<&[f64]>| {
        let problem = setup.problem_at(loss, cfg)?;
        optimize_from(&problem, cfg, warm)
    };
    if setup.warm_start {
        let mut out: Vec<Result<OptimizationResult, OptimizerError>> = Vec::with_capacity(losses.len());
        for &loss in losses {
            let warm = out
                .iter()
                .rev()
                .find_map(|r| r.as_ref().ok())
                .map(|r| r.encoded.clone());
            out.push(point(loss, warm.as_deref()));
        }
        Ok(out)
    } else {
        Ok(losses.par_iter().map(|&loss| point(loss, None)).collect())
    }
}
