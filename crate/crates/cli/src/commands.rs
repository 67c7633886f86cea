use std::io::Write;
use std::path::{Path, PathBuf};

use mismatch_core::attack::{observables, Strategy};
use mismatch_core::optimizer::{objective, optimize as run_optimize, sweep as run_sweep, StrategySpace};
use mismatch_core::oracle::{compare, random_suite, simulate_protocol, TrialConfig, ZScore};
use mismatch_core::receiver::ClickModel;
use serde::Serialize;

use crate::config::{LossRange, Scenario, ScenarioConfig};
use crate::error::CliError;
use crate::output::{
    print_json, write_json, write_matrix, CaseOut, EvalReport, OptimizeReport, Provenance, SelfTest,
    StrategyFile, SweepRow, ValidationReport, ZOut,
};

/// Shift used by the injected-defect self-test, in standard errors.
pub const DEFECT_SHIFT: f64 = 10.0;

fn write_csv<T: Serialize>(mut out: impl Write, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush().map_err(CliError::io("csv output"))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir.display().to_string()))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Other(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineRow {
    pub loss_db: f64,
    pub r_ab: f64,
}

pub fn baseline_rows(scenario: &Scenario, losses: &[f64]) -> Result<Vec<BaselineRow>, CliError> {
    losses
        .iter()
        .map(|&loss_db| {
            let channel = scenario.channel(loss_db)?;
            let r_ab = mismatch_core::attack::honest_baseline(
                &channel,
                &scenario.attack.params,
                scenario.nominal_eta,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(BaselineRow { loss_db, r_ab })
        })
        .collect()
}

pub fn baseline(cfg: &ScenarioConfig, losses: LossRange, csv_path: Option<&Path>) -> Result<(), CliError> {
    let scenario = cfg.build()?;
    let rows = baseline_rows(&scenario, &losses.points())?;
    write_csv(std::io::stdout().lock(), &rows)?;
    if let Some(p) = csv_path {
        let file = std::fs::File::create(p).map_err(CliError::io(p.display().to_string()))?;
        write_csv(file, &rows)?;
    }
    Ok(())
}

fn check_space(scenario: &Scenario, file: &StrategyFile) -> Result<(), CliError> {
    // restricted strategies embed in the generalized space, not the other way round
    if scenario.space == StrategySpace::Restricted4 && matches!(file, StrategyFile::Generalized32 { .. }) {
        return Err(CliError::Input(
            "strategy.space: generalized_32 strategy given but the config declares restricted_4".into(),
        ));
    }
    Ok(())
}

pub fn attack_eval(
    cfg: &ScenarioConfig,
    strategy_path: &Path,
    loss_db: Option<f64>,
    out: Option<&Path>,
) -> Result<EvalReport, CliError> {
    let scenario = cfg.build()?;
    let file = StrategyFile::load(strategy_path)?;
    check_space(&scenario, &file)?;
    let strategy = file.to_strategy()?;
    let loss_db = loss_db.unwrap_or(cfg.channel.loss_db);
    let problem = scenario
        .sweep_setup()
        .problem_at(loss_db, &scenario.optimizer)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let obj = objective(&strategy, &problem);
    let report = EvalReport {
        provenance: Provenance::new(cfg.sha256(), cfg.optimizer.seed),
        loss_db,
        r_ab: problem.targets.total,
        constraint: cfg.optimizer.constraint.as_str(),
        residual_max: obj.max_abs_residual(),
        residuals: obj.residuals,
        observables: (&obj.observables).into(),
    };
    match out {
        Some(p) => write_json(p, &report)?,
        None => print_json(&report)?,
    }
    Ok(report)
}

fn write_strategy_outputs(dir: &Path, report: &OptimizeReport) -> Result<(), CliError> {
    write_json(&dir.join("result.json"), report)?;
    write_json(&dir.join("strategy.json"), &report.strategy)?;
    let (f, mu) = report.strategy.matrices();
    write_matrix(&dir.join("f.csv"), &f)?;
    write_matrix(&dir.join("mu.csv"), &mu)
}

/// Runs one optimization and writes `result.json`, `strategy.json`, `f.csv`
/// and `mu.csv` into `out_dir`. An infeasible result is written before the
/// error is returned.
pub fn optimize(cfg: &ScenarioConfig, loss_db: Option<f64>, out_dir: &Path) -> Result<OptimizeReport, CliError> {
    let scenario = cfg.build()?;
    let loss_db = loss_db.unwrap_or(cfg.channel.loss_db);
    let problem = scenario
        .sweep_setup()
        .problem_at(loss_db, &scenario.optimizer)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let result = run_optimize(&problem, &scenario.optimizer).map_err(|e| CliError::Other(e.to_string()))?;
    let report = OptimizeReport::new(
        Provenance::new(cfg.sha256(), cfg.optimizer.seed),
        loss_db,
        problem.targets.total,
        cfg.optimizer.space.as_str(),
        cfg.optimizer.constraint.as_str(),
        &result,
    );
    create_dir(out_dir)?;
    write_strategy_outputs(out_dir, &report)?;
    println!(
        "loss_db={} qber={} feasible={} residual_max={:e}",
        report.loss_db, report.qber, report.feasible, report.residual_max
    );
    if !report.feasible {
        return Err(CliError::Infeasible(format!(
            "max |residual| {:e} above {:e}; result written to {}",
            report.residual_max,
            cfg.optimizer.feasibility_tol,
            out_dir.display()
        )));
    }
    Ok(report)
}

/// Writes `sweep.csv` plus `points/point_NNN/` (same files as `optimize`)
/// for each loss. Returns the rows; any infeasible or failed point makes
/// the command exit with the infeasibility code after everything is written.
pub fn sweep(
    cfg: &ScenarioConfig,
    losses: LossRange,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>, CliError> {
    let scenario = cfg.build()?;
    let points = losses.points();
    let setup = scenario.sweep_setup();
    let results = thread_pool(jobs)?
        .install(|| run_sweep(&points, &setup, &scenario.optimizer))
        .map_err(|e| CliError::Other(e.to_string()))?;

    create_dir(out_dir)?;
    let provenance = Provenance::new(cfg.sha256(), cfg.optimizer.seed);
    let mut rows = Vec::with_capacity(points.len());
    let mut bad = 0;
    for (i, (&loss_db, result)) in points.iter().zip(&results).enumerate() {
        let row = match result {
            Ok(r) => {
                let r_ab = setup
                    .problem_at(loss_db, &scenario.optimizer)
                    .map(|p| p.targets.total)
                    .map_err(|e| CliError::Other(e.to_string()))?;
                let rel = PathBuf::from("points").join(format!("point_{i:03}"));
                let dir = out_dir.join(&rel);
                create_dir(&dir)?;
                let report = OptimizeReport::new(
                    provenance.clone(),
                    loss_db,
                    r_ab,
                    cfg.optimizer.space.as_str(),
                    cfg.optimizer.constraint.as_str(),
                    r,
                );
                write_strategy_outputs(&dir, &report)?;
                log::info!("loss {loss_db} dB: qber {} feasible {}", r.qber, r.feasible);
                if !r.feasible {
                    bad += 1;
                }
                let obs = &r.observables;
                SweepRow {
                    loss_db,
                    r_ab: Some(r_ab),
                    rate_total: Some(obs.rate_total),
                    rate_h: Some(obs.rate_per_pol[0]),
                    rate_v: Some(obs.rate_per_pol[1]),
                    rate_d: Some(obs.rate_per_pol[2]),
                    rate_a: Some(obs.rate_per_pol[3]),
                    qber: Some(r.qber),
                    residual_max: Some(r.max_abs_residual()),
                    feasible: r.feasible,
                    restarts_used: Some(r.restarts_used),
                    evaluations: Some(r.evaluations),
                    strategy_path: rel.join("strategy.json").to_string_lossy().replace('\\', "/"),
                }
            }
            Err(e) => {
                log::warn!("loss {loss_db} dB: {e}");
                bad += 1;
                SweepRow {
                    loss_db,
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
                }
            }
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("sweep.csv");
    let file = std::fs::File::create(&csv_path).map_err(CliError::io(csv_path.display().to_string()))?;
    write_csv(file, &rows)?;
    println!("wrote {} points to {}", rows.len(), csv_path.display());
    if bad > 0 {
        return Err(CliError::Infeasible(format!("{bad} of {} points infeasible or failed", rows.len())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub trials: u64,
    pub seed: u64,
    pub scenarios: Option<usize>,
    pub inject_defect: bool,
    pub jobs: Option<usize>,
}

/// Seed for the trials of case `index`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn shifted(z: &ZScore, threshold: f64) -> ZScore {
    ZScore::new(z.analytic + DEFECT_SHIFT * z.standard_error, z.empirical, z.standard_error, threshold)
}

/// Monte Carlo check of the analytic model over a seeded suite of random
/// scenarios. The report is written even when some cases fail.
pub fn validate(cfg: &ScenarioConfig, opts: ValidateOptions, out: Option<&Path>) -> Result<ValidationReport, CliError> {
    cfg.build()?;
    if opts.trials == 0 {
        return Err(CliError::Config("--trials must be positive".into()));
    }
    let v = &cfg.validation;
    let count = opts.scenarios.unwrap_or(v.scenarios);
    if count == 0 {
        return Err(CliError::Config("--scenarios must be positive".into()));
    }
    let suite = random_suite(v.suite_seed, count, v.click_model);
    let pool = thread_pool(opts.jobs)?;

    let mut cases = Vec::with_capacity(count);
    let mut self_test = None;
    for (index, case) in suite.iter().enumerate() {
        let seed = trial_seed(opts.seed, index);
        let stats = pool.install(|| simulate_protocol(case, &TrialConfig { trials: opts.trials, seed }));
        let analytic = observables(&case.strategy, &case.policy, &case.scenario);
        let mut cmp = compare(&analytic, &stats, v.z_threshold);
        if index == 0 {
            let detected = !shifted(&cmp.rate, v.z_threshold).pass;
            self_test = Some(SelfTest {
                shift_standard_errors: DEFECT_SHIFT,
                detected,
            });
        }
        if opts.inject_defect {
            cmp.rate = shifted(&cmp.rate, v.z_threshold);
            cmp.qber = cmp.qber.map(|q| shifted(&q, v.z_threshold));
            cmp.pass = cmp.rate.pass && cmp.qber.is_none_or(|q| q.pass);
        }
        cases.push(CaseOut {
            index,
            strategy_space: match case.strategy {
                Strategy::Restricted(_) => "restricted_4",
                Strategy::Generalized(_) => "generalized_32",
            },
            trial_seed: seed,
            sifted: stats.sift_count,
            errors: stats.error_count,
            rate: (&cmp.rate).into(),
            qber: cmp.qber.as_ref().map(Into::into),
            degenerate: cmp.has_degenerate(),
            pass: cmp.pass,
        });
    }

    let self_test = self_test.expect("suite is non-empty");
    let passed = cases.iter().filter(|c| c.pass).count();
    let max_abs_z = cases
        .iter()
        .flat_map(|c| [Some(&c.rate), c.qber.as_ref()])
        .flatten()
        .filter_map(|z: &ZOut| z.z)
        .fold(0.0, |m: f64, z| m.max(z.abs()));
    let report = ValidationReport {
        provenance: Provenance::new(cfg.sha256(), opts.seed),
        trials: opts.trials,
        scenarios: count,
        suite_seed: v.suite_seed,
        click_model: match v.click_model {
            ClickModel::PaperApprox => "paper_approx",
            ClickModel::ExactComplement => "exact_complement",
        }
        .to_string(),
        z_threshold: v.z_threshold,
        defect_injected: opts.inject_defect,
        passed,
        failed: count - passed,
        degenerate: cases.iter().filter(|c| c.degenerate).count(),
        max_abs_z,
        pass: passed == count && self_test.detected,
        self_test,
        cases,
    };
    match out {
        Some(p) => write_json(p, &report)?,
        None => print_json(&report)?,
    }
    if !report.pass {
        return Err(CliError::Validation(format!(
            "{} of {} scenarios outside |z| <= {}; self-test detected defect: {}",
            report.failed, count, v.z_threshold, report.self_test.detected
        )));
    }
    Ok(report)
}
