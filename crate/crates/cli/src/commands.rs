use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use vreach::engine::{
    default_curve_grid, evaluate_policy, offline_prepare, solve_full, verify as verify_online,
    with_khat, EngineError, KhatPolicy, OfflineArtifact, PrepareOptions, VerificationReport,
};
use vreach::milp::{self, SolveOptions};
use vreach::partition::{wss_curve, PartitionModel, WssCurve};
use vreach::rendezvous::{build_cwh_system, CwhConfig};
use vreach::scenarios::{
    derive_seed, required_scenarios, HoeffdingQuery, NoiseModel, ScenarioMetadata,
};
use vreach::sets::{InputBox, ReachAvoidSpec, SpecFile};
use vreach::system::LtiSystem;
use vreach::Matrix;

use crate::output::{ensure_dir, parse_grid, read_json, write_json, write_text, Csv};
use crate::{Mode, PrepareArgs, ProblemArgs, SweepArgs, VerifyArgs};

/// Above this many scenarios the full program is likely intractable.
const FULL_MODE_WARN_K: usize = 200;

pub enum Outcome {
    Done,
    /// A solve stopped at the node limit; reported bounds remain valid.
    BudgetExceeded,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(e) => match e {
                EngineError::Milp(_) | EngineError::Partition(_) => 1,
                _ => 2,
            },
            CliError::Internal(_) => 1,
        }
    }
}

impl From<vreach::sets::SetError> for CliError {
    fn from(e: vreach::sets::SetError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<vreach::scenarios::ScenarioError> for CliError {
    fn from(e: vreach::scenarios::ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<vreach::partition::PartitionError> for CliError {
    fn from(e: vreach::partition::PartitionError) -> Self {
        CliError::Engine(e.into())
    }
}

impl From<vreach::milp::MilpError> for CliError {
    fn from(e: vreach::milp::MilpError) -> Self {
        CliError::Engine(e.into())
    }
}

pub fn sample_size(delta: f64, beta: f64) -> Result<Outcome, CliError> {
    let q = HoeffdingQuery::new(delta, beta)?;
    println!("{}", required_scenarios(&q));
    Ok(Outcome::Done)
}

pub fn rendezvous_config(out: &Path) -> Result<Outcome, CliError> {
    ensure_dir(out)?;
    let cfg = CwhConfig::default();
    let sys = build_cwh_system(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    write_json(&out.join("rendezvous.json"), &cfg)?;
    write_json(&out.join("system.json"), &sys)?;
    write_json(&out.join("spec.json"), &cfg.spec_file())?;
    write_json(&out.join("noise.json"), &cfg.noise())?;
    Ok(Outcome::Done)
}

struct Problem {
    sys: LtiSystem,
    spec: ReachAvoidSpec,
    input_box: InputBox,
    noise: NoiseModel,
    k: usize,
}

fn load_problem(args: &ProblemArgs) -> Result<Problem, CliError> {
    let sys: LtiSystem = read_json(&args.system)?;
    let spec_file: SpecFile = read_json(&args.spec)?;
    let (spec, input_box) = spec_file.into_parts()?;
    let noise: NoiseModel = read_json(&args.noise)?;
    let k = match (args.k, args.delta, args.beta) {
        (Some(k), None, None) if k > 0 => k,
        (None, Some(d), Some(b)) => required_scenarios(&HoeffdingQuery::new(d, b)?),
        (Some(_), _, _) => return Err(CliError::Config("--K must be positive".into())),
        _ => {
            return Err(CliError::Config(
                "give either --K or both --delta and --beta".into(),
            ))
        }
    };
    Ok(Problem {
        sys,
        spec,
        input_box,
        noise,
        k,
    })
}

fn prepare_problem(p: &Problem, opts: &PrepareOptions) -> Result<OfflineArtifact, CliError> {
    Ok(offline_prepare(&p.sys, &p.spec, &p.input_box, &p.noise, opts)?.0)
}

#[derive(Serialize)]
struct PrepareTimingFile {
    sampling: f64,
    curve: f64,
    clustering: f64,
    buffers: f64,
    total: f64,
    curve_seconds: Vec<f64>,
}

pub fn prepare(args: &PrepareArgs) -> Result<Outcome, CliError> {
    let problem = load_problem(&args.problem)?;
    let grid = args.grid.as_deref().map(parse_grid).transpose()?;
    let policy = if let Some(khat) = args.khat {
        KhatPolicy::Fixed { khat }
    } else if args.knee {
        KhatPolicy::Knee { grid: grid.clone() }
    } else if let Some(seconds) = args.budget_s {
        KhatPolicy::Budget {
            seconds,
            grid: grid.clone(),
        }
    } else {
        return Err(CliError::Config(
            "choose one of --khat, --knee, --budget-s".into(),
        ));
    };
    let mut opts = PrepareOptions::new(problem.k, policy, args.problem.seed);
    opts.restarts = args.restarts;
    opts.calibration_x0 = args.x0.clone();
    if let Some(path) = &args.initial_noise {
        opts.initial_noise = Some(read_json(path)?);
    }
    let (artifact, timings) = offline_prepare(
        &problem.sys,
        &problem.spec,
        &problem.input_box,
        &problem.noise,
        &opts,
    )?;

    let curve = match &artifact.wss_curve {
        Some(c) if grid.as_ref().is_none_or(|g| *g == c.khat_values) => c.clone(),
        _ => {
            let grid = grid.unwrap_or_else(|| default_curve_grid(problem.k));
            if grid.iter().any(|&g| g == 0 || g > problem.k) {
                return Err(CliError::Config(format!(
                    "grid values must lie in 1..={}",
                    problem.k
                )));
            }
            wss_curve(&artifact.predictions.phi, &grid, opts.restarts, opts.seed)?
        }
    };

    let out = &args.out;
    ensure_dir(out)?;
    write_json(&out.join("artifact.json"), &artifact)?;
    write_wss_csv(&out.join("wss_curve.csv"), &curve)?;
    let file = File::create(out.join("scenarios.csv"))
        .map_err(|e| CliError::Config(format!("cannot write scenarios.csv: {e}")))?;
    artifact.scenarios.write_csv(BufWriter::new(file))?;
    write_json(
        &out.join("scenarios.meta.json"),
        &ScenarioMetadata {
            seed: artifact.scenarios.rng_seed,
            k: artifact.k(),
            horizon: artifact.scenarios.horizon,
            n_x: artifact.scenarios.n_x,
            noise: artifact.noise.clone(),
        },
    )?;
    // wall-clock data lives apart from the reproducible files
    write_json(
        &out.join("timings.json"),
        &PrepareTimingFile {
            sampling: timings.sampling,
            curve: timings.curve,
            clustering: timings.clustering,
            buffers: timings.buffers,
            total: timings.total,
            curve_seconds: curve.seconds.clone(),
        },
    )?;
    println!(
        "K = {}, khat = {}, artifact {}",
        artifact.k(),
        artifact.khat,
        artifact.hash()
    );
    Ok(Outcome::Done)
}

fn write_wss_csv(path: &Path, curve: &WssCurve) -> Result<(), CliError> {
    let mut csv = Csv::new(&["khat", "wss"]);
    for (k, w) in curve.khat_values.iter().zip(&curve.wss_values) {
        csv.row(&[k.to_string(), w.to_string()]);
    }
    csv.write(path)
}

fn load_artifact(path: &Path) -> Result<OfflineArtifact, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    OfflineArtifact::from_json(&text)
        .map_err(|e| CliError::Config(format!("cannot load artifact {}: {e}", path.display())))
}

fn solve_options(node_limit: usize) -> SolveOptions {
    SolveOptions {
        node_limit,
        ..SolveOptions::default()
    }
}

fn singleton(artifact: &OfflineArtifact) -> PartitionModel {
    PartitionModel {
        buffers: Matrix::zeros(artifact.k(), artifact.constraint.num_rows()),
        ..PartitionModel::singleton(&artifact.predictions.phi)
    }
}

#[derive(Serialize)]
struct VerifyTimingFile {
    online_seconds: f64,
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let artifact = load_artifact(&args.artifact)?;
    let opts = solve_options(args.node_limit);
    let x0 = &args.x0;
    let report = match args.mode {
        Mode::Partitioned => verify_online(&artifact, x0, &opts)?,
        Mode::Full => {
            if artifact.k() > FULL_MODE_WARN_K {
                eprintln!(
                    "warning: full program over K = {} scenarios may take exponentially long",
                    artifact.k()
                );
            }
            let start = std::time::Instant::now();
            let sol = solve_full(&artifact, x0, &opts)?;
            let (p_hat, success) = evaluate_policy(&artifact, x0, &sol.u_opt)?;
            VerificationReport {
                x0: x0.clone(),
                p_hat,
                p_khat_star: sol.p_value,
                p_khat_bound: sol.bound,
                optimal: sol.optimal,
                u_opt: sol.u_opt,
                success,
                k: artifact.k(),
                khat: artifact.k(),
                nodes_explored: sol.nodes_explored,
                lp_calls: sol.lp_calls,
                artifact_hash: artifact.hash(),
                online_seconds: start.elapsed().as_secs_f64(),
            }
        }
        Mode::Evaluate => {
            let u = args
                .u
                .as_ref()
                .ok_or_else(|| CliError::Config("--mode evaluate needs --u".into()))?;
            let start = std::time::Instant::now();
            let (p_hat, success) = evaluate_policy(&artifact, x0, u)?;
            VerificationReport {
                x0: x0.clone(),
                p_hat,
                p_khat_star: p_hat,
                p_khat_bound: p_hat,
                optimal: true,
                u_opt: u.clone(),
                success,
                k: artifact.k(),
                khat: artifact.khat,
                nodes_explored: 0,
                lp_calls: 0,
                artifact_hash: artifact.hash(),
                online_seconds: start.elapsed().as_secs_f64(),
            }
        }
    };

    let out = &args.out;
    ensure_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    let mut csv = Csv::new(&["scenario", "success"]);
    for (i, s) in report.success.iter().enumerate() {
        csv.row(&[i.to_string(), (*s as u8).to_string()]);
    }
    csv.write(&out.join("report.csv"))?;
    write_json(
        &out.join("report_timing.json"),
        &VerifyTimingFile {
            online_seconds: report.online_seconds,
        },
    )?;
    if args.dump_lp {
        let model = match args.mode {
            Mode::Full => singleton(&artifact),
            _ => artifact.partition.clone(),
        };
        let problem = milp::build_partitioned(
            &artifact.stacked,
            &artifact.constraint,
            x0,
            &model,
            &artifact.input_box,
        )?;
        let mut text = Vec::new();
        problem.write_lp(&mut text)?;
        write_text(&out.join("problem.lp"), &String::from_utf8_lossy(&text))?;
    }
    println!(
        "p_hat = {}, p_khat_star = {}, optimal = {}",
        report.p_hat, report.p_khat_star, report.optimal
    );
    Ok(if report.optimal {
        Outcome::Done
    } else {
        Outcome::BudgetExceeded
    })
}

struct TrialRow {
    trial: usize,
    seed: u64,
    khat: usize,
    report: VerificationReport,
}

type TrialResult = Result<Vec<TrialRow>, CliError>;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_trial(
    problem: &Problem,
    args: &SweepArgs,
    khats: &[usize],
    trial: usize,
) -> Result<Vec<TrialRow>, CliError> {
    let seed = derive_seed(args.problem.seed, trial as u64);
    let mut opts = PrepareOptions::new(problem.k, KhatPolicy::Fixed { khat: khats[0] }, seed);
    opts.restarts = args.restarts;
    let base = prepare_problem(problem, &opts)?;
    let solve = solve_options(args.node_limit);
    let mut rows = Vec::with_capacity(khats.len());
    for &khat in khats {
        let artifact = if khat == base.khat {
            base.clone()
        } else {
            with_khat(&base, khat)?
        };
        let report = verify_online(&artifact, &args.x0, &solve)?;
        rows.push(TrialRow {
            trial,
            seed,
            khat,
            report,
        });
    }
    Ok(rows)
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let problem = load_problem(&args.problem)?;
    let khats = parse_grid(&args.khat)?;
    if khats.iter().any(|&k| k == 0 || k > problem.k) {
        return Err(CliError::Config(format!(
            "cell counts must lie in 1..={}",
            problem.k
        )));
    }

    // trials are independent; results are slotted by index so the output
    // does not depend on scheduling
    let slots: Mutex<Vec<Option<TrialResult>>> =
        Mutex::new((0..args.trials).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(args.trials);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= args.trials {
                    break;
                }
                let r = run_trial(&problem, args, &khats, t);
                slots.lock().expect("no poisoned workers")[t] = Some(r);
            });
        }
    });
    let mut rows = Vec::new();
    for slot in slots.into_inner().expect("no poisoned workers") {
        rows.extend(slot.expect("every trial ran")?);
    }

    let out = &args.out;
    ensure_dir(out)?;
    let mut trials_csv = Csv::new(&[
        "trial",
        "seed",
        "khat",
        "p_hat",
        "p_khat_star",
        "p_khat_bound",
        "optimal",
        "nodes_explored",
    ]);
    for r in &rows {
        trials_csv.row(&[
            r.trial.to_string(),
            r.seed.to_string(),
            r.khat.to_string(),
            r.report.p_hat.to_string(),
            r.report.p_khat_star.to_string(),
            r.report.p_khat_bound.to_string(),
            (r.report.optimal as u8).to_string(),
            r.report.nodes_explored.to_string(),
        ]);
    }
    trials_csv.write(&out.join("sweep_trials.csv"))?;

    let mut agg = Csv::new(&[
        "khat",
        "trials",
        "mean_p_hat",
        "std_p_hat",
        "mean_p_khat_star",
        "std_p_khat_star",
        "non_optimal",
    ]);
    let mut timing = Csv::new(&["khat", "mean_seconds", "std_seconds"]);
    let mut any_budget = false;
    for &khat in &khats {
        let group: Vec<&TrialRow> = rows.iter().filter(|r| r.khat == khat).collect();
        let p_hat: Vec<f64> = group.iter().map(|r| r.report.p_hat).collect();
        let p_star: Vec<f64> = group.iter().map(|r| r.report.p_khat_star).collect();
        let secs: Vec<f64> = group.iter().map(|r| r.report.online_seconds).collect();
        let non_optimal = group.iter().filter(|r| !r.report.optimal).count();
        any_budget |= non_optimal > 0;
        let (mp, sp) = mean_std(&p_hat);
        let (ms, ss) = mean_std(&p_star);
        let (mt, st) = mean_std(&secs);
        agg.row(&[
            khat.to_string(),
            group.len().to_string(),
            mp.to_string(),
            sp.to_string(),
            ms.to_string(),
            ss.to_string(),
            non_optimal.to_string(),
        ]);
        timing.row(&[khat.to_string(), mt.to_string(), st.to_string()]);
        println!("khat = {khat}: mean p_hat = {mp}, std = {sp}");
    }
    agg.write(&out.join("sweep.csv"))?;
    timing.write(&out.join("sweep_timing.csv"))?;
    Ok(if any_budget {
        Outcome::BudgetExceeded
    } else {
        Outcome::Done
    })
}
