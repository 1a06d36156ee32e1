//! End-to-end pipeline: the `x0`-independent offline stage (sampling,
//! prediction, partition, buffers) and the online stage (partitioned
//! program, then exact re-evaluation of its input on every scenario).

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linops::Matrix;
use crate::milp::{self, MilpError, SolveOptions, SolveResult};
use crate::partition::{self, PartitionError, PartitionModel, WssCurve};
use crate::scenarios::{self, NoiseModel, PredictionSet, ScenarioError, ScenarioSet};
use crate::sets::{
    build_trajectory_constraint, InputBox, ReachAvoidSpec, SetError, TrajectoryConstraint,
};
use crate::system::{stack, LtiSystem, StackedSystem, SystemError};

pub const ARTIFACT_VERSION: u32 = 1;

/// Grid used by the knee and budget policies unless one is given.
pub fn default_curve_grid(k: usize) -> Vec<usize> {
    (1..=k.min(100)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("state has length {found}, expected {expected}")]
    StateDimension { expected: usize, found: usize },
    #[error("input trajectory has length {found}, expected {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("input trajectory lies outside the input box")]
    InputOutsideBox,
    #[error("spec dimension {spec} does not match system dimension {system}")]
    SpecMismatch { spec: usize, system: usize },
    #[error("noise dimension {noise} does not match system dimension {system}")]
    NoiseMismatch { noise: usize, system: usize },
    #[error("input box has {found} entries, expected N * n_u = {expected}")]
    BoxMismatch { expected: usize, found: usize },
    #[error("requested {khat} cells for {k} scenarios")]
    BadKhat { khat: usize, k: usize },
    #[error("budget policy needs a calibration initial state")]
    NoCalibrationState,
    #[error("no grid value fits the time budget of {0} s")]
    BudgetTooSmall(f64),
    #[error("unsupported artifact version {0}")]
    Version(u32),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// How the number of cells is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KhatPolicy {
    Fixed {
        khat: usize,
    },
    /// Knee of the WSS curve over `grid` (defaults to `1..=min(K, 100)`).
    Knee {
        grid: Option<Vec<usize>>,
    },
    /// Largest grid value whose offline+online time on the calibration state
    /// fits in `seconds`. Timing-dependent, hence not reproducible.
    Budget {
        seconds: f64,
        grid: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    #[serde(rename = "K")]
    pub k: usize,
    pub khat_policy: KhatPolicy,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// When set, each scenario also draws an initial-state perturbation and
    /// the prediction map becomes `G_x η + G_w W`.
    pub initial_noise: Option<NoiseModel>,
    /// Initial state used by the budget policy.
    pub calibration_x0: Option<Vec<f64>>,
}

impl PrepareOptions {
    pub fn new(k: usize, khat_policy: KhatPolicy, seed: u64) -> Self {
        Self {
            k,
            khat_policy,
            seed,
            restarts: partition::DEFAULT_RESTARTS,
            max_iter: partition::DEFAULT_MAX_ITER,
            initial_noise: None,
            calibration_x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineArtifact {
    pub version: u32,
    pub system: LtiSystem,
    pub spec: ReachAvoidSpec,
    pub input_box: InputBox,
    pub noise: NoiseModel,
    pub options: PrepareOptions,
    pub stacked: StackedSystem,
    pub constraint: TrajectoryConstraint,
    pub scenarios: ScenarioSet,
    pub initial_perturbations: Option<Matrix>,
    pub predictions: PredictionSet,
    pub khat: usize,
    pub partition: PartitionModel,
    pub wss_curve: Option<WssCurve>,
}

impl OfflineArtifact {
    pub fn k(&self) -> usize {
        self.scenarios.len()
    }

    pub fn n_x(&self) -> usize {
        self.system.n_x()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_vec(self).expect("artifact serializes");
        Sha256::digest(&text)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let a: OfflineArtifact = serde_json::from_str(text)?;
        if a.version != ARTIFACT_VERSION {
            return Err(Box::new(EngineError::Version(a.version)));
        }
        Ok(a)
    }
}

/// Wall-clock seconds of the offline stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareTimings {
    pub sampling: f64,
    pub curve: f64,
    pub clustering: f64,
    pub buffers: f64,
    pub total: f64,
}

fn check_inputs(
    sys: &LtiSystem,
    spec: &ReachAvoidSpec,
    input_box: &InputBox,
    noise: &NoiseModel,
) -> Result<(), EngineError> {
    if spec.n_x() != sys.n_x() {
        return Err(EngineError::SpecMismatch {
            spec: spec.n_x(),
            system: sys.n_x(),
        });
    }
    if noise.dim() != sys.n_x() {
        return Err(EngineError::NoiseMismatch {
            noise: noise.dim(),
            system: sys.n_x(),
        });
    }
    if input_box.dim() != spec.horizon * sys.n_u() {
        return Err(EngineError::BoxMismatch {
            expected: spec.horizon * sys.n_u(),
            found: input_box.dim(),
        });
    }
    Ok(())
}

fn partition_with_buffers(
    phi: &Matrix,
    khat: usize,
    opts: &PrepareOptions,
    f: &Matrix,
    timings: &mut PrepareTimings,
) -> Result<PartitionModel, EngineError> {
    let t = Instant::now();
    let mut model = partition::kmeans(phi, khat, opts.restarts, opts.max_iter, opts.seed)?;
    timings.clustering += t.elapsed().as_secs_f64();
    let t = Instant::now();
    model.buffers = partition::compute_buffers(phi, &model, f)?;
    timings.buffers += t.elapsed().as_secs_f64();
    Ok(model)
}

/// Offline stage. Everything here is independent of the initial state and
/// the input, so one artifact serves every later query.
pub fn offline_prepare(
    sys: &LtiSystem,
    spec: &ReachAvoidSpec,
    input_box: &InputBox,
    noise: &NoiseModel,
    opts: &PrepareOptions,
) -> Result<(OfflineArtifact, PrepareTimings), EngineError> {
    let start = Instant::now();
    check_inputs(sys, spec, input_box, noise)?;
    let mut timings = PrepareTimings::default();
    let stacked = stack(sys, spec.horizon)?;
    let constraint = build_trajectory_constraint(spec)?;

    let t = Instant::now();
    let scenarios = scenarios::sample(noise, spec.horizon, opts.k, opts.seed)?;
    let (predictions, initial_perturbations) = match &opts.initial_noise {
        None => (scenarios::predict(&scenarios, &stacked.gw)?, None),
        Some(init) => {
            if init.dim() != sys.n_x() {
                return Err(EngineError::NoiseMismatch {
                    noise: init.dim(),
                    system: sys.n_x(),
                });
            }
            let eta = scenarios::sample(init, 1, opts.k, opts.seed ^ INITIAL_STREAM_SALT)?;
            let p = scenarios::predict_with_initial(&scenarios, &stacked.gx, &eta.w, &stacked.gw)?;
            (p, Some(eta.w))
        }
    };
    timings.sampling = t.elapsed().as_secs_f64();
    let phi = &predictions.phi;
    let k = opts.k;

    let mut wss_curve = None;
    let (khat, partition) = match &opts.khat_policy {
        KhatPolicy::Fixed { khat } => {
            if *khat == 0 || *khat > k {
                return Err(EngineError::BadKhat { khat: *khat, k });
            }
            (
                *khat,
                partition_with_buffers(phi, *khat, opts, &constraint.f, &mut timings)?,
            )
        }
        KhatPolicy::Knee { grid } => {
            let grid = grid.clone().unwrap_or_else(|| default_curve_grid(k));
            if let Some(&bad) = grid.iter().find(|&&g| g == 0 || g > k) {
                return Err(EngineError::BadKhat { khat: bad, k });
            }
            let t = Instant::now();
            let curve = partition::wss_curve(phi, &grid, opts.restarts, opts.seed)?;
            timings.curve = t.elapsed().as_secs_f64();
            let khat = partition::knee(&curve)?;
            wss_curve = Some(curve);
            (
                khat,
                partition_with_buffers(phi, khat, opts, &constraint.f, &mut timings)?,
            )
        }
        KhatPolicy::Budget { seconds, grid } => {
            let x0 = opts
                .calibration_x0
                .as_ref()
                .ok_or(EngineError::NoCalibrationState)?;
            let grid = grid.clone().unwrap_or_else(|| {
                [5, 10, 20, 40, 60, 80, 100]
                    .into_iter()
                    .filter(|&g| g <= k)
                    .collect()
            });
            let mut chosen = None;
            for &g in &grid {
                if g == 0 || g > k {
                    return Err(EngineError::BadKhat { khat: g, k });
                }
                let t = Instant::now();
                let model = partition_with_buffers(phi, g, opts, &constraint.f, &mut timings)?;
                let problem =
                    milp::build_partitioned(&stacked, &constraint, x0, &model, input_box)?;
                milp::solve_milp(&problem, &SolveOptions::default())?;
                if t.elapsed().as_secs_f64() > *seconds {
                    break;
                }
                chosen = Some((g, model));
            }
            chosen.ok_or(EngineError::BudgetTooSmall(*seconds))?
        }
    };
    timings.total = start.elapsed().as_secs_f64();
    Ok((
        OfflineArtifact {
            version: ARTIFACT_VERSION,
            system: sys.clone(),
            spec: spec.clone(),
            input_box: input_box.clone(),
            noise: noise.clone(),
            options: opts.clone(),
            stacked,
            constraint,
            scenarios,
            initial_perturbations,
            predictions,
            khat,
            partition,
            wss_curve,
        },
        timings,
    ))
}

const INITIAL_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub x0: Vec<f64>,
    /// Fraction of the `K` scenarios reaching the target safely under `u_opt`.
    pub p_hat: f64,
    /// Optimal value of the partitioned program.
    pub p_khat_star: f64,
    /// Upper bound on the partitioned optimum (differs when the node budget ran out).
    pub p_khat_bound: f64,
    pub optimal: bool,
    pub u_opt: Vec<f64>,
    pub success: Vec<bool>,
    pub k: usize,
    pub khat: usize,
    pub nodes_explored: usize,
    pub lp_calls: usize,
    pub artifact_hash: String,
    #[serde(skip)]
    pub online_seconds: f64,
}

fn check_state(artifact: &OfflineArtifact, x0: &[f64]) -> Result<bool, EngineError> {
    if x0.len() != artifact.n_x() {
        return Err(EngineError::StateDimension {
            expected: artifact.n_x(),
            found: x0.len(),
        });
    }
    Ok(artifact.spec.safe.contains(x0)?)
}

/// Online stage: solve the partitioned program at `x0`, then evaluate its
/// input on every scenario. Initial states outside the safe set get zero
/// without a solve.
pub fn verify(
    artifact: &OfflineArtifact,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<VerificationReport, EngineError> {
    let start = Instant::now();
    let k = artifact.k();
    let mut report = VerificationReport {
        x0: x0.to_vec(),
        p_hat: 0.0,
        p_khat_star: 0.0,
        p_khat_bound: 0.0,
        optimal: true,
        u_opt: artifact.input_box.center(),
        success: vec![false; k],
        k,
        khat: artifact.khat,
        nodes_explored: 0,
        lp_calls: 0,
        artifact_hash: artifact.hash(),
        online_seconds: 0.0,
    };
    if check_state(artifact, x0)? {
        let problem = milp::build_partitioned(
            &artifact.stacked,
            &artifact.constraint,
            x0,
            &artifact.partition,
            &artifact.input_box,
        )?;
        let sol = milp::solve_milp(&problem, opts)?;
        let (p_hat, success) = evaluate_policy(artifact, x0, &sol.u_opt)?;
        report.p_hat = p_hat;
        report.success = success;
        report.p_khat_star = sol.p_value;
        report.p_khat_bound = sol.bound;
        report.optimal = sol.optimal;
        report.u_opt = sol.u_opt;
        report.nodes_explored = sol.nodes_explored;
        report.lp_calls = sol.lp_calls;
    }
    report.online_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Fraction of scenarios whose trajectory under `u` satisfies `F X ≤ h`
/// exactly, and the per-scenario flags.
pub fn evaluate_policy(
    artifact: &OfflineArtifact,
    x0: &[f64],
    u: &[f64],
) -> Result<(f64, Vec<bool>), EngineError> {
    let inside = check_state(artifact, x0)?;
    let expected = artifact.input_box.dim();
    if u.len() != expected {
        return Err(EngineError::InputDimension {
            expected,
            found: u.len(),
        });
    }
    if !artifact.input_box.contains(u) {
        return Err(EngineError::InputOutsideBox);
    }
    let k = artifact.k();
    if !inside {
        return Ok((0.0, vec![false; k]));
    }
    let nominal = artifact.stacked.nominal(x0, u)?;
    let mut traj = vec![0.0; nominal.len()];
    let success: Vec<bool> = artifact
        .predictions
        .phi
        .row_iter()
        .map(|phi| {
            for ((t, a), b) in traj.iter_mut().zip(&nominal).zip(phi) {
                *t = a + b;
            }
            artifact.constraint.contains(&traj)
        })
        .collect();
    let hits = success.iter().filter(|s| **s).count();
    Ok((hits as f64 / k as f64, success))
}

/// Optimum of the program over all `K` scenarios (no partition). Exponential
/// in the worst case; intended for small `K`.
pub fn solve_full(
    artifact: &OfflineArtifact,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<SolveResult, EngineError> {
    let k = artifact.k();
    if !check_state(artifact, x0)? {
        return Ok(SolveResult {
            p_value: 0.0,
            bound: 0.0,
            optimal: true,
            u_opt: artifact.input_box.center(),
            z: vec![false; k],
            nodes_explored: 0,
            lp_calls: 0,
            wall_time: 0.0,
        });
    }
    let singleton = PartitionModel {
        buffers: Matrix::zeros(k, artifact.constraint.num_rows()),
        ..PartitionModel::singleton(&artifact.predictions.phi)
    };
    let problem = milp::build_partitioned(
        &artifact.stacked,
        &artifact.constraint,
        x0,
        &singleton,
        &artifact.input_box,
    )?;
    Ok(milp::solve_milp(&problem, opts)?)
}

/// Re-partitions an artifact's predictions with a different cell count,
/// keeping the scenarios (used by sweeps over `K̂`).
pub fn with_khat(artifact: &OfflineArtifact, khat: usize) -> Result<OfflineArtifact, EngineError> {
    let k = artifact.k();
    if khat == 0 || khat > k {
        return Err(EngineError::BadKhat { khat, k });
    }
    let mut timings = PrepareTimings::default();
    let partition = partition_with_buffers(
        &artifact.predictions.phi,
        khat,
        &artifact.options,
        &artifact.constraint.f,
        &mut timings,
    )?;
    let mut out = artifact.clone();
    out.options.khat_policy = KhatPolicy::Fixed { khat };
    out.khat = khat;
    out.partition = partition;
    out.wss_curve = None;
    Ok(out)
}
