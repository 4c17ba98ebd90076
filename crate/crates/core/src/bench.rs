//! Experiment harness behind the command line: controller and policy runs,
//! episode traces in the controller's log format, and plot-ready series.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cmdp::{CmdpError, Environment};
use crate::cpo::{self, CpoError, Episode, TrainConfig, TrainReport};
use crate::mpc::{self, MpcError, MpcOptions, RestorationLog, StepRecord};
use crate::netmodel::{self, ForecastSet, Scenario, ScenarioError};
use crate::policy::{PolicyError, PolicyParams};

/// Directory searched for scenario names that are not existing paths.
pub const SCENARIO_DIR_VAR: &str = "MGRESTORE_SCENARIO_DIR";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Cpo(#[from] CpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("log has no steps")]
    EmptyLog,
    #[error("log lacks {0}")]
    Missing(&'static str),
}

fn cmdp_exit(e: &CmdpError) -> i32 {
    match e {
        CmdpError::ActionDim { .. } | CmdpError::Terminal { .. } => 2,
        CmdpError::State(m) => mpc_exit(m),
        CmdpError::PowerFlow(_) | CmdpError::Lp(_) => 4,
    }
}

fn mpc_exit(e: &MpcError) -> i32 {
    match e {
        MpcError::Infeasible { .. } | MpcError::Unbounded { .. } => 3,
        MpcError::Lp { .. } | MpcError::PowerFlow { .. } => 4,
        MpcError::MissingState { .. } | MpcError::Step { .. } | MpcError::Dump(_) => 2,
    }
}

impl BenchError {
    /// 2 for configuration and I/O problems, 3 for infeasible optimization,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Mpc(e) => mpc_exit(e),
            BenchError::Cpo(CpoError::Env(e)) => cmdp_exit(e),
            BenchError::Cpo(CpoError::Policy(_) | CpoError::Io(_)) => 2,
            BenchError::Cpo(CpoError::DualNonConvergence { .. } | CpoError::NonFinite) => 4,
            _ => 2,
        }
    }
}

/// Optional replacements for scenario and training settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub episodes: Option<usize>,
    pub mpc_lookahead: Option<usize>,
    pub cpo_lookahead: Option<usize>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    Mpc,
    CpoTrain,
    CpoEval,
    Compare,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Defaults to the scenario's own seed.
    pub seed: Option<u64>,
    pub overrides: Overrides,
    /// Policy to evaluate, or to resume training from.
    pub checkpoint: Option<PathBuf>,
    /// Directory for CPLEX-format dumps of the controller's window LPs.
    pub dump_lp: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, mode: Mode, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            scenario: scenario.into(),
            mode,
            out_dir: out_dir.into(),
            seed: None,
            overrides: Overrides::default(),
            checkpoint: None,
            dump_lp: None,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if matches!(self.mode, Mode::CpoEval | Mode::Compare) && self.checkpoint.is_none() {
            return Err(BenchError::Config("a policy checkpoint is required for this command".into()));
        }
        let o = &self.overrides;
        if o.delta.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
            return Err(BenchError::Config("trust-region radius must be finite and nonnegative".into()));
        }
        if o.gamma.is_some_and(|g| !(g > 0.0 && g <= 1.0)) {
            return Err(BenchError::Config("discount factor must lie in (0, 1]".into()));
        }
        if o.n_samples == Some(0) {
            return Err(BenchError::Config("at least one sample per step is required".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(BenchError::Config("checkpoint interval must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.overrides;
        let d = TrainConfig::default();
        TrainConfig {
            episodes: o.episodes.unwrap_or(d.episodes),
            n_samples: o.n_samples.unwrap_or(d.n_samples),
            delta: o.delta.unwrap_or(d.delta),
            gamma: o.gamma.unwrap_or(d.gamma),
            checkpoint_every: self.checkpoint_every.map(|k| (k, self.out_dir.join("checkpoints"))),
            ..d
        }
    }
}

/// Resolve a scenario argument: an existing path, then a name inside the
/// scenario directory (with or without `.toml`), then the bundled cases.
pub fn resolve_scenario(arg: &Path, scenario_dir: Option<&Path>) -> Result<Scenario, ScenarioError> {
    if !arg.exists() && arg.is_relative() {
        if let Some(dir) = scenario_dir {
            for cand in [dir.join(arg), dir.join(arg).with_extension("toml")] {
                if cand.is_file() {
                    return netmodel::load_scenario(cand);
                }
            }
        }
    }
    netmodel::load_scenario(arg)
}

fn scenario_for(config: &RunConfig) -> Result<Scenario, BenchError> {
    let dir = std::env::var_os(SCENARIO_DIR_VAR).map(PathBuf::from);
    let mut net = resolve_scenario(&config.scenario, dir.as_deref())?;
    if let Some(h) = config.overrides.mpc_lookahead {
        net.horizon.mpc_lookahead = h;
    }
    if let Some(h) = config.overrides.cpo_lookahead {
        net.horizon.cpo_lookahead = h;
    }
    let violations = netmodel::validate(&net);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations).into());
    }
    Ok(net)
}

fn seed_of(config: &RunConfig, net: &Scenario) -> u64 {
    config.seed.unwrap_or(net.horizon.rng_seed)
}

/// Renewable realization shared by the controller and the policy runs.
pub fn forecasts_for(net: &Scenario, seed: u64) -> ForecastSet {
    ForecastSet::sample(net, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Policy episode with its per-step window rewards.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub log: RestorationLog,
    pub window_rewards: Vec<f64>,
    pub gamma: f64,
    pub window_len: usize,
}

impl PolicyTrace {
    /// Window reward divided by `sum_{k<K} gamma^k`, a per-step figure on the
    /// scale of one controller stage.
    pub fn per_step_rewards(&self) -> Vec<f64> {
        let norm: f64 = (0..self.window_len).map(|k| self.gamma.powi(k as i32)).sum();
        self.window_rewards.iter().map(|r| r / norm).collect()
    }
}

/// Express a policy episode as a controller log. Policy runs have no plan,
/// so planned voltages repeat the realized ones.
pub fn episode_log(env: &Environment, ep: &Episode) -> RestorationLog {
    let net = env.net;
    let s = net.topology.slack;
    let records = ep
        .states
        .iter()
        .zip(&ep.outcomes)
        .enumerate()
        .map(|(n, (state, o))| {
            let t = o.global_step;
            let next = &ep.states[n + 1].device;
            let res_cap: Vec<f64> = state.window.res_p.iter().map(|w| w[0]).collect();
            let curtailment = res_cap
                .iter()
                .zip(&o.res_p)
                .map(|(&cap, &p)| if cap > 0.0 { (1.0 - p / cap).clamp(0.0, 1.0) } else { 0.0 })
                .collect();
            StepRecord {
                t,
                pickup: o.pickup.clone(),
                curtailment,
                res_p: o.res_p.clone(),
                res_q: o.command.res_q.clone(),
                mt_p: o.mt_p.clone(),
                mt_q: o.command.mt_q.clone(),
                ch: o.command.ch.clone(),
                dis: o.dis.clone(),
                ess_q: o.command.ess_q.clone(),
                soc_before: net.ess_buses.iter().map(|b| state.device.soc[b]).collect(),
                soc_after: net.ess_buses.iter().map(|b| next.soc[b]).collect(),
                fuel_before: net.mt_buses.iter().map(|b| state.device.fuel[b]).collect(),
                fuel_after: net.mt_buses.iter().map(|b| next.fuel[b]).collect(),
                planned_v: o.flow.v.clone(),
                flow: o.flow.clone(),
                balance_gap_p: o.flow.slack_p - o.injections.p[s],
                balance_gap_q: o.flow.slack_q - o.injections.q[s],
                stage_value: mpc::stage_value(net, t, &o.pickup, &o.mt_p),
                lp_iterations: 0,
                solve_seconds: 0.0,
            }
        })
        .collect();
    RestorationLog { scenario: net.name.clone(), records }
}

/// Deterministic policy episode (action = mean) on the shared realization.
pub fn evaluate_policy(net: &Scenario, params: &PolicyParams, seed: u64, gamma: f64) -> Result<PolicyTrace, BenchError> {
    let env = Environment::new(net, forecasts_for(net, seed), gamma);
    if params.spec.action_dim != env.action_dim() || params.spec.mean.input != env.feature_dim() {
        return Err(BenchError::Config(format!(
            "checkpoint expects {} features and {} actions, scenario has {} and {}",
            params.spec.mean.input,
            params.spec.action_dim,
            env.feature_dim(),
            env.action_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ep = cpo::run_episode(&env, params, false, &mut rng)?;
    Ok(PolicyTrace {
        log: episode_log(&env, &ep),
        window_rewards: ep.rewards.clone(),
        gamma,
        window_len: env.layout.steps,
    })
}

/// Largest `P_ch * P_dis` over a log.
pub fn max_cc_product(log: &RestorationLog) -> f64 {
    log.records
        .iter()
        .flat_map(|r| r.ch.iter().zip(&r.dis).map(|(c, d)| c * d))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Episode reward during training.
    Rewards,
    /// Per-step controller cost against policy reward.
    Cost,
    /// Storage charge and discharge.
    Storage,
    /// Microturbine fuel.
    Fuel,
    /// Bus voltages.
    Voltage,
    /// Load pickups.
    Pickup,
}

impl Figure {
    pub fn file_name(self) -> &'static str {
        match self {
            Figure::Rewards => "fig1_rewards.csv",
            Figure::Cost => "fig2_cost.csv",
            Figure::Storage => "fig3_storage.csv",
            Figure::Fuel => "fig4_fuel.csv",
            Figure::Voltage => "fig5_voltage.csv",
            Figure::Pickup => "fig6_pickup.csv",
        }
    }
}

/// Labelled inputs of a figure series.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeriesInput<'a> {
    pub train: Option<&'a TrainReport>,
    pub logs: &'a [(&'a str, &'a RestorationLog)],
    pub policy: Option<(&'a str, &'a PolicyTrace)>,
}

fn fmt_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// Plot-ready CSV for one figure. Every log contributes its own columns,
/// prefixed with its label; rows are steps numbered from 1.
pub fn emit_series(net: &Scenario, fig: Figure, input: SeriesInput) -> Result<String, BenchError> {
    if fig == Figure::Rewards {
        let rep = input.train.ok_or(BenchError::Missing("training rewards"))?;
        if rep.episode_rewards.is_empty() {
            return Err(BenchError::EmptyLog);
        }
        return Ok(rep.to_csv());
    }
    if input.logs.is_empty() {
        return Err(BenchError::Missing("step logs"));
    }
    let steps = input.logs[0].1.records.len();
    if steps == 0 || input.logs.iter().any(|(_, l)| l.records.is_empty()) {
        return Err(BenchError::EmptyLog);
    }
    if input.logs.iter().any(|(_, l)| l.records.len() != steps) {
        return Err(BenchError::Config("logs cover different numbers of steps".into()));
    }
    let id = |b: usize| net.buses[b].id;
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    if fig == Figure::Cost {
        let (plabel, trace) = input.policy.ok_or(BenchError::Missing("policy window rewards"))?;
        if trace.window_rewards.len() != steps {
            return Err(BenchError::Missing("a policy reward for every step"));
        }
        writeln!(
            out,
            "# cost = -(sum xi_L * restored P - sum xi_MT * P_MT) of the applied step; \
             reward_per_step = window_reward / sum_{{k=0}}^{{{}}} {}^k",
            trace.window_len - 1,
            trace.gamma
        )
        .expect("string write");
        for (label, _) in input.logs {
            header.push(format!("{label}_cost"));
        }
        header.push(format!("{plabel}_window_reward"));
        header.push(format!("{plabel}_reward_per_step"));
        fmt_row(&mut out, &header);
        let per_step = trace.per_step_rewards();
        for n in 0..steps {
            let mut row = vec![(n + 1).to_string()];
            for (_, log) in input.logs {
                row.push((-log.records[n].stage_value).to_string());
            }
            row.push(trace.window_rewards[n].to_string());
            row.push(per_step[n].to_string());
            fmt_row(&mut out, &row);
        }
        return Ok(out);
    }
    for (label, _) in input.logs {
        match fig {
            Figure::Storage => {
                for &b in &net.ess_buses {
                    header.push(format!("{label}_ch_{}", id(b)));
                    header.push(format!("{label}_dis_{}", id(b)));
                }
            }
            Figure::Fuel => {
                for &b in &net.mt_buses {
                    header.push(format!("{label}_fuel_{}", id(b)));
                }
            }
            Figure::Voltage => {
                for b in 0..net.num_buses() {
                    header.push(format!("{label}_v_{}", id(b)));
                }
            }
            Figure::Pickup => {
                for &b in &net.load_buses {
                    header.push(format!("{label}_pickup_{}", id(b)));
                }
            }
            Figure::Rewards | Figure::Cost => unreachable!("handled above"),
        }
    }
    fmt_row(&mut out, &header);
    for n in 0..steps {
        let mut row = vec![(n + 1).to_string()];
        for (_, log) in input.logs {
            let r = &log.records[n];
            let cells: Vec<f64> = match fig {
                Figure::Storage => r.ch.iter().zip(&r.dis).flat_map(|(&c, &d)| [c, d]).collect(),
                Figure::Fuel => r.fuel_after.clone(),
                Figure::Voltage => r.flow.v.clone(),
                Figure::Pickup => r.pickup.clone(),
                Figure::Rewards | Figure::Cost => unreachable!("handled above"),
            };
            row.extend(cells.iter().map(|v| v.to_string()));
        }
        fmt_row(&mut out, &row);
    }
    Ok(out)
}

/// One row per step joining the controller and policy runs.
pub fn compare_csv(net: &Scenario, mpc_log: &RestorationLog, policy: &PolicyTrace) -> Result<String, BenchError> {
    let cpo_log = &policy.log;
    if mpc_log.records.is_empty() || cpo_log.records.is_empty() {
        return Err(BenchError::EmptyLog);
    }
    if mpc_log.records.len() != cpo_log.records.len() {
        return Err(BenchError::Config("logs cover different numbers of steps".into()));
    }
    let id = |b: usize| net.buses[b].id;
    let norm: f64 = (0..policy.window_len).map(|k| policy.gamma.powi(k as i32)).sum();
    let mut out = format!(
        "# cpo_reward_per_step = cpo_window_reward / {norm} (sum of gamma^k over the {}-step window, gamma = {}); \
         costs are negated stage values\n",
        policy.window_len, policy.gamma
    );
    let mut header = vec!["t".to_string(), "mpc_cost".into(), "cpo_cost".into()];
    header.push("cpo_window_reward".into());
    header.push("cpo_reward_per_step".into());
    for who in ["mpc", "cpo"] {
        for &b in &net.ess_buses {
            header.extend([format!("{who}_ch_{}", id(b)), format!("{who}_dis_{}", id(b)), format!("{who}_soc_{}", id(b))]);
        }
        for &b in &net.mt_buses {
            header.push(format!("{who}_fuel_{}", id(b)));
        }
        for b in 0..net.num_buses() {
            header.push(format!("{who}_v_{}", id(b)));
        }
        for &b in &net.load_buses {
            header.push(format!("{who}_pickup_{}", id(b)));
        }
    }
    fmt_row(&mut out, &header);
    let per_step = policy.per_step_rewards();
    for n in 0..mpc_log.records.len() {
        let (m, c) = (&mpc_log.records[n], &cpo_log.records[n]);
        let mut row: Vec<f64> = vec![-m.stage_value, -c.stage_value, policy.window_rewards[n], per_step[n]];
        for r in [m, c] {
            for i in 0..net.ess_buses.len() {
                row.extend([r.ch[i], r.dis[i], r.soc_after[i]]);
            }
            row.extend(&r.fuel_after);
            row.extend(&r.flow.v);
            row.extend(&r.pickup);
        }
        let mut cells = vec![(n + 1).to_string()];
        cells.extend(row.iter().map(|v| v.to_string()));
        fmt_row(&mut out, &cells);
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, BenchError> {
    let io = |source, path: &Path| BenchError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io(e, &path))?;
    Ok(path)
}

/// Files written by a run and a one-line summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn load_policy(config: &RunConfig) -> Result<PolicyParams, BenchError> {
    let path = config.checkpoint.as_ref().ok_or_else(|| BenchError::Config("no checkpoint given".into()))?;
    if !path.is_file() {
        return Err(BenchError::Config(format!("checkpoint {} not found", path.display())));
    }
    Ok(PolicyParams::load(path)?)
}

/// Execute one command.
pub fn run(config: &RunConfig) -> Result<RunOutput, BenchError> {
    config.validate()?;
    let net = scenario_for(config)?;
    let seed = seed_of(config, &net);
    let dir = &config.out_dir;
    let gamma = config.overrides.gamma.unwrap_or(TrainConfig::default().gamma);
    match config.mode {
        Mode::Mpc => {
            let opts = MpcOptions { dump_dir: config.dump_lp.clone() };
            let log = mpc::run_mpc(&net, &forecasts_for(&net, seed), &opts)?;
            let total: f64 = log.records.iter().map(|r| r.stage_value).sum();
            let files = vec![write(dir, "mpc_log.csv", &log.to_csv(&net))?];
            Ok(RunOutput { files, summary: format!("{} steps, total stage value {total}", log.records.len()) })
        }
        Mode::CpoTrain => {
            let tc = config.train_config();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = match &config.checkpoint {
                Some(_) => load_policy(config)?,
                None => cpo::initial_policy(&net, &tc, &mut rng),
            };
            if let Some((_, d)) = &tc.checkpoint_every {
                std::fs::create_dir_all(d).map_err(|source| BenchError::Io { path: d.display().to_string(), source })?;
            }
            let (params, report) = cpo::train_from(&net, init, &tc, &mut rng)?;
            let mut files = vec![write(dir, "train_rewards.csv", &report.to_csv())?];
            files.push(write(dir, "policy.json", &params.to_json())?);
            if !report.episode_rewards.is_empty() {
                let fig = emit_series(&net, Figure::Rewards, SeriesInput { train: Some(&report), ..Default::default() })?;
                files.push(write(dir, Figure::Rewards.file_name(), &fig)?);
            }
            let summary = format!(
                "{} episodes, {} recovery steps, {} failed updates, {:.1} s",
                report.episode_rewards.len(),
                report.recovery_steps,
                report.failed_updates.len(),
                report.wall_seconds
            );
            Ok(RunOutput { files, summary })
        }
        Mode::CpoEval => {
            let params = load_policy(config)?;
            let trace = evaluate_policy(&net, &params, seed, gamma)?;
            let files = vec![write(dir, "cpo_log.csv", &trace.log.to_csv(&net))?];
            let total: f64 = trace.log.records.iter().map(|r| r.stage_value).sum();
            let summary = format!(
                "{} steps, total stage value {total}, max charge*discharge {:e}",
                trace.log.records.len(),
                max_cc_product(&trace.log)
            );
            Ok(RunOutput { files, summary })
        }
        Mode::Compare => {
            let params = load_policy(config)?;
            let opts = MpcOptions { dump_dir: config.dump_lp.clone() };
            let mpc_log = mpc::run_mpc(&net, &forecasts_for(&net, seed), &opts)?;
            let trace = evaluate_policy(&net, &params, seed, gamma)?;
            let logs = [("mpc", &mpc_log), ("cpo", &trace.log)];
            let mut files = vec![
                write(dir, "mpc_log.csv", &mpc_log.to_csv(&net))?,
                write(dir, "cpo_log.csv", &trace.log.to_csv(&net))?,
                write(dir, "compare.csv", &compare_csv(&net, &mpc_log, &trace)?)?,
            ];
            let input = SeriesInput { train: None, logs: &logs, policy: Some(("cpo", &trace)) };
            for fig in [Figure::Cost, Figure::Storage, Figure::Fuel, Figure::Pickup] {
                files.push(write(dir, fig.file_name(), &emit_series(&net, fig, input)?)?);
            }
            for (label, log) in logs {
                let one = [(label, log)];
                let text = emit_series(&net, Figure::Voltage, SeriesInput { logs: &one, ..input })?;
                files.push(write(dir, &format!("fig5_voltage_{label}.csv"), &text)?);
            }
            let summary = format!(
                "mpc stage value {}, cpo stage value {}",
                mpc_log.records.iter().map(|r| r.stage_value).sum::<f64>(),
                trace.log.records.iter().map(|r| r.stage_value).sum::<f64>()
            );
            Ok(RunOutput { files, summary })
        }
    }
}
