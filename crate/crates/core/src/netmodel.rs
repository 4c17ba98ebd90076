//! Microgrid domain model: buses, lines, devices, forecasts and the scenario
//! configuration, plus validation and TOML scenario ingestion.
//!
//! All powers are in MW/MVAr on a 1 MVA base, so per-unit and MW values
//! coincide numerically. Buses are identified in files by their external
//! [`BusId`]; internally every computation works on dense indices in file
//! order, resolved once by [`Scenario::new`].

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scenario bundled with the crate: the 12-bus radial feeder.
pub const CASE12DA: &str = include_str!("../scenarios/case12da.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Load,
    Microturbine,
    Renewable,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
}

/// A distribution line, directed away from the slack bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    /// Resistance, p.u.
    pub r: f64,
    /// Reactance, p.u.
    pub x: f64,
    /// Squared-current limit, p.u.
    pub l_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtParams {
    pub p_min: f64,
    pub p_max: f64,
    /// Largest allowed increase of output between consecutive steps (MW/step).
    pub ramp_up_max: f64,
    /// Most negative allowed change of output between consecutive steps (MW/step).
    pub ramp_down_min: f64,
    /// Fuel spent per MW produced over one step.
    pub tau: f64,
    pub fuel_init: f64,
    pub cost_coeff: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssParams {
    pub p_ch_max: f64,
    pub p_dis_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResParams {
    pub forecast_mean: f64,
    pub forecast_sd: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    /// Active demand forecast per step (MW, withdrawal as a positive number).
    pub p_demand: Vec<f64>,
    /// Reactive demand forecast per step (MVAr).
    pub q_demand: Vec<f64>,
    /// Restoration priority weight.
    pub priority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeviceParams {
    Load(LoadParams),
    Microturbine(MtParams),
    Renewable(ResParams),
    Storage(EssParams),
}

impl DeviceParams {
    pub fn kind(&self) -> BusKind {
        match self {
            DeviceParams::Load(_) => BusKind::Load,
            DeviceParams::Microturbine(_) => BusKind::Microturbine,
            DeviceParams::Renewable(_) => BusKind::Renewable,
            DeviceParams::Storage(_) => BusKind::Storage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub bus: BusId,
    #[serde(flatten)]
    pub params: DeviceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub name: String,
    pub slack_bus: BusId,
}

/// How the two quadratic terms of the line-current relaxation are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonPairing {
    /// `l >= h_c(P) + h_c'(Q)` for every pair of sides (tighter).
    #[default]
    Independent,
    /// `l >= h_c(P) + h_c(Q)` with one shared side index.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    /// Episode length T in steps.
    pub steps: usize,
    /// Step duration in hours.
    pub dt: f64,
    /// Squared voltage bounds, p.u.^2.
    pub v_min: f64,
    pub v_max: f64,
    /// Leeway of the almost-monotonic pickup rule.
    pub epsilon: f64,
    pub mpc_lookahead: usize,
    pub cpo_lookahead: usize,
    pub polygon_sides: usize,
    #[serde(default)]
    pub polygon_pairing: PolygonPairing,
    pub rng_seed: u64,
}

/// On-disk layout of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScenarioFile {
    network: NetworkSection,
    horizon: Horizon,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    devices: Vec<Device>,
}

/// Resolved radial structure of the network, indexed densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub slack: usize,
    /// Line index feeding each bus (`None` for the slack bus).
    pub parent_line: Vec<Option<usize>>,
    /// Outgoing line indices per bus.
    pub children: Vec<Vec<usize>>,
    /// `(from, to)` bus indices per line.
    pub ends: Vec<(usize, usize)>,
    /// Buses in breadth-first order from the slack bus.
    pub order: Vec<usize>,
}

/// A validated scenario with resolved indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub devices: Vec<Device>,
    pub horizon: Horizon,
    pub slack_bus: BusId,
    pub topology: Topology,
    /// Device index for every bus.
    pub device_of_bus: Vec<usize>,
    pub load_buses: Vec<usize>,
    pub mt_buses: Vec<usize>,
    pub res_buses: Vec<usize>,
    pub ess_buses: Vec<usize>,
}

/// One failed invariant, naming the offending element and rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("forecast window {start}+{horizon} exceeds series length {len}")]
    Horizon {
        start: usize,
        horizon: usize,
        len: usize,
    },
    #[error("bus {0} is not a renewable bus")]
    NotRenewable(BusId),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn violation(subject: impl Into<String>, rule: impl Into<String>) -> Violation {
    Violation {
        subject: subject.into(),
        rule: rule.into(),
    }
}

/// Load and validate a scenario file. The names `case12da` and
/// `case12da.toml` resolve to the bundled scenario when no such file exists.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if stem == "case12da" && path.parent().map_or(true, |p| p.as_os_str().is_empty()) {
                return parse_scenario(CASE12DA);
            }
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Scenario::new(
        file.network.name,
        file.network.slack_bus,
        file.buses,
        file.lines,
        file.devices,
        file.horizon,
    )
}

impl Scenario {
    pub fn new(
        name: String,
        slack_bus: BusId,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        devices: Vec<Device>,
        horizon: Horizon,
    ) -> Result<Scenario, ScenarioError> {
        let violations = validate_parts(slack_bus, &buses, &lines, &devices, &horizon);
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations));
        }
        let topology = build_topology(slack_bus, &buses, &lines).expect("validated topology");
        let index: HashMap<BusId, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut device_of_bus = vec![usize::MAX; buses.len()];
        for (k, d) in devices.iter().enumerate() {
            device_of_bus[index[&d.bus]] = k;
        }
        let of_kind = |kind| {
            (0..buses.len())
                .filter(|&i| buses[i].kind == kind)
                .collect::<Vec<_>>()
        };
        Ok(Scenario {
            name,
            load_buses: of_kind(BusKind::Load),
            mt_buses: of_kind(BusKind::Microturbine),
            res_buses: of_kind(BusKind::Renewable),
            ess_buses: of_kind(BusKind::Storage),
            buses,
            lines,
            devices,
            horizon,
            slack_bus,
            topology,
            device_of_bus,
        })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn device(&self, bus: usize) -> &DeviceParams {
        &self.devices[self.device_of_bus[bus]].params
    }

    pub fn load(&self, bus: usize) -> &LoadParams {
        match self.device(bus) {
            DeviceParams::Load(p) => p,
            _ => panic!("bus {} is not a load bus", self.buses[bus].id),
        }
    }

    pub fn mt(&self, bus: usize) -> &MtParams {
        match self.device(bus) {
            DeviceParams::Microturbine(p) => p,
            _ => panic!("bus {} is not a microturbine bus", self.buses[bus].id),
        }
    }

    pub fn res(&self, bus: usize) -> &ResParams {
        match self.device(bus) {
            DeviceParams::Renewable(p) => p,
            _ => panic!("bus {} is not a renewable bus", self.buses[bus].id),
        }
    }

    pub fn ess(&self, bus: usize) -> &EssParams {
        match self.device(bus) {
            DeviceParams::Storage(p) => p,
            _ => panic!("bus {} is not a storage bus", self.buses[bus].id),
        }
    }

    pub fn device_mut(&mut self, bus: usize) -> &mut DeviceParams {
        let k = self.device_of_bus[bus];
        &mut self.devices[k].params
    }

    /// Length every forecast series must have: T plus the longest look-ahead.
    pub fn series_len(&self) -> usize {
        self.horizon.steps + self.horizon.mpc_lookahead.max(self.horizon.cpo_lookahead)
    }

    pub fn to_toml(&self) -> String {
        let file = ScenarioFile {
            network: NetworkSection {
                name: self.name.clone(),
                slack_bus: self.slack_bus,
            },
            horizon: self.horizon.clone(),
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            devices: self.devices.clone(),
        };
        toml::to_string(&file).expect("scenario serializes")
    }
}

/// Check every scenario invariant; an empty list means the scenario is valid.
pub fn validate(scenario: &Scenario) -> Vec<Violation> {
    validate_parts(
        scenario.slack_bus,
        &scenario.buses,
        &scenario.lines,
        &scenario.devices,
        &scenario.horizon,
    )
}

fn validate_parts(
    slack_bus: BusId,
    buses: &[Bus],
    lines: &[Line],
    devices: &[Device],
    horizon: &Horizon,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for b in buses {
        if seen.insert(b.id, ()).is_some() {
            out.push(violation(format!("bus {}", b.id), "duplicate bus id"));
        }
    }
    if !seen.contains_key(&slack_bus) {
        out.push(violation("network", format!("slack bus {} not declared", slack_bus)));
    }
    for (k, l) in lines.iter().enumerate() {
        let subject = format!("line {} ({}->{})", k, l.from, l.to);
        if !seen.contains_key(&l.from) || !seen.contains_key(&l.to) {
            out.push(violation(&subject, "references undeclared bus"));
        }
        if !(l.r >= 0.0) {
            out.push(violation(&subject, "r negative"));
        }
        if !(l.x >= 0.0) {
            out.push(violation(&subject, "x negative"));
        }
        if !(l.l_max > 0.0) {
            out.push(violation(&subject, "l_max not positive"));
        }
    }
    if out.is_empty() {
        if let Err(v) = build_topology(slack_bus, buses, lines) {
            out.push(v);
        }
    }

    let series_len = horizon.steps + horizon.mpc_lookahead.max(horizon.cpo_lookahead);
    let mut device_count: HashMap<BusId, usize> = HashMap::new();
    for d in devices {
        *device_count.entry(d.bus).or_default() += 1;
        let subject = format!("bus {}", d.bus);
        match buses.iter().find(|b| b.id == d.bus) {
            None => out.push(violation(&subject, "device on undeclared bus")),
            Some(b) if b.kind != d.params.kind() => {
                out.push(violation(&subject, "device type does not match bus kind"))
            }
            _ => {}
        }
        match &d.params {
            DeviceParams::Microturbine(m) => {
                if !(m.p_min <= m.p_max) {
                    out.push(violation(&subject, "p_min above p_max"));
                }
                if !(m.tau > 0.0) {
                    out.push(violation(&subject, "tau not positive"));
                }
                if !(m.fuel_init >= 0.0) {
                    out.push(violation(&subject, "fuel_init negative"));
                }
                if !(m.q_max >= 0.0) {
                    out.push(violation(&subject, "q_max negative"));
                }
                if !(m.ramp_down_min <= m.ramp_up_max) {
                    out.push(violation(&subject, "ramp_down_min above ramp_up_max"));
                }
            }
            DeviceParams::Storage(e) => {
                if !(e.p_ch_max > 0.0) {
                    out.push(violation(&subject, "p_ch_max not positive"));
                }
                if !(e.p_dis_max > 0.0) {
                    out.push(violation(&subject, "p_dis_max not positive"));
                }
                if !(e.eta_ch > 0.0 && e.eta_ch <= 1.0) {
                    out.push(violation(&subject, "eta_ch out of (0,1]"));
                }
                if !(e.eta_dis > 0.0 && e.eta_dis <= 1.0) {
                    out.push(violation(&subject, "eta_dis out of (0,1]"));
                }
                if !(e.soc_min <= e.soc_init) {
                    out.push(violation(&subject, "soc_init below soc_min"));
                }
                if !(e.soc_init <= e.soc_max) {
                    out.push(violation(&subject, "soc_init above soc_max"));
                }
                if !(e.q_max >= 0.0) {
                    out.push(violation(&subject, "q_max negative"));
                }
            }
            DeviceParams::Renewable(r) => {
                if !(r.forecast_sd >= 0.0) {
                    out.push(violation(&subject, "forecast_sd negative"));
                }
                if !(r.q_max >= 0.0) {
                    out.push(violation(&subject, "q_max negative"));
                }
            }
            DeviceParams::Load(l) => {
                if l.p_demand.iter().any(|&p| !(p >= 0.0)) {
                    out.push(violation(&subject, "p_demand negative"));
                }
                if l.p_demand.len() < series_len || l.q_demand.len() < series_len {
                    out.push(violation(
                        &subject,
                        format!("demand series shorter than T + look-ahead = {}", series_len),
                    ));
                }
            }
        }
    }
    for b in buses {
        match device_count.get(&b.id).copied().unwrap_or(0) {
            1 => {}
            0 => out.push(violation(format!("bus {}", b.id), "no device")),
            _ => out.push(violation(format!("bus {}", b.id), "more than one device")),
        }
    }

    if horizon.steps == 0 {
        out.push(violation("horizon", "steps must be positive"));
    }
    if !(horizon.dt > 0.0) {
        out.push(violation("horizon", "dt not positive"));
    }
    if !(horizon.v_min > 0.0 && horizon.v_min <= 1.0 && 1.0 <= horizon.v_max) {
        out.push(violation("horizon", "voltage bounds must satisfy 0 < v_min <= 1 <= v_max"));
    }
    if !(horizon.epsilon >= 0.0) {
        out.push(violation("horizon", "epsilon negative"));
    }
    if horizon.mpc_lookahead > horizon.steps {
        out.push(violation("horizon", "mpc_lookahead exceeds steps"));
    }
    if horizon.polygon_sides == 0 {
        out.push(violation("horizon", "polygon_sides must be at least 1"));
    }
    out
}

fn build_topology(slack_bus: BusId, buses: &[Bus], lines: &[Line]) -> Result<Topology, Violation> {
    let n = buses.len();
    let index: HashMap<BusId, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    if lines.len() + 1 != n {
        return Err(violation(
            "network",
            format!("not radial: {} lines for {} buses", lines.len(), n),
        ));
    }
    let slack = index[&slack_bus];
    let ends: Vec<(usize, usize)> = lines.iter().map(|l| (index[&l.from], index[&l.to])).collect();
    let mut parent_line = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for (k, &(f, t)) in ends.iter().enumerate() {
        if t == slack {
            return Err(violation("network", "slack bus has an incoming line"));
        }
        if parent_line[t].is_some() {
            return Err(violation(format!("bus {}", buses[t].id), "not radial: two incoming lines"));
        }
        parent_line[t] = Some(k);
        children[f].push(k);
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for &k in &children[b] {
            let t = ends[k].1;
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    if order.len() != n {
        return Err(violation(
            "network",
            "not radial: some buses are not reachable from the slack bus",
        ));
    }
    Ok(Topology {
        slack,
        parent_line,
        children,
        ends,
        order,
    })
}

/// Draw `horizon + 1` forecast values for the renewable at `bus`, starting at
/// step `t`. Values are i.i.d. Gaussian, truncated at zero.
pub fn sample_res_forecast<R: Rng + ?Sized>(
    scenario: &Scenario,
    bus: usize,
    t: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<f64>, ScenarioError> {
    let len = scenario.series_len();
    if t + horizon >= len {
        return Err(ScenarioError::Horizon {
            start: t,
            horizon,
            len,
        });
    }
    let params = match scenario.device(bus) {
        DeviceParams::Renewable(p) => p,
        _ => return Err(ScenarioError::NotRenewable(scenario.buses[bus].id)),
    };
    Ok(draw_truncated(params, horizon + 1, rng))
}

fn draw_truncated<R: Rng + ?Sized>(params: &ResParams, n: usize, rng: &mut R) -> Vec<f64> {
    if params.forecast_sd == 0.0 {
        return vec![params.forecast_mean.max(0.0); n];
    }
    let normal = Normal::new(params.forecast_mean, params.forecast_sd).expect("finite sd");
    (0..n).map(|_| normal.sample(rng).max(0.0)).collect()
}

/// RES forecasts drawn once per episode, shared by every controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    /// One series per renewable bus, aligned with `Scenario::res_buses`.
    pub res: Vec<Vec<f64>>,
}

impl ForecastSet {
    pub fn sample<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> ForecastSet {
        let len = scenario.series_len();
        let res = scenario
            .res_buses
            .iter()
            .map(|&b| draw_truncated(scenario.res(b), len, rng))
            .collect();
        ForecastSet { res }
    }

    /// Forecast for renewable number `k` (position in `res_buses`) at step `t`.
    pub fn res_at(&self, k: usize, t: usize) -> f64 {
        self.res[k][t]
    }
}
