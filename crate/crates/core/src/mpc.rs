//! Receding-horizon restoration controller. Every step solves the relaxed
//! window LP, applies its first-step decisions and advances fuel and state of
//! charge with the applied powers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use crate::lp::{solve_lp, to_lp_format, LpError, LpProblem, LpSolution, LpStatus, Relation, VarId};
use crate::netmodel::{BusId, ForecastSet, PolygonPairing, Scenario};
use crate::powerflow::{solve_distflow, FlowState, InjectionSet, PowerFlowError};
use crate::relaxations::{
    build_polygon, polygon_constraints_lifted, polygon_constraints_shared, EssHull, PolygonApprox,
};

/// Weight slope favouring earlier benefit among otherwise tied window plans.
const EARLY_PREFERENCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("state has no {what} entry for bus {bus}")]
    MissingState { what: &'static str, bus: BusId },
    #[error("window LP infeasible at step {step}")]
    Infeasible { step: usize },
    #[error("window LP unbounded at step {step}")]
    Unbounded { step: usize },
    #[error("LP solver failed at step {step}: {source}")]
    Lp { step: usize, source: LpError },
    #[error("power flow failed at step {step}: {source}")]
    PowerFlow { step: usize, source: PowerFlowError },
    #[error("step {t} outside horizon of {steps}")]
    Step { t: usize, steps: usize },
    #[error("cannot write LP dump: {0}")]
    Dump(#[from] std::io::Error),
}

/// Carried device state, keyed by bus index.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub soc: BTreeMap<usize, f64>,
    pub fuel: BTreeMap<usize, f64>,
    pub mt_power: BTreeMap<usize, f64>,
    pub pickup: BTreeMap<usize, f64>,
}

impl DeviceState {
    pub fn initial(net: &Scenario) -> Self {
        DeviceState {
            soc: net.ess_buses.iter().map(|&b| (b, net.ess(b).soc_init)).collect(),
            fuel: net.mt_buses.iter().map(|&b| (b, net.mt(b).fuel_init)).collect(),
            mt_power: net.mt_buses.iter().map(|&b| (b, 0.0)).collect(),
            pickup: net.load_buses.iter().map(|&b| (b, 0.0)).collect(),
        }
    }

    pub fn check(&self, net: &Scenario) -> Result<(), MpcError> {
        let missing = |map: &BTreeMap<usize, f64>, buses: &[usize], what| {
            buses.iter().find(|b| !map.contains_key(b)).map(|&b| MpcError::MissingState {
                what,
                bus: net.buses[b].id,
            })
        };
        let errs = [
            missing(&self.soc, &net.ess_buses, "state-of-charge"),
            missing(&self.fuel, &net.mt_buses, "fuel"),
            missing(&self.mt_power, &net.mt_buses, "microturbine power"),
            missing(&self.pickup, &net.load_buses, "pickup"),
        ];
        match errs.into_iter().flatten().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId, coef: f64) -> Self {
        LinExpr { terms: vec![(v, coef)], constant: 0.0 }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, a)| a * values[v.0]).sum::<f64>()
    }
}

/// Variables of one step of the relaxed network model.
#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub p_line: Vec<VarId>,
    pub q_line: Vec<VarId>,
    pub l_line: Vec<VarId>,
    pub v: Vec<VarId>,
}

/// One polygon per line, covering `|P|, |Q| <= sqrt(l_max) * v_max`.
pub fn line_polygons(net: &Scenario) -> Vec<PolygonApprox> {
    net.lines
        .iter()
        .map(|l| build_polygon(net.horizon.polygon_sides, l.l_max.sqrt() * net.horizon.v_max))
        .collect()
}

/// Add linearized DistFlow for one step with the given nodal injections:
/// balance and voltage-drop rows, voltage and current limits, slack voltage
/// fixed at 1, and the polygon rows.
pub fn add_network(
    lp: &mut LpProblem,
    net: &Scenario,
    polys: &[PolygonApprox],
    label: &str,
    p_inj: &[LinExpr],
    q_inj: &[LinExpr],
) -> NetworkVars {
    let topo = &net.topology;
    let h = &net.horizon;
    let inf = f64::INFINITY;
    let mut vars = NetworkVars {
        p_line: Vec::new(),
        q_line: Vec::new(),
        l_line: Vec::new(),
        v: Vec::new(),
    };
    for (k, line) in net.lines.iter().enumerate() {
        vars.p_line.push(lp.add_var(format!("{label}_P{k}"), -inf, inf));
        vars.q_line.push(lp.add_var(format!("{label}_Q{k}"), -inf, inf));
        vars.l_line.push(lp.add_var(format!("{label}_l{k}"), 0.0, line.l_max));
    }
    for bus in 0..net.num_buses() {
        let (lo, hi) = if bus == topo.slack { (1.0, 1.0) } else { (h.v_min, h.v_max) };
        vars.v.push(lp.add_var(format!("{label}_v{bus}"), lo, hi));
    }
    for bus in 0..net.num_buses() {
        for (expr, flows, react) in [(&p_inj[bus], &vars.p_line, false), (&q_inj[bus], &vars.q_line, true)] {
            let mut terms = expr.terms.clone();
            for &k in &topo.children[bus] {
                terms.push((flows[k], -1.0));
            }
            if let Some(k) = topo.parent_line[bus] {
                let line = &net.lines[k];
                terms.push((flows[k], 1.0));
                terms.push((vars.l_line[k], if react { -line.x } else { -line.r }));
            }
            let tag = if react { "q" } else { "p" };
            lp.add_row(format!("{label}_bal{tag}{bus}"), terms, Relation::Eq, -expr.constant);
        }
    }
    for (k, line) in net.lines.iter().enumerate() {
        let (i, j) = topo.ends[k];
        lp.add_row(
            format!("{label}_vdrop{k}"),
            vec![
                (vars.v[j], 1.0),
                (vars.v[i], -1.0),
                (vars.p_line[k], 2.0 * line.r),
                (vars.q_line[k], 2.0 * line.x),
                (vars.l_line[k], -(line.r * line.r + line.x * line.x)),
            ],
            Relation::Eq,
            0.0,
        );
        let tag = format!("{label}_line{k}");
        let rows = match h.polygon_pairing {
            PolygonPairing::Independent => {
                let zp = lp.add_var(format!("{tag}_zp"), -inf, inf);
                let zq = lp.add_var(format!("{tag}_zq"), -inf, inf);
                polygon_constraints_lifted(&polys[k], &tag, vars.l_line[k], vars.p_line[k], vars.q_line[k], zp, zq)
            }
            PolygonPairing::Shared => {
                polygon_constraints_shared(&polys[k], &tag, vars.l_line[k], vars.p_line[k], vars.q_line[k])
            }
        };
        lp.rows.extend(rows);
    }
    vars
}

/// Decision variables of one window step.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub global_step: usize,
    pub net: NetworkVars,
    pub rho: Vec<VarId>,
    pub kappa: Vec<VarId>,
    pub res_q: Vec<VarId>,
    pub mt_p: Vec<VarId>,
    pub mt_q: Vec<VarId>,
    pub ch: Vec<VarId>,
    pub dis: Vec<VarId>,
    pub ess_q: Vec<VarId>,
    /// State of charge after this step, when the next step is in the horizon.
    pub soc_next: Vec<Option<VarId>>,
    pub fuel_next: Vec<Option<VarId>>,
}

#[derive(Debug, Clone)]
pub struct MpcLp {
    pub problem: LpProblem,
    pub steps: Vec<StepVars>,
}

/// Window `[t, min(t + lookahead, T - 1)]` for a 0-based step `t`.
pub fn window(net: &Scenario, t: usize, lookahead: usize) -> std::ops::RangeInclusive<usize> {
    t..=(t + lookahead).min(net.horizon.steps - 1)
}

/// Assemble the relaxed window LP at 0-based step `t`.
pub fn build_mpc_lp(
    net: &Scenario,
    state: &DeviceState,
    forecasts: &ForecastSet,
    t: usize,
) -> Result<MpcLp, MpcError> {
    state.check(net)?;
    let h = &net.horizon;
    if t >= h.steps {
        return Err(MpcError::Step { t, steps: h.steps });
    }
    let polys = line_polygons(net);
    let mut lp = LpProblem::new();
    let win: Vec<usize> = window(net, t, h.mpc_lookahead).collect();
    let kmax = win.len();
    let mut steps: Vec<StepVars> = Vec::with_capacity(kmax);
    for (k, &g) in win.iter().enumerate() {
        let label = format!("k{k}");
        let weight = 1.0 + EARLY_PREFERENCE * (kmax - 1 - k) as f64;
        let n = net.num_buses();
        let mut p_inj = vec![LinExpr::default(); n];
        let mut q_inj = vec![LinExpr::default(); n];
        let mut sv = StepVars {
            global_step: g,
            net: NetworkVars { p_line: vec![], q_line: vec![], l_line: vec![], v: vec![] },
            rho: vec![],
            kappa: vec![],
            res_q: vec![],
            mt_p: vec![],
            mt_q: vec![],
            ch: vec![],
            dis: vec![],
            ess_q: vec![],
            soc_next: vec![],
            fuel_next: vec![],
        };
        for &b in &net.load_buses {
            let ld = net.load(b);
            let rho = lp.add_var(format!("{label}_rho{b}"), 0.0, 1.0);
            lp.add_objective(rho, weight * ld.priority * ld.p_demand[g]);
            p_inj[b] = LinExpr::var(rho, -ld.p_demand[g]);
            q_inj[b] = LinExpr::var(rho, -ld.q_demand[g]);
            sv.rho.push(rho);
        }
        for (i, &b) in net.res_buses.iter().enumerate() {
            let r = net.res(b);
            let fc = forecasts.res_at(i, g);
            let kappa = lp.add_var(format!("{label}_kappa{b}"), 0.0, 1.0);
            let q = lp.add_var(format!("{label}_Qres{b}"), -r.q_max, r.q_max);
            p_inj[b] = LinExpr { terms: vec![(kappa, -fc)], constant: fc };
            q_inj[b] = LinExpr::var(q, 1.0);
            sv.kappa.push(kappa);
            sv.res_q.push(q);
        }
        for &b in &net.mt_buses {
            let m = net.mt(b);
            let p = lp.add_var(format!("{label}_Pmt{b}"), m.p_min, m.p_max);
            let q = lp.add_var(format!("{label}_Qmt{b}"), -m.q_max, m.q_max);
            lp.add_objective(p, -weight * m.cost_coeff);
            p_inj[b] = LinExpr::var(p, 1.0);
            q_inj[b] = LinExpr::var(q, 1.0);
            sv.mt_p.push(p);
            sv.mt_q.push(q);
        }
        for &b in &net.ess_buses {
            let e = net.ess(b);
            let ch = lp.add_var(format!("{label}_ch{b}"), 0.0, e.p_ch_max);
            let dis = lp.add_var(format!("{label}_dis{b}"), 0.0, e.p_dis_max);
            let q = lp.add_var(format!("{label}_Qess{b}"), -e.q_max, e.q_max);
            let hull = EssHull::new(e.p_ch_max, e.p_dis_max).expect("validated storage limits");
            lp.rows.push(hull.row(&format!("{label}_ess{b}"), ch, dis));
            p_inj[b] = LinExpr { terms: vec![(dis, 1.0), (ch, -1.0)], constant: 0.0 };
            q_inj[b] = LinExpr::var(q, 1.0);
            sv.ch.push(ch);
            sv.dis.push(dis);
            sv.ess_q.push(q);
        }
        sv.net = add_network(&mut lp, net, &polys, &label, &p_inj, &q_inj);

        // intertemporal rows
        let has_next = g + 1 < h.steps;
        for (i, &b) in net.ess_buses.iter().enumerate() {
            let e = net.ess(b);
            if !has_next {
                sv.soc_next.push(None);
                continue;
            }
            let s_next = lp.add_var(format!("{label}_soc{b}"), e.soc_min, e.soc_max);
            let mut terms = vec![(s_next, 1.0), (sv.ch[i], -e.eta_ch * h.dt), (sv.dis[i], h.dt / e.eta_dis)];
            let mut rhs = 0.0;
            match k.checked_sub(1).and_then(|p| steps[p].soc_next[i]) {
                Some(prev) => terms.push((prev, -1.0)),
                None => rhs = state.soc[&b],
            }
            lp.add_row(format!("{label}_socev{b}"), terms, Relation::Eq, rhs);
            sv.soc_next.push(Some(s_next));
        }
        for (i, &b) in net.mt_buses.iter().enumerate() {
            let m = net.mt(b);
            if has_next {
                let f_next = lp.add_var(format!("{label}_fuel{b}"), 0.0, f64::INFINITY);
                let mut terms = vec![(f_next, 1.0), (sv.mt_p[i], m.tau)];
                let mut rhs = 0.0;
                match k.checked_sub(1).and_then(|p| steps[p].fuel_next[i]) {
                    Some(prev) => terms.push((prev, -1.0)),
                    None => rhs = state.fuel[&b],
                }
                lp.add_row(format!("{label}_fuelev{b}"), terms, Relation::Eq, rhs);
                sv.fuel_next.push(Some(f_next));
            } else {
                sv.fuel_next.push(None);
            }
            if g == 0 {
                lp.add_row(format!("{label}_ramp0_{b}"), vec![(sv.mt_p[i], 1.0)], Relation::Le, m.ramp_up_max);
            } else {
                let (terms, offset) = match k {
                    0 => (vec![(sv.mt_p[i], 1.0)], state.mt_power[&b]),
                    _ => (vec![(sv.mt_p[i], 1.0), (steps[k - 1].mt_p[i], -1.0)], 0.0),
                };
                lp.add_row(format!("{label}_rampu{b}"), terms.clone(), Relation::Le, m.ramp_up_max + offset);
                lp.add_row(format!("{label}_rampd{b}"), terms, Relation::Ge, m.ramp_down_min + offset);
            }
        }
        if g > 0 {
            for (i, &b) in net.load_buses.iter().enumerate() {
                let (terms, rhs) = match k {
                    0 => (vec![(sv.rho[i], 1.0)], state.pickup[&b] - h.epsilon),
                    _ => (vec![(sv.rho[i], 1.0), (steps[k - 1].rho[i], -1.0)], -h.epsilon),
                };
                lp.add_row(format!("{label}_mono{b}"), terms, Relation::Ge, rhs);
            }
        }
        steps.push(sv);
    }
    Ok(MpcLp { problem: lp, steps })
}

#[derive(Debug, Clone, Default)]
pub struct MpcOptions {
    /// Write every window LP in CPLEX LP format to this directory.
    pub dump_dir: Option<PathBuf>,
}

/// Decisions and outcomes of one applied step (0-based `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub pickup: Vec<f64>,
    pub curtailment: Vec<f64>,
    pub res_p: Vec<f64>,
    pub res_q: Vec<f64>,
    pub mt_p: Vec<f64>,
    pub mt_q: Vec<f64>,
    pub ch: Vec<f64>,
    pub dis: Vec<f64>,
    pub ess_q: Vec<f64>,
    pub soc_before: Vec<f64>,
    pub soc_after: Vec<f64>,
    pub fuel_before: Vec<f64>,
    pub fuel_after: Vec<f64>,
    /// Voltages of the LP plan.
    pub planned_v: Vec<f64>,
    /// Exact DistFlow solution for the applied injections.
    pub flow: FlowState,
    /// Realized minus planned slack injection.
    pub balance_gap_p: f64,
    pub balance_gap_q: f64,
    /// Restored load value minus generation cost.
    pub stage_value: f64,
    pub lp_iterations: usize,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationLog {
    pub scenario: String,
    pub records: Vec<StepRecord>,
}

/// Value of a step: `sum xi_L rho P~ - sum xi_MT P_MT`.
pub fn stage_value(net: &Scenario, t: usize, pickup: &[f64], mt_p: &[f64]) -> f64 {
    let loads: f64 = net
        .load_buses
        .iter()
        .zip(pickup)
        .map(|(&b, r)| net.load(b).priority * r * net.load(b).p_demand[t])
        .sum();
    let cost: f64 = net.mt_buses.iter().zip(mt_p).map(|(&b, p)| net.mt(b).cost_coeff * p).sum();
    loads - cost
}

fn values(sol: &LpSolution, vars: &[VarId]) -> Vec<f64> {
    vars.iter().map(|&v| sol.value(v)).collect()
}

/// Injections of applied decisions, indexed by bus.
pub fn applied_injections(net: &Scenario, t: usize, rec: &StepRecord) -> InjectionSet {
    let mut inj = InjectionSet::zeros(net.num_buses());
    for (i, &b) in net.load_buses.iter().enumerate() {
        inj.p[b] = -rec.pickup[i] * net.load(b).p_demand[t];
        inj.q[b] = -rec.pickup[i] * net.load(b).q_demand[t];
    }
    for (i, &b) in net.res_buses.iter().enumerate() {
        inj.p[b] = rec.res_p[i];
        inj.q[b] = rec.res_q[i];
    }
    for (i, &b) in net.mt_buses.iter().enumerate() {
        inj.p[b] = rec.mt_p[i];
        inj.q[b] = rec.mt_q[i];
    }
    for (i, &b) in net.ess_buses.iter().enumerate() {
        inj.p[b] = rec.dis[i] - rec.ch[i];
        inj.q[b] = rec.ess_q[i];
    }
    inj
}

/// Advance the device state with applied powers.
pub fn advance_state(net: &Scenario, state: &DeviceState, rec: &StepRecord) -> DeviceState {
    let dt = net.horizon.dt;
    let mut next = state.clone();
    for (i, &b) in net.ess_buses.iter().enumerate() {
        let e = net.ess(b);
        next.soc.insert(b, state.soc[&b] + e.eta_ch * rec.ch[i] * dt - rec.dis[i] * dt / e.eta_dis);
    }
    for (i, &b) in net.mt_buses.iter().enumerate() {
        next.fuel.insert(b, state.fuel[&b] - net.mt(b).tau * rec.mt_p[i]);
        next.mt_power.insert(b, rec.mt_p[i]);
    }
    for (i, &b) in net.load_buses.iter().enumerate() {
        next.pickup.insert(b, rec.pickup[i]);
    }
    next
}

/// Run the controller over the whole horizon.
pub fn run_mpc(net: &Scenario, forecasts: &ForecastSet, opts: &MpcOptions) -> Result<RestorationLog, MpcError> {
    let mut state = DeviceState::initial(net);
    let mut records = Vec::with_capacity(net.horizon.steps);
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir)?;
    }
    for t in 0..net.horizon.steps {
        let started = Instant::now();
        let mpc = build_mpc_lp(net, &state, forecasts, t)?;
        if let Some(dir) = &opts.dump_dir {
            std::fs::write(dir.join(format!("mpc_t{}.lp", t + 1)), to_lp_format(&mpc.problem))?;
        }
        let sol = solve_lp(&mpc.problem).map_err(|source| MpcError::Lp { step: t + 1, source })?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(MpcError::Infeasible { step: t + 1 }),
            LpStatus::Unbounded => return Err(MpcError::Unbounded { step: t + 1 }),
        }
        let first = &mpc.steps[0];
        let curtailment = values(&sol, &first.kappa);
        let res_p = net
            .res_buses
            .iter()
            .enumerate()
            .map(|(i, _)| (1.0 - curtailment[i]) * forecasts.res_at(i, t))
            .collect();
        let mut rec = StepRecord {
            t,
            pickup: values(&sol, &first.rho),
            curtailment,
            res_p,
            res_q: values(&sol, &first.res_q),
            mt_p: values(&sol, &first.mt_p),
            mt_q: values(&sol, &first.mt_q),
            ch: values(&sol, &first.ch),
            dis: values(&sol, &first.dis),
            ess_q: values(&sol, &first.ess_q),
            soc_before: net.ess_buses.iter().map(|b| state.soc[b]).collect(),
            soc_after: vec![],
            fuel_before: net.mt_buses.iter().map(|b| state.fuel[b]).collect(),
            fuel_after: vec![],
            planned_v: values(&sol, &first.net.v),
            flow: FlowState::flat(0, 0),
            balance_gap_p: 0.0,
            balance_gap_q: 0.0,
            stage_value: 0.0,
            lp_iterations: sol.iterations,
            solve_seconds: 0.0,
        };
        rec.stage_value = stage_value(net, t, &rec.pickup, &rec.mt_p);
        let inj = applied_injections(net, t, &rec);
        let flow = solve_distflow(net, &inj).map_err(|source| MpcError::PowerFlow { step: t + 1, source })?;
        let s = net.topology.slack;
        rec.balance_gap_p = flow.slack_p - inj.p[s];
        rec.balance_gap_q = flow.slack_q - inj.q[s];
        rec.flow = flow;
        let next = advance_state(net, &state, &rec);
        rec.soc_after = net.ess_buses.iter().map(|b| next.soc[b]).collect();
        rec.fuel_after = net.mt_buses.iter().map(|b| next.fuel[b]).collect();
        rec.solve_seconds = started.elapsed().as_secs_f64();
        records.push(rec);
        state = next;
    }
    Ok(RestorationLog { scenario: net.name.clone(), records })
}

impl RestorationLog {
    /// Long-format CSV `t,quantity,bus,value`, one row per logged quantity.
    /// Steps are numbered from 1 and buses by their identifiers.
    pub fn to_csv(&self, net: &Scenario) -> String {
        let mut out = String::from("t,quantity,bus,value\n");
        let id = |b: usize| net.buses[b].id;
        for r in &self.records {
            let t = r.t + 1;
            let mut put = |q: &str, bus: Option<BusId>, v: f64| {
                let bus = bus.map(|b| b.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{t},{q},{bus},{v}");
            };
            put("stage_value", None, r.stage_value);
            for (i, &b) in net.load_buses.iter().enumerate() {
                put("pickup", Some(id(b)), r.pickup[i]);
            }
            for (i, &b) in net.mt_buses.iter().enumerate() {
                put("mt_p", Some(id(b)), r.mt_p[i]);
                put("mt_q", Some(id(b)), r.mt_q[i]);
                put("fuel_before", Some(id(b)), r.fuel_before[i]);
                put("fuel_after", Some(id(b)), r.fuel_after[i]);
            }
            for (i, &b) in net.res_buses.iter().enumerate() {
                put("res_p", Some(id(b)), r.res_p[i]);
                put("res_q", Some(id(b)), r.res_q[i]);
                put("curtailment", Some(id(b)), r.curtailment[i]);
            }
            for (i, &b) in net.ess_buses.iter().enumerate() {
                put("ess_ch", Some(id(b)), r.ch[i]);
                put("ess_dis", Some(id(b)), r.dis[i]);
                put("ess_q", Some(id(b)), r.ess_q[i]);
                put("cc_product", Some(id(b)), r.ch[i] * r.dis[i]);
                put("soc_before", Some(id(b)), r.soc_before[i]);
                put("soc_after", Some(id(b)), r.soc_after[i]);
            }
            for b in 0..net.num_buses() {
                put("voltage", Some(id(b)), r.flow.v[b]);
                put("planned_voltage", Some(id(b)), r.planned_v[b]);
            }
            put("balance_gap_p", None, r.balance_gap_p);
            put("balance_gap_q", None, r.balance_gap_q);
        }
        out
    }
}

/// Post-hoc check of a log against the physical limits; returns one message
/// per violation found.
pub fn check_log(net: &Scenario, log: &RestorationLog) -> Vec<String> {
    const TOL: f64 = 1e-7;
    let h = &net.horizon;
    let mut out = Vec::new();
    let mut bad = |t: usize, what: String| out.push(format!("step {}: {what}", t + 1));
    for (n, r) in log.records.iter().enumerate() {
        let t = r.t;
        if (r.planned_v[net.topology.slack] - 1.0).abs() > TOL || (r.flow.v[net.topology.slack] - 1.0).abs() > TOL {
            bad(t, "slack voltage not 1".into());
        }
        for (b, &v) in r.planned_v.iter().enumerate() {
            if v < h.v_min - TOL || v > h.v_max + TOL {
                bad(t, format!("planned voltage {v} at bus index {b}"));
            }
        }
        for (k, line) in net.lines.iter().enumerate() {
            if r.flow.l_line[k] > line.l_max + TOL {
                bad(t, format!("line {k} current {}", r.flow.l_line[k]));
            }
        }
        for (i, &b) in net.mt_buses.iter().enumerate() {
            let m = net.mt(b);
            let p = r.mt_p[i];
            if p < m.p_min - TOL || p > m.p_max + TOL {
                bad(t, format!("MT power {p} out of bounds"));
            }
            if t == 0 {
                if p > m.ramp_up_max + TOL {
                    bad(t, "initial ramp exceeded".into());
                }
            } else if n > 0 {
                let d = p - log.records[n - 1].mt_p[i];
                if d > m.ramp_up_max + TOL || d < m.ramp_down_min - TOL {
                    bad(t, format!("ramp {d}"));
                }
            }
            if r.fuel_before[i] < -TOL {
                bad(t, "negative fuel".into());
            }
            if r.fuel_after[i] > r.fuel_before[i] + TOL {
                bad(t, "fuel increased".into());
            }
        }
        for (i, &b) in net.ess_buses.iter().enumerate() {
            let e = net.ess(b);
            let s = r.soc_before[i];
            if s < e.soc_min - TOL || s > e.soc_max + TOL {
                bad(t, format!("state of charge {s} out of bounds"));
            }
        }
        if n > 0 {
            for (i, &rho) in r.pickup.iter().enumerate() {
                if rho - log.records[n - 1].pickup[i] < -h.epsilon - TOL {
                    bad(t, format!("pickup dropped more than epsilon at load {i}"));
                }
            }
        }
    }
    out
}
