//! Restoration as a constrained Markov decision process.
//!
//! The state carries device levels, the previous pickups and the forecast
//! window; the action prescribes device set-points over the whole window.
//! Pickups are not part of the action: each step solves a small inner LP that
//! picks the largest priority-weighted pickup the prescribed generation can
//! serve, and the applied powers are then run through the exact power flow.

use thiserror::Error;

use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, VarId};
use crate::mpc::{add_network, line_polygons, DeviceState, LinExpr, MpcError};
use crate::netmodel::{ForecastSet, Scenario};
use crate::powerflow::{
    build_sensitivity_system, power_sensitivity, residual, solve_distflow, FlowState, InjectionSet,
    PowerFlowError,
};
use crate::relaxations::PolygonApprox;

/// Costs that only break ties when generation exceeds what loads can absorb:
/// storage is curtailed before renewables.
const DISCHARGE_TIE: f64 = 1e-4;
const RENEWABLE_TIE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CmdpError {
    #[error("action has {got} entries, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("state is at step {t}, past the last decision step of {steps}")]
    Terminal { t: usize, steps: usize },
    #[error(transparent)]
    State(#[from] MpcError),
    #[error("power flow failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("inner pickup LP failed: {0}")]
    Lp(#[from] LpError),
}

/// One coordinate of a per-step action block. Indices are positions within
/// the scenario's bus list of the matching kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionSlot {
    ResP(usize),
    ResQ(usize),
    MtP(usize),
    MtQ(usize),
    Charge(usize),
    Discharge(usize),
    EssQ(usize),
}

/// Flattening of window actions: step-major, and within a step renewables
/// (P, Q), microturbines (P, Q), then storage (charge, discharge, Q).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub n_res: usize,
    pub n_mt: usize,
    pub n_ess: usize,
    pub steps: usize,
}

impl ActionLayout {
    pub fn new(net: &Scenario, steps: usize) -> Self {
        ActionLayout {
            n_res: net.res_buses.len(),
            n_mt: net.mt_buses.len(),
            n_ess: net.ess_buses.len(),
            steps,
        }
    }

    pub fn block(&self) -> usize {
        2 * self.n_res + 2 * self.n_mt + 3 * self.n_ess
    }

    pub fn dim(&self) -> usize {
        self.block() * self.steps
    }

    pub fn index(&self, step: usize, slot: ActionSlot) -> usize {
        let (r, m) = (2 * self.n_res, 2 * self.n_mt);
        let off = match slot {
            ActionSlot::ResP(i) => 2 * i,
            ActionSlot::ResQ(i) => 2 * i + 1,
            ActionSlot::MtP(i) => r + 2 * i,
            ActionSlot::MtQ(i) => r + 2 * i + 1,
            ActionSlot::Charge(i) => r + m + 3 * i,
            ActionSlot::Discharge(i) => r + m + 3 * i + 1,
            ActionSlot::EssQ(i) => r + m + 3 * i + 2,
        };
        step * self.block() + off
    }

    pub fn slot(&self, index: usize) -> (usize, ActionSlot) {
        let step = index / self.block();
        let mut off = index % self.block();
        let slot = if off < 2 * self.n_res {
            if off % 2 == 0 { ActionSlot::ResP(off / 2) } else { ActionSlot::ResQ(off / 2) }
        } else {
            off -= 2 * self.n_res;
            if off < 2 * self.n_mt {
                if off % 2 == 0 { ActionSlot::MtP(off / 2) } else { ActionSlot::MtQ(off / 2) }
            } else {
                off -= 2 * self.n_mt;
                match off % 3 {
                    0 => ActionSlot::Charge(off / 3),
                    1 => ActionSlot::Discharge(off / 3),
                    _ => ActionSlot::EssQ(off / 3),
                }
            }
        };
        (step, slot)
    }
}

/// Window action in [`ActionLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(layout: &ActionLayout) -> Self {
        ActionVector(vec![0.0; layout.dim()])
    }

    pub fn get(&self, layout: &ActionLayout, step: usize, slot: ActionSlot) -> f64 {
        self.0[layout.index(step, slot)]
    }

    pub fn set(&mut self, layout: &ActionLayout, step: usize, slot: ActionSlot, value: f64) {
        self.0[layout.index(step, slot)] = value;
    }
}

/// Demand and renewable forecasts over the look-ahead window, one series per
/// bus in scenario order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    pub load_p: Vec<Vec<f64>>,
    pub load_q: Vec<Vec<f64>>,
    pub res_p: Vec<Vec<f64>>,
}

impl ForecastWindow {
    pub fn len(&self) -> usize {
        self.load_p.first().or(self.res_p.first()).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Decision step this state precedes.
    pub t: usize,
    pub device: DeviceState,
    pub window: ForecastWindow,
}

/// Ordered constraint values; every entry must be nonpositive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintVector(pub Vec<f64>);

impl ConstraintVector {
    pub fn max_violation(&self) -> f64 {
        self.0.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Set-points for one step after clipping to device limits.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCommand {
    pub res_p: Vec<f64>,
    pub res_q: Vec<f64>,
    pub mt_p: Vec<f64>,
    pub mt_q: Vec<f64>,
    pub ch: Vec<f64>,
    pub dis: Vec<f64>,
    pub ess_q: Vec<f64>,
}

/// Result of serving one step: what the devices actually produced, the
/// resulting pickups and the exact power flow.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub global_step: usize,
    pub command: StepCommand,
    pub pickup: Vec<f64>,
    pub res_p: Vec<f64>,
    pub mt_p: Vec<f64>,
    pub dis: Vec<f64>,
    pub slack_q: f64,
    pub flow: FlowState,
    pub injections: InjectionSet,
    /// The inner LP had no solution and every pickup was dropped to zero.
    pub fallback: bool,
    /// Number of set-points moved to respect device limits.
    pub clamped: usize,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub next: SystemState,
    pub outcome: StepOutcome,
}

/// Device levels carried from one window step to the next.
#[derive(Debug, Clone)]
struct Tracker {
    soc: Vec<f64>,
    fuel: Vec<f64>,
    mt_prev: Vec<f64>,
    pickup: Vec<f64>,
}

impl Tracker {
    fn new(net: &Scenario, device: &DeviceState) -> Self {
        Tracker {
            soc: net.ess_buses.iter().map(|b| device.soc[b]).collect(),
            fuel: net.mt_buses.iter().map(|b| device.fuel[b]).collect(),
            mt_prev: net.mt_buses.iter().map(|b| device.mt_power[b]).collect(),
            pickup: net.load_buses.iter().map(|b| device.pickup[b]).collect(),
        }
    }

    fn advance(&mut self, net: &Scenario, out: &StepOutcome) {
        let dt = net.horizon.dt;
        for (i, &b) in net.ess_buses.iter().enumerate() {
            let e = net.ess(b);
            self.soc[i] += e.eta_ch * out.command.ch[i] * dt - out.dis[i] * dt / e.eta_dis;
        }
        for (i, &b) in net.mt_buses.iter().enumerate() {
            self.fuel[i] -= net.mt(b).tau * out.mt_p[i] * dt;
            self.mt_prev[i] = out.mt_p[i];
        }
        self.pickup.clone_from(&out.pickup);
    }

    fn device_state(&self, net: &Scenario) -> DeviceState {
        let zip = |buses: &[usize], vals: &[f64]| buses.iter().copied().zip(vals.iter().copied()).collect();
        DeviceState {
            soc: zip(&net.ess_buses, &self.soc),
            fuel: zip(&net.mt_buses, &self.fuel),
            mt_power: zip(&net.mt_buses, &self.mt_prev),
            pickup: zip(&net.load_buses, &self.pickup),
        }
    }
}

/// Episode environment: a scenario, its cached renewable forecasts and the
/// reward discount.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    pub net: &'a Scenario,
    pub forecasts: ForecastSet,
    pub gamma: f64,
    pub layout: ActionLayout,
    polys: Vec<PolygonApprox>,
}

impl<'a> Environment<'a> {
    pub fn new(net: &'a Scenario, forecasts: ForecastSet, gamma: f64) -> Self {
        let layout = ActionLayout::new(net, net.horizon.cpo_lookahead + 1);
        Environment { net, forecasts, gamma, layout, polys: line_polygons(net) }
    }

    pub fn action_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn constraint_dim(&self) -> usize {
        self.layout.steps * (4 * self.layout.n_res + 7 * self.layout.n_mt + 9 * self.layout.n_ess)
    }

    /// Forecast window starting at `t`; shorter (possibly empty) near the end
    /// of the stored series.
    pub fn window(&self, t: usize) -> ForecastWindow {
        let end = (t + self.layout.steps).min(self.net.series_len());
        let span = t.min(end)..end;
        ForecastWindow {
            load_p: self.net.load_buses.iter().map(|&b| self.net.load(b).p_demand[span.clone()].to_vec()).collect(),
            load_q: self.net.load_buses.iter().map(|&b| self.net.load(b).q_demand[span.clone()].to_vec()).collect(),
            res_p: self.forecasts.res.iter().map(|s| s[span.clone()].to_vec()).collect(),
        }
    }

    pub fn state(&self, t: usize, device: DeviceState) -> SystemState {
        SystemState { t, device, window: self.window(t) }
    }

    pub fn initial_state(&self) -> SystemState {
        self.state(0, DeviceState::initial(self.net))
    }

    fn check(&self, state: &SystemState, action: &ActionVector) -> Result<(), CmdpError> {
        state.device.check(self.net)?;
        if action.0.len() != self.action_dim() {
            return Err(CmdpError::ActionDim { expected: self.action_dim(), got: action.0.len() });
        }
        if state.t >= self.net.horizon.steps || state.window.len() < self.layout.steps {
            return Err(CmdpError::Terminal { t: state.t, steps: self.net.horizon.steps });
        }
        Ok(())
    }

    /// Clip one action block to box, ramp, fuel and state-of-charge limits.
    fn clip_step(&self, tr: &Tracker, action: &ActionVector, k: usize, res_cap: &[f64]) -> (StepCommand, usize) {
        let net = self.net;
        let dt = net.horizon.dt;
        let lay = &self.layout;
        let mut moved = 0usize;
        let mut clamp = |x: f64, lo: f64, hi: f64| {
            let y = x.max(lo).min(hi);
            if y != x {
                moved += 1;
            }
            y
        };
        let mut cmd = StepCommand {
            res_p: vec![],
            res_q: vec![],
            mt_p: vec![],
            mt_q: vec![],
            ch: vec![],
            dis: vec![],
            ess_q: vec![],
        };
        for (i, &b) in net.res_buses.iter().enumerate() {
            let q_max = net.res(b).q_max;
            cmd.res_p.push(clamp(action.get(lay, k, ActionSlot::ResP(i)), 0.0, res_cap[i]));
            cmd.res_q.push(clamp(action.get(lay, k, ActionSlot::ResQ(i)), -q_max, q_max));
        }
        for (i, &b) in net.mt_buses.iter().enumerate() {
            let m = net.mt(b);
            let hi = m.p_max.min(tr.mt_prev[i] + m.ramp_up_max).min(tr.fuel[i].max(0.0) / (m.tau * dt));
            let lo = m.p_min.max(tr.mt_prev[i] + m.ramp_down_min).min(hi);
            cmd.mt_p.push(clamp(action.get(lay, k, ActionSlot::MtP(i)), lo, hi));
            cmd.mt_q.push(clamp(action.get(lay, k, ActionSlot::MtQ(i)), -m.q_max, m.q_max));
        }
        for (i, &b) in net.ess_buses.iter().enumerate() {
            let e = net.ess(b);
            let room = ((e.soc_max - tr.soc[i]) / (e.eta_ch * dt)).max(0.0);
            let ch = clamp(action.get(lay, k, ActionSlot::Charge(i)), 0.0, e.p_ch_max.min(room));
            let avail = ((tr.soc[i] + e.eta_ch * ch * dt - e.soc_min) * e.eta_dis / dt).max(0.0);
            cmd.ch.push(ch);
            cmd.dis.push(clamp(action.get(lay, k, ActionSlot::Discharge(i)), 0.0, e.p_dis_max.min(avail)));
            cmd.ess_q.push(clamp(action.get(lay, k, ActionSlot::EssQ(i)), -e.q_max, e.q_max));
        }
        (cmd, moved)
    }

    /// Largest priority-weighted pickup the commanded generation can serve.
    /// Generation may fall short of the command when loads cannot absorb it;
    /// the slack bus balances reactive power.
    fn serve_step(
        &self,
        window: &ForecastWindow,
        k: usize,
        global_step: usize,
        tr: &Tracker,
        cmd: StepCommand,
        clamped: usize,
    ) -> Result<StepOutcome, CmdpError> {
        let net = self.net;
        let h = &net.horizon;
        let n = net.num_buses();
        let mut lp = LpProblem::new();
        let mut p_inj = vec![LinExpr::default(); n];
        let mut q_inj = vec![LinExpr::default(); n];
        let mut rho = Vec::new();
        for (i, &b) in net.load_buses.iter().enumerate() {
            let lo = if global_step > 0 { (tr.pickup[i] - h.epsilon).clamp(0.0, 1.0) } else { 0.0 };
            let v = lp.add_var(format!("rho{b}"), lo, 1.0);
            lp.add_objective(v, net.load(b).priority * window.load_p[i][k]);
            p_inj[b] = LinExpr::var(v, -window.load_p[i][k]);
            q_inj[b] = LinExpr::var(v, -window.load_q[i][k]);
            rho.push(v);
        }
        let mut res_p: Vec<VarId> = Vec::new();
        for (i, &b) in net.res_buses.iter().enumerate() {
            let v = lp.add_var(format!("Pres{b}"), 0.0, cmd.res_p[i]);
            lp.add_objective(v, RENEWABLE_TIE);
            p_inj[b] = LinExpr::var(v, 1.0);
            q_inj[b] = LinExpr::constant(cmd.res_q[i]);
            res_p.push(v);
        }
        let mut mt_p: Vec<VarId> = Vec::new();
        for (i, &b) in net.mt_buses.iter().enumerate() {
            let m = net.mt(b);
            let v = lp.add_var(format!("Pmt{b}"), m.p_min.min(cmd.mt_p[i]), cmd.mt_p[i]);
            lp.add_objective(v, -m.cost_coeff);
            p_inj[b] = LinExpr::var(v, 1.0);
            q_inj[b] = LinExpr::constant(cmd.mt_q[i]);
            mt_p.push(v);
        }
        let mut dis: Vec<VarId> = Vec::new();
        for (i, &b) in net.ess_buses.iter().enumerate() {
            let v = lp.add_var(format!("dis{b}"), 0.0, cmd.dis[i]);
            lp.add_objective(v, -DISCHARGE_TIE);
            p_inj[b] = LinExpr { terms: vec![(v, 1.0)], constant: -cmd.ch[i] };
            q_inj[b] = LinExpr::constant(cmd.ess_q[i]);
            dis.push(v);
        }
        let slack = net.topology.slack;
        let slack_q = lp.add_var("Qslack", f64::NEG_INFINITY, f64::INFINITY);
        q_inj[slack].terms.push((slack_q, 1.0));
        add_network(&mut lp, net, &self.polys, "n", &p_inj, &q_inj);

        let sol = solve_lp(&lp)?;
        let mut out = StepOutcome {
            global_step,
            pickup: vec![0.0; rho.len()],
            res_p: cmd.res_p.clone(),
            mt_p: cmd.mt_p.clone(),
            dis: cmd.dis.clone(),
            slack_q: 0.0,
            flow: FlowState::flat(n, net.num_lines()),
            injections: InjectionSet::zeros(n),
            fallback: sol.status != LpStatus::Optimal,
            clamped,
            command: cmd,
        };
        if !out.fallback {
            let val = |v: &VarId| sol.value(*v);
            out.pickup = rho.iter().map(val).collect();
            out.res_p = res_p.iter().map(val).collect();
            out.mt_p = mt_p.iter().map(val).collect();
            out.dis = dis.iter().map(val).collect();
            out.slack_q = sol.value(slack_q);
        }
        out.injections = self.injections(window, k, &out);
        out.flow = solve_distflow(net, &out.injections)?;
        Ok(out)
    }

    fn injections(&self, window: &ForecastWindow, k: usize, out: &StepOutcome) -> InjectionSet {
        let net = self.net;
        let mut inj = InjectionSet::zeros(net.num_buses());
        for (i, &b) in net.load_buses.iter().enumerate() {
            inj.p[b] = -out.pickup[i] * window.load_p[i][k];
            inj.q[b] = -out.pickup[i] * window.load_q[i][k];
        }
        for (i, &b) in net.res_buses.iter().enumerate() {
            inj.p[b] = out.res_p[i];
            inj.q[b] = out.command.res_q[i];
        }
        for (i, &b) in net.mt_buses.iter().enumerate() {
            inj.p[b] = out.mt_p[i];
            inj.q[b] = out.command.mt_q[i];
        }
        for (i, &b) in net.ess_buses.iter().enumerate() {
            inj.p[b] = out.dis[i] - out.command.ch[i];
            inj.q[b] = out.command.ess_q[i];
        }
        inj.q[net.topology.slack] += out.slack_q;
        inj
    }

    /// Serve every window step in turn; later steps use forecasts and start
    /// from the levels left by the earlier ones.
    pub fn rollout(&self, state: &SystemState, action: &ActionVector) -> Result<Vec<StepOutcome>, CmdpError> {
        self.check(state, action)?;
        let mut tr = Tracker::new(self.net, &state.device);
        let mut outs = Vec::with_capacity(self.layout.steps);
        for k in 0..self.layout.steps {
            let cap: Vec<f64> = state.window.res_p.iter().map(|s| s[k]).collect();
            let (cmd, moved) = self.clip_step(&tr, action, k, &cap);
            let out = self.serve_step(&state.window, k, state.t + k, &tr, cmd, moved)?;
            tr.advance(self.net, &out);
            outs.push(out);
        }
        Ok(outs)
    }

    /// Apply the first step of `action` and move to the next state.
    pub fn transition(&self, state: &SystemState, action: &ActionVector) -> Result<Transition, CmdpError> {
        self.check(state, action)?;
        let mut tr = Tracker::new(self.net, &state.device);
        let cap: Vec<f64> = state.window.res_p.iter().map(|s| s[0]).collect();
        let (cmd, moved) = self.clip_step(&tr, action, 0, &cap);
        let outcome = self.serve_step(&state.window, 0, state.t, &tr, cmd, moved)?;
        tr.advance(self.net, &outcome);
        let next = self.state(state.t + 1, tr.device_state(self.net));
        Ok(Transition { next, outcome })
    }

    pub fn reward(&self, outcomes: &[StepOutcome]) -> f64 {
        let load_p: Vec<Vec<f64>> = outcomes
            .iter()
            .map(|o| self.net.load_buses.iter().map(|&b| o.injections.p[b]).collect())
            .collect();
        let mt_p: Vec<Vec<f64>> = outcomes.iter().map(|o| o.mt_p.clone()).collect();
        reward(self.net, self.gamma, &load_p, &mt_p)
    }

    /// `dR/da` at the served window: microturbine terms directly, load terms
    /// through the total-differential sensitivities at the observed flows.
    pub fn reward_gradient(&self, outcomes: &[StepOutcome]) -> Result<Vec<f64>, CmdpError> {
        let net = self.net;
        let flows: Vec<Option<FlowState>> = outcomes.iter().map(|o| Some(o.flow.clone())).collect();
        let system = build_sensitivity_system(net, &flows)?;
        let sens = power_sensitivity(net, &system)?;
        let mut grad = vec![0.0; self.action_dim()];
        for (j, g) in grad.iter_mut().enumerate() {
            let mut disc = 1.0;
            for k in 0..outcomes.len() {
                let mut s = 0.0;
                for &b in &net.load_buses {
                    s += net.load(b).priority * sens.get(b, k, j);
                }
                for &b in &net.mt_buses {
                    s += net.mt(b).cost_coeff * sens.get(b, k, j);
                }
                *g -= disc * s;
                disc *= self.gamma;
            }
        }
        Ok(grad)
    }

    /// Constraint entries per window step in action-block order: renewables
    /// (P >= 0, P <= forecast, Q upper, Q lower), microturbines (P upper,
    /// P lower, ramp up, ramp down, cumulative fuel, Q upper, Q lower) and
    /// storage (charge >= 0, charge upper, discharge >= 0, discharge upper,
    /// charge * discharge, state of charge upper and lower, Q upper, Q lower).
    pub fn constraints(&self, state: &SystemState, action: &ActionVector) -> Result<ConstraintVector, CmdpError> {
        Ok(ConstraintVector(self.constraint_terms(state, action)?.into_iter().map(|(v, _)| v).collect()))
    }

    /// Constraint values with their sparse gradients with respect to the action.
    pub fn constraint_terms(
        &self,
        state: &SystemState,
        action: &ActionVector,
    ) -> Result<Vec<(f64, Vec<(usize, f64)>)>, CmdpError> {
        self.check(state, action)?;
        let net = self.net;
        let lay = &self.layout;
        let dt = net.horizon.dt;
        let a = |k, s| action.get(lay, k, s);
        let ix = |k, s| lay.index(k, s);
        let mut rows = Vec::with_capacity(self.constraint_dim());
        for k in 0..lay.steps {
            for (i, &b) in net.res_buses.iter().enumerate() {
                let r = net.res(b);
                let (p, q) = (ActionSlot::ResP(i), ActionSlot::ResQ(i));
                rows.push((-a(k, p), vec![(ix(k, p), -1.0)]));
                rows.push((a(k, p) - state.window.res_p[i][k], vec![(ix(k, p), 1.0)]));
                rows.push((a(k, q) - r.q_max, vec![(ix(k, q), 1.0)]));
                rows.push((-a(k, q) - r.q_max, vec![(ix(k, q), -1.0)]));
            }
            for (i, &b) in net.mt_buses.iter().enumerate() {
                let m = net.mt(b);
                let (p, q) = (ActionSlot::MtP(i), ActionSlot::MtQ(i));
                rows.push((a(k, p) - m.p_max, vec![(ix(k, p), 1.0)]));
                rows.push((m.p_min - a(k, p), vec![(ix(k, p), -1.0)]));
                let (prev, mut dprev) = match k {
                    0 => (state.device.mt_power[&b], vec![]),
                    _ => (a(k - 1, p), vec![(ix(k - 1, p), -1.0)]),
                };
                let step = a(k, p) - prev;
                let mut up = vec![(ix(k, p), 1.0)];
                up.append(&mut dprev);
                let down: Vec<(usize, f64)> = up.iter().map(|&(j, c)| (j, -c)).collect();
                rows.push((step - m.ramp_up_max, up));
                rows.push((m.ramp_down_min - step, down));
                let burn: f64 = (0..=k).map(|j| a(j, p)).sum::<f64>() * m.tau * dt;
                rows.push((burn - state.device.fuel[&b], (0..=k).map(|j| (ix(j, p), m.tau * dt)).collect()));
                rows.push((a(k, q) - m.q_max, vec![(ix(k, q), 1.0)]));
                rows.push((-a(k, q) - m.q_max, vec![(ix(k, q), -1.0)]));
            }
            for (i, &b) in net.ess_buses.iter().enumerate() {
                let e = net.ess(b);
                let (c, d, q) = (ActionSlot::Charge(i), ActionSlot::Discharge(i), ActionSlot::EssQ(i));
                rows.push((-a(k, c), vec![(ix(k, c), -1.0)]));
                rows.push((a(k, c) - e.p_ch_max, vec![(ix(k, c), 1.0)]));
                rows.push((-a(k, d), vec![(ix(k, d), -1.0)]));
                rows.push((a(k, d) - e.p_dis_max, vec![(ix(k, d), 1.0)]));
                rows.push((a(k, c) * a(k, d), vec![(ix(k, c), a(k, d)), (ix(k, d), a(k, c))]));
                let mut soc = state.device.soc[&b];
                let mut dsoc = Vec::new();
                for j in 0..=k {
                    soc += e.eta_ch * a(j, c) * dt - a(j, d) * dt / e.eta_dis;
                    dsoc.push((ix(j, c), e.eta_ch * dt));
                    dsoc.push((ix(j, d), -dt / e.eta_dis));
                }
                let neg: Vec<(usize, f64)> = dsoc.iter().map(|&(j, v)| (j, -v)).collect();
                rows.push((soc - e.soc_max, dsoc));
                rows.push((e.soc_min - soc, neg));
                rows.push((a(k, q) - e.q_max, vec![(ix(k, q), 1.0)]));
                rows.push((-a(k, q) - e.q_max, vec![(ix(k, q), -1.0)]));
            }
        }
        Ok(rows)
    }

    /// Policy input: every state field scaled to roughly `[-1, 1]` with
    /// scenario bounds.
    pub fn features(&self, state: &SystemState) -> Vec<f64> {
        let net = self.net;
        let unit = |x: f64, lo: f64, hi: f64| if hi > lo { 2.0 * (x - lo) / (hi - lo) - 1.0 } else { 0.0 };
        let mut f = Vec::with_capacity(self.feature_dim());
        for &b in &net.ess_buses {
            let e = net.ess(b);
            f.push(unit(state.device.soc[&b], e.soc_min, e.soc_max));
        }
        for &b in &net.mt_buses {
            let m = net.mt(b);
            f.push(unit(state.device.fuel[&b], 0.0, m.fuel_init.max(1e-9)));
            f.push(unit(state.device.mt_power[&b], m.p_min, m.p_max));
        }
        for &b in &net.load_buses {
            f.push(unit(state.device.pickup[&b], 0.0, 1.0));
        }
        for (i, &b) in net.load_buses.iter().enumerate() {
            let ld = net.load(b);
            let pmax = ld.p_demand.iter().fold(0.0, |m: f64, &v| m.max(v));
            let qmax = ld.q_demand.iter().fold(0.0, |m: f64, &v| m.max(v.abs()));
            for k in 0..self.layout.steps {
                f.push(unit(state.window.load_p[i][k], 0.0, pmax));
                f.push(unit(state.window.load_q[i][k], 0.0, qmax));
            }
        }
        for (i, &b) in net.res_buses.iter().enumerate() {
            let r = net.res(b);
            for k in 0..self.layout.steps {
                f.push(unit(state.window.res_p[i][k], 0.0, r.forecast_mean + 3.0 * r.forecast_sd));
            }
        }
        f
    }

    pub fn feature_dim(&self) -> usize {
        let n = self.net;
        n.ess_buses.len() + 2 * n.mt_buses.len() + n.load_buses.len()
            + self.layout.steps * (2 * n.load_buses.len() + n.res_buses.len())
    }

    /// Largest power-flow residual of an outcome against its own injections.
    pub fn flow_residual(&self, out: &StepOutcome) -> f64 {
        residual(self.net, &out.flow, &out.injections)
    }
}

/// `R = -sum_k gamma^k (sum_loads xi P_load + sum_mt xi P_mt)`, with load
/// powers negative when served. Rows are window steps, columns buses in
/// scenario order.
pub fn reward(net: &Scenario, gamma: f64, load_p: &[Vec<f64>], mt_p: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut disc = 1.0;
    for (lp, mp) in load_p.iter().zip(mt_p) {
        let loads: f64 = net.load_buses.iter().zip(lp).map(|(&b, &p)| net.load(b).priority * p).sum();
        let mts: f64 = net.mt_buses.iter().zip(mp).map(|(&b, &p)| net.mt(b).cost_coeff * p).sum();
        total -= disc * (loads + mts);
        disc *= gamma;
    }
    total
}
