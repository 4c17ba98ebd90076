//! DistFlow on radial networks: exact backward/forward sweep solution,
//! residual evaluation, and the linear system of total differentials used to
//! obtain load sensitivities with respect to controllable injections.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cmdp::{ActionLayout, ActionSlot};
use crate::netmodel::Scenario;

pub const SWEEP_TOL: f64 = 1e-8;
pub const SWEEP_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("DistFlow sweep did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("voltage collapse at bus index {bus} (v = {v:e})")]
    VoltageCollapse { bus: usize, v: f64 },
    #[error("no flow data for window step {0}")]
    MissingFlow(usize),
    #[error("sensitivity system inconsistent for action {action} (residual {residual:e})")]
    Inconsistent { action: usize, residual: f64 },
    #[error("bus index {0} is not a load bus")]
    NotLoad(usize),
}

/// Nodal injections per bus index (positive = injection). The slack entry is
/// ignored: the slack bus balances the network.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n: usize) -> Self {
        InjectionSet {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }
}

/// A DistFlow operating point. Line quantities are sending-end values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub v: Vec<f64>,
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub l_line: Vec<f64>,
    /// Injection the slack bus must supply to close the balance.
    pub slack_p: f64,
    pub slack_q: f64,
}

impl FlowState {
    pub fn flat(n_bus: usize, n_line: usize) -> Self {
        FlowState {
            v: vec![1.0; n_bus],
            p_line: vec![0.0; n_line],
            q_line: vec![0.0; n_line],
            l_line: vec![0.0; n_line],
            slack_p: 0.0,
            slack_q: 0.0,
        }
    }
}

/// Solve Eqs. 2a-2d by backward/forward sweep from a flat start.
pub fn solve_distflow(net: &Scenario, inj: &InjectionSet) -> Result<FlowState, PowerFlowError> {
    let topo = &net.topology;
    let n = net.num_buses();
    let m = net.num_lines();
    let mut fs = FlowState::flat(n, m);
    let mut last_res = f64::INFINITY;
    for iter in 0..SWEEP_MAX_ITER {
        // backward: aggregate downstream flows, losses from the previous iterate
        for &bus in topo.order.iter().rev() {
            let Some(k) = topo.parent_line[bus] else { continue };
            let line = &net.lines[k];
            let (mut p, mut q) = (-inj.p[bus], -inj.q[bus]);
            for &c in &topo.children[bus] {
                p += fs.p_line[c];
                q += fs.q_line[c];
            }
            fs.p_line[k] = p + line.r * fs.l_line[k];
            fs.q_line[k] = q + line.x * fs.l_line[k];
        }
        for k in 0..m {
            let from = topo.ends[k].0;
            fs.l_line[k] = (fs.p_line[k].powi(2) + fs.q_line[k].powi(2)) / fs.v[from];
        }
        // forward: propagate voltages from the slack bus
        for &bus in &topo.order {
            let Some(k) = topo.parent_line[bus] else { continue };
            let line = &net.lines[k];
            let from = topo.ends[k].0;
            let v = fs.v[from] - 2.0 * (line.r * fs.p_line[k] + line.x * fs.q_line[k])
                + (line.r * line.r + line.x * line.x) * fs.l_line[k];
            if !(v > 0.0) {
                return Err(PowerFlowError::VoltageCollapse { bus, v });
            }
            fs.v[bus] = v;
        }
        let res = residual(net, &fs, inj);
        if res <= 1e-12 || (res <= SWEEP_TOL && res >= last_res * 0.5) {
            finish_slack(net, &mut fs);
            return Ok(fs);
        }
        if !res.is_finite() || iter + 1 == SWEEP_MAX_ITER {
            if res <= SWEEP_TOL {
                finish_slack(net, &mut fs);
                return Ok(fs);
            }
            return Err(PowerFlowError::NonConvergence {
                iterations: iter + 1,
                residual: res,
            });
        }
        last_res = res;
    }
    unreachable!()
}

fn finish_slack(net: &Scenario, fs: &mut FlowState) {
    let s = net.topology.slack;
    fs.slack_p = net.topology.children[s].iter().map(|&k| fs.p_line[k]).sum();
    fs.slack_q = net.topology.children[s].iter().map(|&k| fs.q_line[k]).sum();
}

/// Largest absolute residual of the branch-flow equations. Balance equations are evaluated
/// at every non-slack bus.
pub fn residual(net: &Scenario, flow: &FlowState, inj: &InjectionSet) -> f64 {
    let topo = &net.topology;
    let mut worst: f64 = 0.0;
    for bus in 0..net.num_buses() {
        if bus == topo.slack {
            continue;
        }
        let (mut p, mut q) = (0.0, 0.0);
        for &c in &topo.children[bus] {
            p += flow.p_line[c];
            q += flow.q_line[c];
        }
        if let Some(k) = topo.parent_line[bus] {
            let line = &net.lines[k];
            p -= flow.p_line[k] - line.r * flow.l_line[k];
            q -= flow.q_line[k] - line.x * flow.l_line[k];
        }
        worst = worst.max((inj.p[bus] - p).abs()).max((inj.q[bus] - q).abs());
    }
    for (k, line) in net.lines.iter().enumerate() {
        let (i, j) = topo.ends[k];
        let drop = flow.v[i] - 2.0 * (line.r * flow.p_line[k] + line.x * flow.q_line[k])
            + (line.r * line.r + line.x * line.x) * flow.l_line[k];
        worst = worst.max((flow.v[j] - drop).abs());
        let current = flow.l_line[k] * flow.v[i] - flow.p_line[k].powi(2) - flow.q_line[k].powi(2);
        worst = worst.max(current.abs());
    }
    worst
}

/// Differential variables of the linearized system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffVar {
    LineP { line: usize, step: usize },
    LineQ { line: usize, step: usize },
    LineL { line: usize, step: usize },
    BusP { bus: usize, step: usize },
    BusQ { bus: usize, step: usize },
    BusV { bus: usize, step: usize },
    Charge { ess: usize, step: usize },
    Discharge { ess: usize, step: usize },
    Soc { ess: usize, step: usize },
    Fuel { mt: usize, step: usize },
}

/// Homogeneous linear system of total differentials over a look-ahead window.
#[derive(Debug, Clone)]
pub struct SensitivitySystem {
    pub matrix: DMatrix<f64>,
    pub columns: HashMap<DiffVar, usize>,
    /// Columns pinned to zero because the current state prescribes them
    /// (state of charge and fuel at the first window step).
    pub fixed: Vec<usize>,
    /// Column of every action coordinate, in action-vector order.
    pub action_columns: Vec<usize>,
    /// Slack bus voltage columns, one per step.
    pub slack_voltage: Vec<usize>,
    pub steps: usize,
    load_buses: Vec<usize>,
}

impl SensitivitySystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn col(&self, var: DiffVar) -> usize {
        self.columns[&var]
    }

    /// Columns allowed to move when differentiating with respect to a single
    /// action coordinate: everything except the prescribed columns and all but
    /// one action column.
    pub fn free_columns(&self) -> usize {
        self.matrix.ncols() - self.fixed.len() - (self.action_columns.len() - 1)
    }

    pub fn surplus(&self) -> isize {
        self.free_columns() as isize - self.rows() as isize
    }
}

/// Assemble the total-differential system for a window of `flows.len()` steps.
pub fn build_sensitivity_system(
    net: &Scenario,
    flows: &[Option<FlowState>],
) -> Result<SensitivitySystem, PowerFlowError> {
    let steps = flows.len();
    let flows: Vec<&FlowState> = flows
        .iter()
        .enumerate()
        .map(|(k, f)| f.as_ref().ok_or(PowerFlowError::MissingFlow(k)))
        .collect::<Result<_, _>>()?;
    let n = net.num_buses();
    let m = net.num_lines();
    let topo = &net.topology;
    let dt = net.horizon.dt;

    let mut columns = HashMap::new();
    let mut next = 0usize;
    let mut add = |v: DiffVar, cols: &mut HashMap<DiffVar, usize>| {
        cols.insert(v, next);
        next += 1;
    };
    for step in 0..steps {
        for line in 0..m {
            add(DiffVar::LineP { line, step }, &mut columns);
            add(DiffVar::LineQ { line, step }, &mut columns);
            add(DiffVar::LineL { line, step }, &mut columns);
        }
        for bus in 0..n {
            add(DiffVar::BusP { bus, step }, &mut columns);
            add(DiffVar::BusQ { bus, step }, &mut columns);
            add(DiffVar::BusV { bus, step }, &mut columns);
        }
        for ess in 0..net.ess_buses.len() {
            add(DiffVar::Charge { ess, step }, &mut columns);
            add(DiffVar::Discharge { ess, step }, &mut columns);
        }
        for ess in 0..net.ess_buses.len() {
            add(DiffVar::Soc { ess, step }, &mut columns);
        }
        for mt in 0..net.mt_buses.len() {
            add(DiffVar::Fuel { mt, step }, &mut columns);
        }
    }
    let ncols = next;
    let c = |v: DiffVar| columns[&v];

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for (step, flow) in flows.iter().enumerate() {
        for bus in 0..n {
            let mut rp = vec![(c(DiffVar::BusP { bus, step }), 1.0)];
            let mut rq = vec![(c(DiffVar::BusQ { bus, step }), 1.0)];
            for &k in &topo.children[bus] {
                rp.push((c(DiffVar::LineP { line: k, step }), -1.0));
                rq.push((c(DiffVar::LineQ { line: k, step }), -1.0));
            }
            if let Some(k) = topo.parent_line[bus] {
                let line = &net.lines[k];
                rp.push((c(DiffVar::LineP { line: k, step }), 1.0));
                rp.push((c(DiffVar::LineL { line: k, step }), -line.r));
                rq.push((c(DiffVar::LineQ { line: k, step }), 1.0));
                rq.push((c(DiffVar::LineL { line: k, step }), -line.x));
            }
            rows.push(rp);
            rows.push(rq);
        }
        for (k, line) in net.lines.iter().enumerate() {
            let (i, j) = topo.ends[k];
            rows.push(vec![
                (c(DiffVar::BusV { bus: j, step }), 1.0),
                (c(DiffVar::BusV { bus: i, step }), -1.0),
                (c(DiffVar::LineP { line: k, step }), 2.0 * line.r),
                (c(DiffVar::LineQ { line: k, step }), 2.0 * line.x),
                (c(DiffVar::LineL { line: k, step }), -(line.r * line.r + line.x * line.x)),
            ]);
            // differential of l_ij v_i = P^2 + Q^2
            rows.push(vec![
                (c(DiffVar::LineL { line: k, step }), flow.v[i]),
                (c(DiffVar::BusV { bus: i, step }), flow.l_line[k]),
                (c(DiffVar::LineP { line: k, step }), -2.0 * flow.p_line[k]),
                (c(DiffVar::LineQ { line: k, step }), -2.0 * flow.q_line[k]),
            ]);
        }
        for (e, &bus) in net.ess_buses.iter().enumerate() {
            rows.push(vec![
                (c(DiffVar::BusP { bus, step }), 1.0),
                (c(DiffVar::Discharge { ess: e, step }), -1.0),
                (c(DiffVar::Charge { ess: e, step }), 1.0),
            ]);
        }
    }
    for step in 0..steps.saturating_sub(1) {
        for (e, &bus) in net.ess_buses.iter().enumerate() {
            let p = net.ess(bus);
            rows.push(vec![
                (c(DiffVar::Soc { ess: e, step: step + 1 }), 1.0),
                (c(DiffVar::Soc { ess: e, step }), -1.0),
                (c(DiffVar::Charge { ess: e, step }), -p.eta_ch * dt),
                (c(DiffVar::Discharge { ess: e, step }), dt / p.eta_dis),
            ]);
        }
        for (g, &bus) in net.mt_buses.iter().enumerate() {
            let p = net.mt(bus);
            rows.push(vec![
                (c(DiffVar::Fuel { mt: g, step: step + 1 }), 1.0),
                (c(DiffVar::Fuel { mt: g, step }), -1.0),
                (c(DiffVar::BusP { bus, step }), p.tau),
            ]);
        }
    }
    let mut matrix = DMatrix::zeros(rows.len(), ncols);
    for (r, row) in rows.iter().enumerate() {
        for &(col, v) in row {
            matrix[(r, col)] += v;
        }
    }

    let mut fixed = Vec::new();
    for e in 0..net.ess_buses.len() {
        fixed.push(c(DiffVar::Soc { ess: e, step: 0 }));
    }
    for g in 0..net.mt_buses.len() {
        fixed.push(c(DiffVar::Fuel { mt: g, step: 0 }));
    }
    let layout = ActionLayout::new(net, steps);
    let action_columns = (0..layout.dim())
        .map(|a| {
            let (step, slot) = layout.slot(a);
            c(match slot {
                ActionSlot::ResP(i) => DiffVar::BusP { bus: net.res_buses[i], step },
                ActionSlot::ResQ(i) => DiffVar::BusQ { bus: net.res_buses[i], step },
                ActionSlot::MtP(i) => DiffVar::BusP { bus: net.mt_buses[i], step },
                ActionSlot::MtQ(i) => DiffVar::BusQ { bus: net.mt_buses[i], step },
                ActionSlot::Charge(i) => DiffVar::Charge { ess: i, step },
                ActionSlot::Discharge(i) => DiffVar::Discharge { ess: i, step },
                ActionSlot::EssQ(i) => DiffVar::BusQ { bus: net.ess_buses[i], step },
            })
        })
        .collect();
    let slack_voltage = (0..steps)
        .map(|step| c(DiffVar::BusV { bus: topo.slack, step }))
        .collect();
    Ok(SensitivitySystem {
        matrix,
        columns,
        fixed,
        action_columns,
        slack_voltage,
        steps,
        load_buses: net.load_buses.clone(),
    })
}

/// Bus active-power sensitivities to every action coordinate.
///
/// For each action coordinate the other action differentials are pinned to
/// zero, the coordinate itself to one, and the slack voltage differentials to
/// zero; the remaining underdetermined system is solved in the minimum-norm
/// least-squares sense. Row `step * n_bus + bus` of the result holds
/// `dP_bus,step / da`.
#[derive(Debug, Clone)]
pub struct PowerSensitivity {
    pub n_bus: usize,
    pub values: DMatrix<f64>,
}

impl PowerSensitivity {
    pub fn get(&self, bus: usize, step: usize, action: usize) -> f64 {
        self.values[(step * self.n_bus + bus, action)]
    }
}

pub fn power_sensitivity(
    net: &Scenario,
    system: &SensitivitySystem,
) -> Result<PowerSensitivity, PowerFlowError> {
    let ncols = system.matrix.ncols();
    let mut pinned = vec![false; ncols];
    for &c in system.fixed.iter().chain(&system.action_columns) {
        pinned[c] = true;
    }
    let free: Vec<usize> = (0..ncols).filter(|&c| !pinned[c]).collect();
    let mut pos = vec![usize::MAX; ncols];
    for (i, &c) in free.iter().enumerate() {
        pos[c] = i;
    }
    let nr = system.rows() + system.slack_voltage.len();
    let mut a = DMatrix::zeros(nr, free.len());
    for (j, &c) in free.iter().enumerate() {
        a.column_mut(j)
            .rows_mut(0, system.rows())
            .copy_from(&system.matrix.column(c));
    }
    for (r, &c) in system.slack_voltage.iter().enumerate() {
        a[(system.rows() + r, pos[c])] = 1.0;
    }
    let d = system.action_columns.len();
    let mut rhs = DMatrix::zeros(nr, d);
    for (j, &c) in system.action_columns.iter().enumerate() {
        for r in 0..system.rows() {
            rhs[(r, j)] = -system.matrix[(r, c)];
        }
    }
    let x = min_norm_solve(&a, &rhs);
    let resid = &a * &x - &rhs;
    for j in 0..d {
        let r = resid.column(j).amax();
        if r > 1e-7 {
            return Err(PowerFlowError::Inconsistent { action: j, residual: r });
        }
    }

    let n = net.num_buses();
    let mut values = DMatrix::zeros(n * system.steps, d);
    for step in 0..system.steps {
        for bus in 0..n {
            let col = system.col(DiffVar::BusP { bus, step });
            let row = step * n + bus;
            if pinned[col] {
                // a controllable injection: dP/dP' is 1 for itself, 0 otherwise
                for (j, &ac) in system.action_columns.iter().enumerate() {
                    values[(row, j)] = if ac == col { 1.0 } else { 0.0 };
                }
            } else {
                for j in 0..d {
                    values[(row, j)] = x[(pos[col], j)];
                }
            }
        }
    }
    Ok(PowerSensitivity { n_bus: n, values })
}

/// `dP_load / da` for one load bus, window step and action coordinate.
pub fn partial_load_wrt_action(
    net: &Scenario,
    system: &SensitivitySystem,
    load_bus: usize,
    step: usize,
    action: usize,
) -> Result<f64, PowerFlowError> {
    if !system.load_buses.contains(&load_bus) {
        return Err(PowerFlowError::NotLoad(load_bus));
    }
    Ok(power_sensitivity(net, system)?.get(load_bus, step, action))
}

/// Minimum-norm least-squares solution of `a x = b` for every column of `b`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    // full row rank: x = A^T (A A^T)^{-1} b
    let gram = a * a.transpose();
    let scale = gram.diagonal().amax().max(1e-300);
    if let Some(ch) = gram.clone().cholesky() {
        let l = ch.l();
        let min_piv = l.diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
        if min_piv > 1e-12 * scale {
            return a.transpose() * ch.solve(b);
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let tol = smax * 1e-11 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, tol).expect("svd with u and v")
}

/// Solve a single right-hand side in the minimum-norm sense.
pub fn min_norm_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    min_norm_solve(a, &bm).column(0).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn load_at_one(p: f64, q: f64) -> InjectionSet {
        let mut inj = InjectionSet::zeros(2);
        inj.p[1] = -p;
        inj.q[1] = -q;
        inj
    }

    #[test]
    fn zero_injections_give_flat_profile() {
        let net = synth::chain(4, 0.01, 0.01);
        let fs = solve_distflow(&net, &InjectionSet::zeros(4)).unwrap();
        assert!(fs.v.iter().all(|&v| v == 1.0));
        assert!(fs.p_line.iter().chain(&fs.q_line).chain(&fs.l_line).all(|&x| x == 0.0));
    }

    #[test]
    fn lossless_two_bus() {
        let net = synth::chain(2, 0.0, 0.0);
        let mut inj = InjectionSet::zeros(2);
        inj.p[1] = -0.1;
        let fs = solve_distflow(&net, &inj).unwrap();
        assert!((fs.p_line[0] - 0.1).abs() < 1e-15);
        assert!((fs.v[1] - 1.0).abs() < 1e-15);
        assert!((fs.l_line[0] - 0.01).abs() < 1e-15);
    }

    /// Plain fixed-point iteration on the four scalar equations of a 2-bus
    /// feeder, written independently of the sweep.
    fn two_bus_oracle(r: f64, x: f64, pl: f64, ql: f64) -> (f64, f64, f64, f64) {
        let (mut p, mut q, mut l, mut v) = (0.0, 0.0, 0.0, 1.0);
        for _ in 0..10_000 {
            let np = pl + r * l;
            let nq = ql + x * l;
            let nl = (np * np + nq * nq) / 1.0;
            let nv = 1.0 - 2.0 * (r * np + x * nq) + (r * r + x * x) * nl;
            let delta = (np - p).abs() + (nq - q).abs() + (nl - l).abs() + (nv - v).abs();
            (p, q, l, v) = (np, nq, nl, nv);
            if delta < 1e-14 {
                break;
            }
        }
        (p, q, l, v)
    }

    #[test]
    fn lossy_two_bus_matches_scalar_oracle() {
        let net = synth::chain(2, 0.01, 0.01);
        let mut inj = InjectionSet::zeros(2);
        inj.p[1] = -0.1;
        inj.q[1] = -0.05;
        let fs = solve_distflow(&net, &inj).unwrap();
        let (p, q, l, v) = two_bus_oracle(0.01, 0.01, 0.1, 0.05);
        assert!((fs.p_line[0] - p).abs() < 1e-8);
        assert!((fs.q_line[0] - q).abs() < 1e-8);
        assert!((fs.l_line[0] - l).abs() < 1e-8);
        assert!((fs.v[1] - v).abs() < 1e-8);
        assert!(residual(&net, &fs, &inj) <= 1e-8);
    }

    #[test]
    fn residual_of_flat_state_is_largest_injection() {
        let net = synth::chain(3, 0.01, 0.02);
        let mut inj = InjectionSet::zeros(3);
        inj.p[1] = -0.07;
        inj.q[2] = 0.12;
        let flat = FlowState::flat(3, 2);
        assert!((residual(&net, &flat, &inj) - 0.12).abs() < 1e-15);
    }

    #[test]
    fn perturbed_voltage_shows_in_residual() {
        let net = synth::chain(3, 0.01, 0.02);
        let mut inj = InjectionSet::zeros(3);
        inj.p[2] = -0.2;
        let mut fs = solve_distflow(&net, &inj).unwrap();
        fs.v[1] += 1e-3;
        let l = fs.l_line[0];
        assert!(residual(&net, &fs, &inj) >= 1e-3 * l.min(1.0));
        assert!(residual(&net, &fs, &inj) >= 0.999e-3);
    }

    #[test]
    fn heavy_load_collapses_voltage() {
        let net = synth::chain(2, 0.5, 0.5);
        let mut inj = InjectionSet::zeros(2);
        inj.p[1] = -5.0;
        assert!(solve_distflow(&net, &inj).is_err());
    }

    #[test]
    fn two_bus_counts_follow_enumeration() {
        // slack carries the microturbine, bus 1 is the only load
        let net = synth::chain(2, 0.01, 0.01);
        let fs = solve_distflow(&net, &load_at_one(0.1, 0.05)).unwrap();
        let sys = build_sensitivity_system(&net, &[Some(fs)]).unwrap();
        // rows: 2|N| + 2|E| + |ESS| ; columns: 3|E| + 3|N| + 2|ESS| + |ESS| + |MT|
        assert_eq!(sys.rows(), 2 * 2 + 2);
        assert_eq!(sys.matrix.ncols(), 3 + 6 + 1);
        assert_eq!(sys.surplus(), 1 * (2 * 1 - 1) + 1);
    }

    #[test]
    fn missing_window_flow_is_an_error() {
        let net = synth::chain(2, 0.01, 0.01);
        let fs = solve_distflow(&net, &load_at_one(0.1, 0.05)).unwrap();
        let err = build_sensitivity_system(&net, &[Some(fs), None]).unwrap_err();
        assert_eq!(err, PowerFlowError::MissingFlow(1));
    }

    #[test]
    fn lossless_generation_is_absorbed_by_the_load() {
        let net = synth::chain(2, 0.0, 0.0);
        let fs = solve_distflow(&net, &load_at_one(0.1, 0.0)).unwrap();
        let sys = build_sensitivity_system(&net, &[Some(fs)]).unwrap();
        let layout = ActionLayout::new(&net, 1);
        let a = layout.index(0, ActionSlot::MtP(0));
        let d = partial_load_wrt_action(&net, &sys, 1, 0, a).unwrap();
        assert!((d + 1.0).abs() < 1e-10, "{d}");
        // the trivial branch: an MT power with respect to itself
        let s = power_sensitivity(&net, &sys).unwrap();
        assert_eq!(s.get(0, 0, a), 1.0);
        assert_eq!(s.get(0, 0, layout.index(0, ActionSlot::MtQ(0))), 0.0);
        assert!(partial_load_wrt_action(&net, &sys, 0, 0, a).is_err());
    }

    #[test]
    fn homogeneous_system_admits_zero() {
        let net = synth::chain(2, 0.01, 0.01);
        let fs = solve_distflow(&net, &load_at_one(0.1, 0.05)).unwrap();
        let sys = build_sensitivity_system(&net, &[Some(fs)]).unwrap();
        let z = DVector::zeros(sys.matrix.ncols());
        assert_eq!((&sys.matrix * z).amax(), 0.0);
    }

    #[test]
    fn twelve_bus_three_step_surplus() {
        let net = crate::netmodel::parse_scenario(crate::netmodel::CASE12DA).unwrap();
        let fs = FlowState::flat(12, 11);
        let sys = build_sensitivity_system(&net, &[Some(fs.clone()), Some(fs.clone()), Some(fs)]).unwrap();
        assert_eq!(sys.surplus(), 52);
    }
}
