//! Constrained policy optimization: Monte Carlo estimates of the local
//! trust-region subproblem, its dual solution, and the episodic trainer.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cmdp::{ActionSlot, ActionVector, CmdpError, Environment, StepOutcome, SystemState};
use crate::netmodel::{DeviceParams, ForecastSet, Scenario};
use crate::policy::{evaluate, sample_from, PolicyError, PolicyEval, PolicyParams, PolicySpec};

const FEASIBILITY_TOL: f64 = 1e-10;
const QP_ITERATIONS: usize = 500;
const LEVEL_ITERATIONS: usize = 200;
const CG_MAX_ITER: usize = 400;
const CG_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CpoError {
    #[error(transparent)]
    Env(#[from] CmdpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dual iteration did not converge after {iterations} iterations (projected gradient {change:.3e})")]
    DualNonConvergence { iterations: usize, change: f64 },
    #[error("subproblem data is not finite")]
    NonFinite,
    #[error("cannot write checkpoint: {0}")]
    Io(#[from] std::io::Error),
}

/// Curvature of the trust region: products and solves with `F`.
pub trait Curvature {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn solve(&self, v: &DVector<f64>) -> DVector<f64>;
}

/// Explicit positive definite matrix, solved through its Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCurvature {
    pub matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseCurvature {
    /// # Panics
    /// If the matrix is not positive definite.
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let chol = Cholesky::new(matrix.clone()).expect("curvature must be positive definite");
        DenseCurvature { matrix, chol }
    }
}

impl Curvature for DenseCurvature {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }
}

/// Damped policy Fisher matrix, applied matrix-free and inverted by
/// conjugate gradients.
pub struct FisherCurvature<'a> {
    pub eval: PolicyEval<'a>,
}

impl Curvature for FisherCurvature<'_> {
    fn dim(&self) -> usize {
        self.eval.param_len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eval.fvp(v)
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        conjugate_gradient(|x| self.eval.fvp(x), v)
    }
}

fn conjugate_gradient(op: impl Fn(&DVector<f64>) -> DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let stop = rr * CG_REL_TOL * CG_REL_TOL;
    for _ in 0..CG_MAX_ITER {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = op(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    x
}

/// Local subproblem `max a'x s.t. B'x + c <= 0, x'Fx <= delta`.
pub struct QcqpData<F: Curvature> {
    pub a: DVector<f64>,
    /// One column per constraint.
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub f: F,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Unconstrained natural-gradient step.
    Natural,
    /// Dual solution with some linear rows active.
    Constrained,
    /// No point of the trust region satisfies the linear rows; the step only
    /// reduces the most violated one.
    Recovery,
}

#[derive(Debug, Clone)]
pub struct QcqpStep {
    pub step: DVector<f64>,
    pub kind: StepKind,
    /// Certified upper bounds on the optimal objective, in the order found.
    pub dual_history: Vec<f64>,
    pub multipliers: Vec<(usize, f64)>,
    /// `step' F step`.
    pub curvature: f64,
    /// Largest entry of `B' step + c`.
    pub max_row: f64,
}

/// Scale `x` back into the trust region if rounding left it outside.
fn into_region<F: Curvature>(f: &F, x: DVector<f64>, delta: f64) -> (DVector<f64>, f64) {
    let q = x.dot(&f.apply(&x));
    if q > delta && q > 0.0 {
        let s = (delta / q).sqrt();
        (x * s, delta)
    } else {
        (x, q)
    }
}

/// Maximize `c'nu - nu'S nu / 2` over `nu >= 0` by projected Newton; `None`
/// when it is unbounded, that is when `B' x + c <= 0` has no solution.
fn nonneg_qp(s: &DMatrix<f64>, c: &DVector<f64>) -> Result<Option<DVector<f64>>, CpoError> {
    let k = c.len();
    let scale = s.diagonal().amax().max(1e-300);
    let mut nu = DVector::zeros(k);
    let mut change = f64::INFINITY;
    for _ in 0..QP_ITERATIONS {
        // gradient of the minimized form nu'S nu / 2 - c'nu
        let grad = s * &nu - c;
        let tol = 1e-13 * (c.amax() + (s * &nu).amax()) + 1e-300;
        change = (0..k).map(|j| if nu[j] > 0.0 { grad[j].abs() } else { (-grad[j]).max(0.0) }).fold(0.0, f64::max);
        if change <= tol {
            return Ok(Some(nu));
        }
        if !nu.iter().all(|v| v.is_finite()) || nu.amax() > 1e12 {
            return Ok(None);
        }
        // bounds that are nearly active with an outward gradient stay fixed
        let eps = (0..k).map(|j| (nu[j] - (nu[j] - grad[j]).max(0.0)).abs()).fold(0.0, f64::max).min(1e-3);
        let free: Vec<usize> = (0..k).filter(|&j| nu[j] > eps || grad[j] < 0.0).collect();
        let n = free.len();
        let sf = DMatrix::from_fn(n, n, |i, l| s[(free[i], free[l])]);
        let gf = DVector::from_fn(n, |i, _| grad[free[i]]);
        let mut ridge = 1e-13 * scale;
        let step = loop {
            if let Some(ch) = (&sf + DMatrix::identity(n, n) * ridge).cholesky() {
                break -ch.solve(&gf);
            }
            ridge *= 100.0;
        };
        let mut dir = -&grad / scale;
        for (i, &j) in free.iter().enumerate() {
            dir[j] = step[i];
        }
        // a nonnegative direction of zero curvature and positive gain
        // certifies that the rows have no common solution
        let norm = dir.norm();
        if norm > 0.0 && dir.iter().all(|&v| v >= 0.0) {
            let unit = &dir / norm;
            if c.dot(&unit) > 0.0 && (s * &unit).amax() <= 1e-9 * scale {
                return Ok(None);
            }
        }
        // exact minimizer along the projected path, found by halving
        let value = |v: &DVector<f64>| 0.5 * v.dot(&(s * v)) - c.dot(v);
        let before = value(&nu);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            let trial = (&nu + &dir * alpha).map(|v| v.max(0.0));
            let d = &trial - &nu;
            if value(&trial) <= before + 1e-4 * grad.dot(&d) || (grad.dot(&d) < 0.0 && (s * &trial - c).dot(&d) <= 0.0) {
                nu = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            return Ok(Some(nu));
        }
    }
    if change.is_finite() {
        // callers check the primal residual of the returned point
        Ok(Some(nu))
    } else {
        Err(CpoError::DualNonConvergence { iterations: QP_ITERATIONS, change })
    }
}

/// Largest row residual `c - S nu` of the primal point of a QP solution.
fn residual(s: &DMatrix<f64>, c: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    (c - s * nu).max()
}

/// Least curvature `x'F x` of a point with `B' x + c <= 0` and `a'x >= t`, for
/// the active rows. `s`, `sa`, `r` are `B'F^-1 B`, `B'F^-1 a`, `a'F^-1 a`.
/// Returns the curvature and the weights `(nu, mu)` of `x = F^-1 (mu a - B nu)`.
struct LevelSet<'a> {
    s: &'a DMatrix<f64>,
    sa: &'a DVector<f64>,
    c: &'a DVector<f64>,
    r: f64,
}

impl LevelSet<'_> {
    fn solve(&self, t: f64) -> Result<Option<(f64, DVector<f64>)>, CpoError> {
        let k = self.c.len();
        let g = DMatrix::from_fn(k + 1, k + 1, |i, l| match (i < k, l < k) {
            (true, true) => self.s[(i, l)],
            (true, false) => -self.sa[i],
            (false, true) => -self.sa[l],
            (false, false) => self.r,
        });
        let g = (&g + g.transpose()) * 0.5;
        let rhs = DVector::from_fn(k + 1, |i, _| if i < k { self.c[i] } else { t });
        Ok(nonneg_qp(&g, &rhs)?.filter(|nu| residual(&g, &rhs, nu) <= FEASIBILITY_TOL).map(|nu| {
            let curvature = (2.0 * (rhs.dot(&nu) - 0.5 * nu.dot(&(&g * &nu)))).max(0.0);
            (curvature, nu)
        }))
    }
}

/// Solve the trust-region subproblem. With active rows, the optimum is the
/// largest level `t` whose least-curvature point fits in the region; `t` is
/// bracketed by the feasibility point and the natural step.
pub fn solve_qcqp<F: Curvature>(q: &QcqpData<F>) -> Result<QcqpStep, CpoError> {
    let delta = q.delta;
    let m = q.c.len();
    if !(q.a.iter().chain(q.b.iter()).chain(q.c.iter()).all(|v| v.is_finite()) && delta.is_finite()) {
        return Err(CpoError::NonFinite);
    }
    let finish = |x: DVector<f64>, kind, dual_history, multipliers| {
        let (x, curvature) = into_region(&q.f, x, delta);
        let max_row = (0..m).map(|j| q.b.column(j).dot(&x) + q.c[j]).fold(f64::NEG_INFINITY, f64::max);
        QcqpStep { step: x, kind, dual_history, multipliers, curvature, max_row }
    };
    let fa = q.f.solve(&q.a);
    let r = q.a.dot(&fa).max(0.0);
    let x0 = if r > 0.0 && delta > 0.0 { &fa * (delta / r).sqrt() } else { DVector::zeros(q.a.len()) };
    let row = |j: usize, x: &DVector<f64>| q.b.column(j).dot(x) + q.c[j];
    let mut active: Vec<usize> = (0..m).filter(|&j| row(j, &x0) > FEASIBILITY_TOL).collect();
    if active.is_empty() {
        return Ok(finish(x0, StepKind::Natural, vec![], vec![]));
    }
    let mut fb: Vec<Option<DVector<f64>>> = vec![None; m];
    loop {
        for &j in &active {
            if fb[j].is_none() {
                fb[j] = Some(q.f.solve(&q.b.column(j).into_owned()));
            }
        }
        let k = active.len();
        let fbs: Vec<&DVector<f64>> = active.iter().map(|&j| fb[j].as_ref().expect("solved above")).collect();
        let s = DMatrix::from_fn(k, k, |i, l| q.b.column(active[i]).dot(fbs[l]));
        let s = (&s + s.transpose()) * 0.5;
        let sa = DVector::from_fn(k, |i, _| q.b.column(active[i]).dot(&fa));
        let c = DVector::from_fn(k, |i, _| q.c[active[i]]);
        let point = |w: &DVector<f64>| {
            let mut x = &fa * w[k];
            for i in 0..k {
                if w[i] != 0.0 {
                    x.axpy(-w[i], fbs[i], 1.0);
                }
            }
            x
        };

        // smallest trust-region curvature needed to satisfy the active rows
        let feas = match nonneg_qp(&s, &c)? {
            Some(nu) if residual(&s, &c, &nu) <= FEASIBILITY_TOL => nu,
            _ => return Ok(recovery(q, &fb, &active, &finish)),
        };
        let need = 2.0 * (c.dot(&feas) - 0.5 * feas.dot(&(&s * &feas)));
        if need > delta * (1.0 + 1e-9) + 1e-15 {
            return Ok(recovery(q, &fb, &active, &finish));
        }
        let level = LevelSet { s: &s, sa: &sa, c: &c, r };
        let mut weights = feas.clone().insert_row(k, 0.0);
        let mut lo = -sa.dot(&feas);
        let mut hi = (r * delta).sqrt();
        let mut history = vec![hi];
        let (mut f_lo, mut f_hi) = (need - delta, 0.0);
        let width = 1e-13 * (hi.abs() + lo.abs() + 1e-300);
        for _ in 0..LEVEL_ITERATIONS {
            if hi - lo <= width {
                break;
            }
            // regula falsi on curvature - delta, falling back to bisection
            let secant = if f_hi > 0.0 { lo - f_lo * (hi - lo) / (f_hi - f_lo) } else { f64::NAN };
            let mid = 0.5 * (lo + hi);
            let t = if secant.is_finite() && secant > lo + 0.01 * (hi - lo) && secant < hi - 0.01 * (hi - lo) {
                secant
            } else {
                mid
            };
            match level.solve(t)? {
                Some((curv, w)) if curv <= delta => {
                    lo = t;
                    f_lo = curv - delta;
                    weights = w;
                }
                other => {
                    hi = t;
                    f_hi = other.map_or(f64::INFINITY, |(curv, _)| curv - delta);
                    if !f_hi.is_finite() {
                        f_hi = 0.0;
                    }
                    history.push(hi);
                }
            }
        }
        let x = point(&weights);
        let extra: Vec<usize> = (0..m).filter(|j| !active.contains(j) && row(*j, &x) > FEASIBILITY_TOL).collect();
        if extra.is_empty() {
            let mu = weights[k];
            let mult = if mu > 0.0 {
                active.iter().zip(weights.iter()).filter(|(_, &v)| v > 0.0).map(|(&j, &v)| (j, v / mu)).collect()
            } else {
                vec![]
            };
            return Ok(finish(x, StepKind::Constrained, history, mult));
        }
        active.extend(extra);
    }
}

fn recovery<F: Curvature>(
    q: &QcqpData<F>,
    fb: &[Option<DVector<f64>>],
    active: &[usize],
    finish: &impl Fn(DVector<f64>, StepKind, Vec<f64>, Vec<(usize, f64)>) -> QcqpStep,
) -> QcqpStep {
    let worst = active
        .iter()
        .copied()
        .max_by(|&i, &j| q.c[i].total_cmp(&q.c[j]))
        .expect("recovery needs an active row");
    let fbj = fb[worst].clone().unwrap_or_else(|| q.f.solve(&q.b.column(worst).into_owned()));
    let bb = q.b.column(worst).dot(&fbj);
    let x = if bb > 0.0 { fbj * -(q.delta / bb).sqrt() } else { DVector::zeros(q.a.len()) };
    finish(x, StepKind::Recovery, vec![], vec![])
}

/// Monte Carlo subproblem at `state` with `n_samples` reparametrized draws,
/// taken as antithetic pairs.
pub struct Estimate<'a> {
    pub data: QcqpData<FisherCurvature<'a>>,
    pub mean_reward: f64,
}

pub fn estimate_qcqp<'p, R: Rng + ?Sized>(
    env: &Environment,
    params: &'p PolicyParams,
    state: &SystemState,
    n_samples: usize,
    delta: f64,
    rng: &mut R,
) -> Result<Estimate<'p>, CpoError> {
    assert!(n_samples >= 1, "at least one sample");
    let x = env.features(state);
    let ev = evaluate(params, &x)?;
    let d = env.action_dim();
    let m = env.constraint_dim();
    let mut cot_mu_r = vec![0.0; d];
    let mut cot_l_r = DMatrix::zeros(d, d);
    let mut cot_mu_c = vec![vec![0.0; d]; m];
    let mut cot_l_c = vec![DMatrix::<f64>::zeros(d, d); m];
    let mut c = DVector::zeros(m);
    let mut mean_reward = 0.0;
    let w = 1.0 / n_samples as f64;
    let mut eps: Vec<f64> = vec![0.0; d];
    for s in 0..n_samples {
        // antithetic pairs: linear constraints average to their value at the mean
        if s % 2 == 0 {
            eps = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        } else {
            eps.iter_mut().for_each(|e| *e = -*e);
        }
        let a = ActionVector(sample_from(&ev.out, &eps).as_slice().to_vec());
        let outs = env.rollout(state, &a)?;
        mean_reward += w * env.reward(&outs);
        let gr = env.reward_gradient(&outs)?;
        for i in 0..d {
            cot_mu_r[i] += w * gr[i];
            for j in 0..=i {
                cot_l_r[(i, j)] += w * gr[i] * eps[j];
            }
        }
        for (row, (val, grad)) in env.constraint_terms(state, &a)?.into_iter().enumerate() {
            c[row] += w * val;
            for (i, gi) in grad {
                cot_mu_c[row][i] += w * gi;
                for j in 0..=i {
                    cot_l_c[row][(i, j)] += w * gi * eps[j];
                }
            }
        }
    }
    let a_vec = ev.vjp(&cot_mu_r, &cot_l_r);
    let mut b = DMatrix::zeros(params.len(), m);
    for row in 0..m {
        b.column_mut(row).copy_from(&ev.vjp(&cot_mu_c[row], &cot_l_c[row]));
    }
    Ok(Estimate { data: QcqpData { a: a_vec, b, c, f: FisherCurvature { eval: ev }, delta }, mean_reward })
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: usize,
    pub n_samples: usize,
    pub delta: f64,
    pub gamma: f64,
    pub mean_hidden: Vec<usize>,
    pub factor_hidden: Vec<usize>,
    /// Relative spread of the per-episode initial state of charge and fuel.
    pub perturbation: f64,
    /// Write a checkpoint to `dir/policy_epNNNN.json` every `k` episodes.
    pub checkpoint_every: Option<(usize, PathBuf)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 200,
            n_samples: 40,
            delta: 0.1,
            gamma: 0.9,
            mean_hidden: vec![10, 10],
            factor_hidden: vec![20, 20],
            perturbation: 0.05,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Sum over the episode of the window reward of the applied action.
    pub episode_rewards: Vec<f64>,
    /// Norm of the positive part of the estimated constraint values, one per update.
    pub violation_norms: Vec<f64>,
    pub recovery_steps: usize,
    pub failed_updates: Vec<String>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,reward\n");
        for (i, r) in self.episode_rewards.iter().enumerate() {
            writeln!(s, "{},{}", i + 1, r).expect("string write");
        }
        s
    }
}

/// Initial exploration spread: 5% of every action coordinate's range.
pub fn initial_sigma(env: &Environment) -> Vec<f64> {
    let net = env.net;
    (0..env.action_dim())
        .map(|j| {
            let range = match env.layout.slot(j).1 {
                ActionSlot::ResP(i) => {
                    let r = net.res(net.res_buses[i]);
                    r.forecast_mean + 3.0 * r.forecast_sd
                }
                ActionSlot::ResQ(i) => 2.0 * net.res(net.res_buses[i]).q_max,
                ActionSlot::MtP(i) => {
                    let m = net.mt(net.mt_buses[i]);
                    m.p_max - m.p_min
                }
                ActionSlot::MtQ(i) => 2.0 * net.mt(net.mt_buses[i]).q_max,
                ActionSlot::Charge(i) => net.ess(net.ess_buses[i]).p_ch_max,
                ActionSlot::Discharge(i) => net.ess(net.ess_buses[i]).p_dis_max,
                ActionSlot::EssQ(i) => 2.0 * net.ess(net.ess_buses[i]).q_max,
            };
            (0.05 * range).max(1e-4)
        })
        .collect()
}

/// Interior starting action: half the expected renewable output, half the
/// first-step microturbine headroom, half the discharge limit, no charging
/// and no reactive output.
pub fn nominal_action(env: &Environment) -> Vec<f64> {
    let net = env.net;
    (0..env.action_dim())
        .map(|j| match env.layout.slot(j).1 {
            ActionSlot::ResP(i) => 0.5 * net.res(net.res_buses[i]).forecast_mean,
            ActionSlot::MtP(i) => {
                let m = net.mt(net.mt_buses[i]);
                m.p_min + 0.5 * (m.p_max - m.p_min).min(m.ramp_up_max.max(0.0))
            }
            ActionSlot::Discharge(i) => 0.5 * net.ess(net.ess_buses[i]).p_dis_max,
            _ => 0.0,
        })
        .collect()
}

pub fn policy_spec(env: &Environment, config: &TrainConfig) -> PolicySpec {
    PolicySpec::new(env.feature_dim(), env.action_dim(), config.mean_hidden.clone(), config.factor_hidden.clone())
}

/// Fresh policy for `net` with the configured layer sizes.
pub fn initial_policy<R: Rng + ?Sized>(net: &Scenario, config: &TrainConfig, rng: &mut R) -> PolicyParams {
    let env = Environment::new(net, ForecastSet { res: vec![vec![]; net.res_buses.len()] }, config.gamma);
    PolicyParams::init(policy_spec(&env, config), &nominal_action(&env), &initial_sigma(&env), rng)
}

/// Copy of `net` with initial state of charge and fuel scaled by independent
/// uniform factors in `1 +- spread`.
pub fn perturb_initial<R: Rng + ?Sized>(net: &Scenario, spread: f64, rng: &mut R) -> Scenario {
    let mut out = net.clone();
    if spread <= 0.0 {
        return out;
    }
    for b in net.ess_buses.iter().chain(&net.mt_buses).copied() {
        let f = 1.0 + rng.gen_range(-spread..=spread);
        match out.device_mut(b) {
            DeviceParams::Storage(e) => e.soc_init = (e.soc_init * f).clamp(e.soc_min, e.soc_max),
            DeviceParams::Microturbine(m) => m.fuel_init *= f,
            _ => {}
        }
    }
    out
}

/// One environment step under `params`: action `L eps + mu`, or `mu` when
/// `explore` is off.
pub fn act<R: Rng + ?Sized>(
    env: &Environment,
    params: &PolicyParams,
    state: &SystemState,
    explore: bool,
    rng: &mut R,
) -> Result<ActionVector, CpoError> {
    let out = evaluate(params, &env.features(state))?.out;
    let eps: Vec<f64> = (0..env.action_dim())
        .map(|_| if explore { rng.sample(StandardNormal) } else { 0.0 })
        .collect();
    Ok(ActionVector(sample_from(&out, &eps).as_slice().to_vec()))
}

/// States, actions and served steps of one episode.
#[derive(Debug, Clone)]
pub struct Episode {
    /// `states[t]` precedes step `t`; the last entry follows the final step.
    pub states: Vec<SystemState>,
    pub actions: Vec<ActionVector>,
    pub outcomes: Vec<StepOutcome>,
    /// Window reward of every applied action.
    pub rewards: Vec<f64>,
}

/// Run `params` over the whole horizon.
pub fn run_episode<R: Rng + ?Sized>(
    env: &Environment,
    params: &PolicyParams,
    explore: bool,
    rng: &mut R,
) -> Result<Episode, CpoError> {
    let mut ep = Episode { states: vec![], actions: vec![], outcomes: vec![], rewards: vec![] };
    let mut state = env.initial_state();
    for _ in 0..env.net.horizon.steps {
        let a = act(env, params, &state, explore, rng)?;
        ep.rewards.push(env.reward(&env.rollout(&state, &a)?));
        let tr = env.transition(&state, &a)?;
        ep.states.push(state);
        ep.actions.push(a);
        ep.outcomes.push(tr.outcome);
        state = tr.next;
    }
    ep.states.push(state);
    Ok(ep)
}

/// Train a policy from `init`, one subproblem per visited state.
pub fn train_from<R: Rng + ?Sized>(
    net: &Scenario,
    init: PolicyParams,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(PolicyParams, TrainReport), CpoError> {
    let started = Instant::now();
    let mut params = init;
    let mut report = TrainReport::default();
    for episode in 0..config.episodes {
        let scen = perturb_initial(net, config.perturbation, rng);
        let forecasts = ForecastSet::sample(&scen, rng);
        let env = Environment::new(&scen, forecasts, config.gamma);
        let mut state = env.initial_state();
        let mut total = 0.0;
        for t in 0..scen.horizon.steps {
            let action = act(&env, &params, &state, true, rng)?;
            let update = estimate_qcqp(&env, &params, &state, config.n_samples, config.delta, rng)
                .and_then(|est| {
                    let viol = est.data.c.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                    let step = solve_qcqp(&est.data)?;
                    Ok((viol, step))
                });
            match update {
                Ok((viol, step)) => {
                    report.violation_norms.push(viol);
                    if step.kind == StepKind::Recovery {
                        report.recovery_steps += 1;
                    }
                    params = params.with_flat(&(params.flat() + &step.step))?;
                }
                Err(e) => report.failed_updates.push(format!("episode {} step {}: {e}", episode + 1, t)),
            }
            total += env.reward(&env.rollout(&state, &action)?);
            state = env.transition(&state, &action)?.next;
        }
        report.episode_rewards.push(total);
        if let Some((every, dir)) = &config.checkpoint_every {
            if *every > 0 && (episode + 1) % every == 0 {
                params.save(dir.join(format!("policy_ep{:04}.json", episode + 1)))?;
            }
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

pub fn train<R: Rng + ?Sized>(
    net: &Scenario,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(PolicyParams, TrainReport), CpoError> {
    let init = initial_policy(net, config, rng);
    train_from(net, init, config, rng)
}
