//! Gaussian policy with a mean network and a Cholesky-factor network.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::ActionVector;

pub const DIAG_FLOOR: f64 = 1e-6;
pub const FIM_DAMPING: f64 = 1e-8;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("state vector has {got} entries, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, network expects {expected}")]
    ParamDim { expected: usize, got: usize },
    #[error("factor network must have d(d+1)/2 = {expected} outputs, has {got}")]
    FactorDim { expected: usize, got: usize },
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnnSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl FnnSpec {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * (p[0] + 1)).sum()
    }
}

/// Per-layer activations kept for derivative passes.
#[derive(Debug, Clone)]
struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input layer")
    }
}

/// Parameters are stored layer by layer: row-major weights, then biases.
fn fnn_forward(spec: &FnnSpec, theta: &[f64], x: &[f64]) -> Trace {
    let w = spec.widths();
    let nl = w.len() - 1;
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    for l in 0..nl {
        let (fin, fout) = (w[l], w[l + 1]);
        let (weights, bias) = (&theta[off..off + fin * fout], &theta[off + fin * fout..off + fin * fout + fout]);
        let prev = &acts[l];
        let mut z: Vec<f64> = (0..fout)
            .map(|o| bias[o] + weights[o * fin..(o + 1) * fin].iter().zip(prev).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        if l + 1 < nl {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
        off += fout * (fin + 1);
    }
    Trace { acts }
}

/// Reverse pass: gradient of `cot . output` with respect to the parameters,
/// accumulated into `grad`.
fn fnn_vjp(spec: &FnnSpec, theta: &[f64], tr: &Trace, cot: &[f64], grad: &mut [f64]) {
    let w = spec.widths();
    let nl = w.len() - 1;
    let mut offs = Vec::with_capacity(nl);
    let mut off = 0;
    for l in 0..nl {
        offs.push(off);
        off += w[l + 1] * (w[l] + 1);
    }
    let mut delta = cot.to_vec();
    for l in (0..nl).rev() {
        let (fin, fout) = (w[l], w[l + 1]);
        let o = offs[l];
        if l + 1 < nl {
            for (d, h) in delta.iter_mut().zip(&tr.acts[l + 1]) {
                *d *= 1.0 - h * h;
            }
        }
        let prev = &tr.acts[l];
        for r in 0..fout {
            let dr = delta[r];
            if dr != 0.0 {
                let row = &mut grad[o + r * fin..o + (r + 1) * fin];
                for (g, p) in row.iter_mut().zip(prev) {
                    *g += dr * p;
                }
            }
            grad[o + fin * fout + r] += dr;
        }
        if l > 0 {
            let weights = &theta[o..o + fin * fout];
            let mut next = vec![0.0; fin];
            for r in 0..fout {
                let dr = delta[r];
                if dr != 0.0 {
                    for (n, wv) in next.iter_mut().zip(&weights[r * fin..(r + 1) * fin]) {
                        *n += dr * wv;
                    }
                }
            }
            delta = next;
        }
    }
}

/// Forward-mode pass: output tangent for a parameter tangent.
fn fnn_jvp(spec: &FnnSpec, theta: &[f64], tr: &Trace, dtheta: &[f64]) -> Vec<f64> {
    let w = spec.widths();
    let nl = w.len() - 1;
    let mut dh = vec![0.0; w[0]];
    let mut off = 0;
    for l in 0..nl {
        let (fin, fout) = (w[l], w[l + 1]);
        let weights = &theta[off..off + fin * fout];
        let dweights = &dtheta[off..off + fin * fout];
        let dbias = &dtheta[off + fin * fout..off + fin * fout + fout];
        let prev = &tr.acts[l];
        let mut dz: Vec<f64> = (0..fout)
            .map(|r| {
                let wr = &weights[r * fin..(r + 1) * fin];
                let dwr = &dweights[r * fin..(r + 1) * fin];
                dbias[r]
                    + (0..fin).map(|c| dwr[c] * prev[c] + wr[c] * dh[c]).sum::<f64>()
            })
            .collect();
        if l + 1 < nl {
            for (d, h) in dz.iter_mut().zip(&tr.acts[l + 1]) {
                *d *= 1.0 - h * h;
            }
        }
        dh = dz;
        off += fout * (fin + 1);
    }
    dh
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 { y } else { y.exp_m1().ln() }
}

/// Row-wise lower-triangle position of factor output `k`.
fn tri_index(k: usize) -> (usize, usize) {
    let mut i = 0;
    while (i + 1) * (i + 2) / 2 <= k {
        i += 1;
    }
    (i, k - i * (i + 1) / 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub action_dim: usize,
    pub mean: FnnSpec,
    pub factor: FnnSpec,
}

impl PolicySpec {
    /// Mean and factor networks over `input` state features.
    pub fn new(input: usize, action_dim: usize, mean_hidden: Vec<usize>, factor_hidden: Vec<usize>) -> Self {
        PolicySpec {
            action_dim,
            mean: FnnSpec { input, hidden: mean_hidden, output: action_dim },
            factor: FnnSpec { input, hidden: factor_hidden, output: action_dim * (action_dim + 1) / 2 },
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let d = self.action_dim;
        if self.mean.output != d {
            return Err(PolicyError::ParamDim { expected: d, got: self.mean.output });
        }
        if self.factor.output != d * (d + 1) / 2 {
            return Err(PolicyError::FactorDim { expected: d * (d + 1) / 2, got: self.factor.output });
        }
        if self.mean.input != self.factor.input {
            return Err(PolicyError::InputDim { expected: self.mean.input, got: self.factor.input });
        }
        Ok(())
    }
}

/// Flat network weights; `theta = (theta_mu, theta_sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub spec: PolicySpec,
    pub theta_mu: Vec<f64>,
    pub theta_sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    params: PolicyParams,
}

impl PolicyParams {
    pub fn zeros(spec: PolicySpec) -> Self {
        let (a, b) = (spec.mean.param_count(), spec.factor.param_count());
        PolicyParams { spec, theta_mu: vec![0.0; a], theta_sigma: vec![0.0; b] }
    }

    /// Uniform weights in `+-1/sqrt(fan_in)`; the output layers are shrunk so
    /// the initial mean is close to `mu0` and the initial factor is close to
    /// `diag(sigma0)`.
    pub fn init<R: Rng + ?Sized>(spec: PolicySpec, mu0: &[f64], sigma0: &[f64], rng: &mut R) -> Self {
        assert_eq!(sigma0.len(), spec.action_dim);
        assert_eq!(mu0.len(), spec.action_dim);
        let mut p = PolicyParams::zeros(spec);
        let fill = |fs: &FnnSpec, theta: &mut [f64], rng: &mut R| {
            let w = fs.widths();
            let mut off = 0;
            for l in 0..w.len() - 1 {
                let (fin, fout) = (w[l], w[l + 1]);
                let scale = if l + 2 == w.len() { 0.01 } else { 1.0 } / (fin as f64).sqrt();
                for v in &mut theta[off..off + fin * fout] {
                    *v = rng.gen_range(-scale..scale);
                }
                off += fout * (fin + 1);
            }
        };
        fill(&p.spec.mean.clone(), &mut p.theta_mu, rng);
        fill(&p.spec.factor.clone(), &mut p.theta_sigma, rng);
        let mean_bias = p.theta_mu.len() - p.spec.mean.output;
        p.theta_mu[mean_bias..].copy_from_slice(mu0);
        let out_bias = p.theta_sigma.len() - p.spec.factor.output;
        for (k, b) in p.theta_sigma[out_bias..].iter_mut().enumerate() {
            let (i, j) = tri_index(k);
            *b = if i == j { softplus_inv((sigma0[i] - DIAG_FLOOR).max(1e-9)) } else { 0.0 };
        }
        p
    }

    pub fn len(&self) -> usize {
        self.theta_mu.len() + self.theta_sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.theta_mu.iter().chain(&self.theta_sigma).copied())
    }

    pub fn with_flat(&self, theta: &DVector<f64>) -> Result<Self, PolicyError> {
        if theta.len() != self.len() {
            return Err(PolicyError::ParamDim { expected: self.len(), got: theta.len() });
        }
        let m = self.theta_mu.len();
        Ok(PolicyParams {
            spec: self.spec.clone(),
            theta_mu: theta.as_slice()[..m].to_vec(),
            theta_sigma: theta.as_slice()[m..].to_vec(),
        })
    }

    fn check(&self) -> Result<(), PolicyError> {
        self.spec.validate()?;
        let (a, b) = (self.spec.mean.param_count(), self.spec.factor.param_count());
        if self.theta_mu.len() != a {
            return Err(PolicyError::ParamDim { expected: a, got: self.theta_mu.len() });
        }
        if self.theta_sigma.len() != b {
            return Err(PolicyError::ParamDim { expected: b, got: self.theta_sigma.len() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint { version: CHECKPOINT_VERSION, params: self.clone() };
        serde_json::to_string_pretty(&ck).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version(ck.version));
        }
        ck.params.check()?;
        Ok(ck.params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOut {
    pub mu: DVector<f64>,
    /// Lower triangular with diagonal at least [`DIAG_FLOOR`].
    pub chol: DMatrix<f64>,
}

impl GaussianOut {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// `Sigma^{-1} v` through the triangular factor.
    pub fn solve(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.chol.solve_lower_triangular(v).expect("positive diagonal");
        self.chol.transpose().solve_upper_triangular(&y).expect("positive diagonal")
    }
}

/// Forward pass of both networks at one state, kept for derivative products.
#[derive(Debug, Clone)]
pub struct PolicyEval<'a> {
    params: &'a PolicyParams,
    mean: Trace,
    factor: Trace,
    pub out: GaussianOut,
}

pub fn forward(params: &PolicyParams, state: &[f64]) -> Result<GaussianOut, PolicyError> {
    Ok(evaluate(params, state)?.out)
}

pub fn evaluate<'a>(params: &'a PolicyParams, state: &[f64]) -> Result<PolicyEval<'a>, PolicyError> {
    params.check()?;
    if state.len() != params.spec.mean.input {
        return Err(PolicyError::InputDim { expected: params.spec.mean.input, got: state.len() });
    }
    let d = params.spec.action_dim;
    let mean = fnn_forward(&params.spec.mean, &params.theta_mu, state);
    let factor = fnn_forward(&params.spec.factor, &params.theta_sigma, state);
    let mu = DVector::from_column_slice(mean.output());
    let mut chol = DMatrix::zeros(d, d);
    for (k, &z) in factor.output().iter().enumerate() {
        let (i, j) = tri_index(k);
        chol[(i, j)] = if i == j { softplus(z) + DIAG_FLOOR } else { z };
    }
    Ok(PolicyEval { params, mean, factor, out: GaussianOut { mu, chol } })
}

/// `a = L eps + mu`.
pub fn sample(params: &PolicyParams, state: &[f64], epsilon: &[f64]) -> Result<ActionVector, PolicyError> {
    let out = forward(params, state)?;
    Ok(ActionVector(sample_from(&out, epsilon).as_slice().to_vec()))
}

pub fn sample_from(out: &GaussianOut, epsilon: &[f64]) -> DVector<f64> {
    &out.chol * DVector::from_column_slice(epsilon) + &out.mu
}

impl PolicyEval<'_> {
    fn d(&self) -> usize {
        self.params.spec.action_dim
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    /// Map a cotangent on the lower triangle of `L` to the factor outputs.
    fn factor_cotangent(&self, cot_l: &DMatrix<f64>) -> Vec<f64> {
        self.factor
            .output()
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let (i, j) = tri_index(k);
                if i == j { cot_l[(i, i)] * sigmoid(z) } else { cot_l[(i, j)] }
            })
            .collect()
    }

    /// Gradient of `cot_mu . mu + <cot_l, L>` with respect to the flat
    /// parameters. Entries of `cot_l` above the diagonal are ignored.
    pub fn vjp(&self, cot_mu: &[f64], cot_l: &DMatrix<f64>) -> DVector<f64> {
        let p = self.params;
        let m = p.theta_mu.len();
        let mut g = DVector::zeros(p.len());
        fnn_vjp(&p.spec.mean, &p.theta_mu, &self.mean, cot_mu, &mut g.as_mut_slice()[..m]);
        let cz = self.factor_cotangent(cot_l);
        fnn_vjp(&p.spec.factor, &p.theta_sigma, &self.factor, &cz, &mut g.as_mut_slice()[m..]);
        g
    }

    /// Tangents `(d mu, d L)` for a flat parameter tangent.
    pub fn jvp(&self, dtheta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.params;
        let m = p.theta_mu.len();
        let dmu = fnn_jvp(&p.spec.mean, &p.theta_mu, &self.mean, &dtheta.as_slice()[..m]);
        let dz = fnn_jvp(&p.spec.factor, &p.theta_sigma, &self.factor, &dtheta.as_slice()[m..]);
        let d = self.d();
        let mut dl = DMatrix::zeros(d, d);
        for (k, (&dzk, &z)) in dz.iter().zip(self.factor.output()).enumerate() {
            let (i, j) = tri_index(k);
            dl[(i, j)] = if i == j { dzk * sigmoid(z) } else { dzk };
        }
        (DVector::from_vec(dmu), dl)
    }

    /// `(dmu/dtheta, dvec(L)/dtheta)` with `vec` stacking columns.
    pub fn jacobians(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.d();
        let h = self.params.len();
        let mut jmu = DMatrix::zeros(d, h);
        let zero_l = DMatrix::zeros(d, d);
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            jmu.row_mut(i).copy_from(&self.vjp(&e, &zero_l).transpose());
        }
        let mut jl = DMatrix::zeros(d * d, h);
        let zero_mu = vec![0.0; d];
        for j in 0..d {
            for i in j..d {
                let mut e = DMatrix::zeros(d, d);
                e[(i, j)] = 1.0;
                jl.row_mut(i + j * d).copy_from(&self.vjp(&zero_mu, &e).transpose());
            }
        }
        (jmu, jl)
    }

    /// Fisher information assembled from the Jacobians, symmetrized and
    /// damped. Dense, so meant for small networks.
    pub fn fim(&self) -> DMatrix<f64> {
        let mut f = self.fim_undamped();
        for i in 0..f.nrows() {
            f[(i, i)] += FIM_DAMPING;
        }
        f
    }

    pub fn fim_undamped(&self) -> DMatrix<f64> {
        let d = self.d();
        let (jmu, jl) = self.jacobians();
        let h = jmu.ncols();
        let mean_part = jmu.transpose() * self.out.solve(&jmu);
        let l = &self.out.chol;
        // A_i = Sigma^{-1} dSigma_i for every parameter
        let a: Vec<DMatrix<f64>> = (0..h)
            .map(|c| {
                let dl = DMatrix::from_column_slice(d, d, jl.column(c).as_slice());
                let ds = &dl * l.transpose() + l * dl.transpose();
                self.out.solve(&ds)
            })
            .collect();
        let mut f = mean_part;
        for i in 0..h {
            for j in 0..=i {
                let tr = a[i].component_mul(&a[j].transpose()).sum();
                f[(i, j)] += 0.5 * tr;
                if i != j {
                    f[(j, i)] += 0.5 * tr;
                }
            }
        }
        (&f + f.transpose()) * 0.5
    }

    /// Damped Fisher-vector product without forming the matrix.
    pub fn fvp(&self, v: &DVector<f64>) -> DVector<f64> {
        let (dmu, dl) = self.jvp(v);
        let l = &self.out.chol;
        let gmu = self.out.solve(&DMatrix::from_column_slice(dmu.len(), 1, dmu.as_slice()));
        let ds = &dl * l.transpose() + l * dl.transpose();
        let kds = self.out.solve(&ds);
        let kdsk = self.out.solve(&kds.transpose()).transpose();
        let cot_l = kdsk * l;
        self.vjp(gmu.as_slice(), &cot_l) + v * FIM_DAMPING
    }
}

pub fn jacobians(params: &PolicyParams, state: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), PolicyError> {
    Ok(evaluate(params, state)?.jacobians())
}

pub fn fim(params: &PolicyParams, state: &[f64]) -> Result<DMatrix<f64>, PolicyError> {
    Ok(evaluate(params, state)?.fim())
}

/// `KL(N(mu1, S1) || N(mu0, S0))` for two policy outputs.
pub fn gaussian_kl(new: &GaussianOut, old: &GaussianOut) -> f64 {
    let d = new.mu.len();
    let s1 = new.covariance();
    let trace = old.solve(&s1).trace();
    let diff = &new.mu - &old.mu;
    let quad = diff.dot(&old.solve(&DMatrix::from_column_slice(d, 1, diff.as_slice())).column(0));
    let logdet = |o: &GaussianOut| 2.0 * o.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    0.5 * (trace + quad - d as f64 + logdet(old) - logdet(new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_params(rng: &mut ChaCha8Rng, input: usize, d: usize) -> PolicyParams {
        let spec = PolicySpec::new(input, d, vec![4, 3], vec![5]);
        let mut p = PolicyParams::zeros(spec);
        for v in p.theta_mu.iter_mut().chain(p.theta_sigma.iter_mut()) {
            *v = rng.gen_range(-0.8..0.8);
        }
        p
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_outputs_biases() {
        let spec = PolicySpec::new(3, 2, vec![4], vec![4]);
        let mut p = PolicyParams::zeros(spec);
        let mb = p.theta_mu.len() - 2;
        p.theta_mu[mb] = 0.3;
        p.theta_mu[mb + 1] = -0.2;
        let fb = p.theta_sigma.len() - 3;
        p.theta_sigma[fb] = 0.5;
        p.theta_sigma[fb + 1] = 0.7;
        let out = forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(out.mu.as_slice(), &[0.3, -0.2]);
        assert_eq!(out.chol[(0, 0)], softplus(0.5) + DIAG_FLOOR);
        assert_eq!(out.chol[(1, 0)], 0.7);
        assert_eq!(out.chol[(1, 1)], softplus(0.0) + DIAG_FLOOR);
        assert_eq!(out.chol[(0, 1)], 0.0);
    }

    #[test]
    fn linear_mean_and_scalar_sample() {
        let spec = PolicySpec::new(1, 1, vec![], vec![]);
        let mut p = PolicyParams::zeros(spec);
        p.theta_mu = vec![2.5, 0.0];
        p.theta_sigma = vec![0.0, softplus_inv(2.0 - DIAG_FLOOR)];
        let out = forward(&p, &[1.5]).unwrap();
        assert_eq!(out.mu[0], 3.75);
        let mut q = p.clone();
        q.theta_mu = vec![0.0, 3.0];
        let a = sample(&q, &[1.5], &[1.0]).unwrap();
        assert!((a.0[0] - 5.0).abs() < 1e-12);
        assert_eq!(sample(&q, &[1.5], &[0.0]).unwrap().0, vec![3.0]);
        // linear regression Jacobian
        let (jmu, _) = jacobians(&p, &[1.5]).unwrap();
        assert_eq!(jmu[(0, 0)], 1.5);
        assert_eq!(jmu[(0, 1)], 1.0);
    }

    #[test]
    fn dimension_errors() {
        let p = PolicyParams::zeros(PolicySpec::new(3, 2, vec![4], vec![4]));
        assert!(matches!(forward(&p, &[0.0; 2]), Err(PolicyError::InputDim { expected: 3, got: 2 })));
        let mut bad = p.clone();
        bad.theta_mu.pop();
        assert!(matches!(forward(&bad, &[0.0; 3]), Err(PolicyError::ParamDim { .. })));
    }

    #[test]
    fn covariance_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_params(&mut rng, 4, 3);
            let out = forward(&p, &random_state(&mut rng, 4)).unwrap();
            let s = out.covariance();
            assert!((&s - s.transpose()).amax() < 1e-15);
            assert!(s.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn sample_covariance_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 3, 2);
        let x = random_state(&mut rng, 3);
        let out = forward(&p, &x).unwrap();
        let n = 10_000;
        let mut mean = DVector::zeros(2);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = sample_from(&out, &eps);
            mean += &a;
            xs.push(a);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(2, 2);
        for a in &xs {
            let c = a - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let target = out.covariance();
        assert!((&cov - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let p = random_params(&mut rng, 3, 3);
            let x = random_state(&mut rng, 3);
            let (jmu, jl) = jacobians(&p, &x).unwrap();
            let theta = p.flat();
            let m = p.theta_mu.len();
            for c in 0..theta.len() {
                let mut hi = theta.clone();
                let mut lo = theta.clone();
                hi[c] += 1e-5;
                lo[c] -= 1e-5;
                let (oh, ol) = (
                    forward(&p.with_flat(&hi).unwrap(), &x).unwrap(),
                    forward(&p.with_flat(&lo).unwrap(), &x).unwrap(),
                );
                let fmu = (&oh.mu - &ol.mu) / 2e-5;
                let fl = (&oh.chol - &ol.chol) / 2e-5;
                for i in 0..3 {
                    assert!((jmu[(i, c)] - fmu[i]).abs() <= 1e-6 * (1.0 + fmu[i].abs()));
                }
                for k in 0..9 {
                    assert!((jl[(k, c)] - fl.as_slice()[k]).abs() <= 1e-6 * (1.0 + fl.as_slice()[k].abs()));
                }
                if c >= m {
                    assert!(jmu.column(c).iter().all(|&v| v == 0.0));
                } else {
                    assert!(jl.column(c).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn scalar_fim_formulas() {
        // mean theta * s, fixed sigma
        let spec = PolicySpec::new(1, 1, vec![], vec![]);
        let sigma = 0.7;
        let s = 1.3;
        let p = PolicyParams {
            spec: spec.clone(),
            theta_mu: vec![0.4, 0.0],
            theta_sigma: vec![0.0, softplus_inv(sigma - DIAG_FLOOR)],
        };
        let f = evaluate(&p, &[s]).unwrap().fim_undamped();
        assert!((f[(0, 0)] - s * s / (sigma * sigma)).abs() < 1e-12);
        // fixed mean, sigma(theta) = softplus(theta_b) + floor
        let z = 0.3;
        let p = PolicyParams { spec, theta_mu: vec![0.0, 0.0], theta_sigma: vec![0.0, z] };
        let f = evaluate(&p, &[s]).unwrap().fim_undamped();
        let sig = softplus(z) + DIAG_FLOOR;
        let ds = sigmoid(z);
        assert!((f[(3, 3)] - 2.0 * ds * ds / (sig * sig)).abs() < 1e-12);
        assert!((f[(2, 2)] - 2.0 * (ds * s).powi(2) / (sig * sig)).abs() < 1e-12);
    }

    #[test]
    fn fisher_vector_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let p = random_params(&mut rng, 4, 3);
            let x = random_state(&mut rng, 4);
            let ev = evaluate(&p, &x).unwrap();
            let f = ev.fim();
            assert!(f.clone().symmetric_eigenvalues().min() >= -1e-10);
            let v = DVector::from_fn(p.len(), |_, _| rng.gen_range(-1.0..1.0));
            let dense = &f * &v;
            assert!((&ev.fvp(&v) - &dense).amax() < 1e-9 * (1.0 + dense.amax()));
        }
    }

    #[test]
    fn kl_matches_fisher_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_params(&mut rng, 4, 3);
        let x = random_state(&mut rng, 4);
        let ev = evaluate(&p, &x).unwrap();
        let f = ev.fim_undamped();
        let dir = DVector::from_fn(p.len(), |_, _| rng.gen_range(-1.0..1.0)).normalize() * 1e-3;
        let q = p.with_flat(&(p.flat() + &dir)).unwrap();
        let kl = gaussian_kl(&forward(&q, &x).unwrap(), &ev.out);
        let quad = 0.5 * dir.dot(&(&f * &dir));
        assert!(((kl - quad) / quad).abs() < 0.1, "{kl} {quad}");
    }

    #[test]
    fn init_matches_requested_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = PolicySpec::new(6, 4, vec![10, 10], vec![20, 20]);
        let sigma0 = [0.01, 0.02, 0.015, 0.005];
        let mu0 = [0.0, 0.3, -0.2, 1.0];
        let p = PolicyParams::init(spec, &mu0, &sigma0, &mut rng);
        let out = forward(&p, &[0.5, -0.5, 0.1, 0.9, -1.0, 0.0]).unwrap();
        for (i, s) in sigma0.iter().enumerate() {
            assert!((out.chol[(i, i)] - s).abs() < 0.1 * s + 0.01, "{} {s}", out.chol[(i, i)]);
            assert!((out.mu[i] - mu0[i]).abs() < 0.1);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_params(&mut rng, 3, 2);
        p.theta_mu[0] = 0.1 + 0.2;
        p.theta_sigma[1] = -1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        p.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), p);
        let bumped = p.to_json().replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(PolicyParams::from_json(&bumped), Err(PolicyError::Version(9))));
    }

    #[test]
    fn tri_index_walks_rows() {
        let got: Vec<_> = (0..6).map(tri_index).collect();
        assert_eq!(got, vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
    }
}
