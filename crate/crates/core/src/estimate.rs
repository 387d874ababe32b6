//! Constrained maximum likelihood, covariance, tests, predictions and bands.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CensoringKind, Dataset};
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::formula::Formula;
use crate::likelihood::{noise, trafo, Design, Noise, PENALTY};
use crate::model::{bind, BaselineKind, BindOptions, BlockKind, EncodedRow, Extension, ModelSpec};
use crate::optim::{inf_norm, minimize, BfgsOptions, Status};
use crate::prelude::*;
use crate::special::{chisq_sf, norm_quantile};
use crate::transform::{dot, Basis};

/// Increments below this are treated as sitting on the monotonicity boundary
/// when computing the covariance.
const BOUNDARY_INCREMENT: f64 = 1e-6;
const MIN_INCREMENT: f64 = 1e-8;

/// Log-increment reparametrization making monotone blocks unconstrained:
/// `theta_1 = d_1`, `theta_{k+1} = theta_k + exp(d_{k+1})`. For log-linear
/// baselines only the slope is constrained: `theta_2 = exp(d_2)`.
#[derive(Debug, Clone)]
pub struct Reparam {
    monotone: Vec<Chain>,
    n: usize,
}

#[derive(Debug, Clone)]
struct Chain {
    range: core::ops::Range<usize>,
    /// The first increment starts from zero instead of `theta_1`.
    from_zero: bool,
}

impl Chain {
    fn increments(&self) -> core::ops::Range<usize> {
        self.range.start + 1..self.range.end
    }

    fn depends(&self, row: usize, col: usize) -> bool {
        col <= row && !(self.from_zero && col == self.range.start && row != col)
    }
}

impl Reparam {
    pub fn new(spec: &ModelSpec) -> Self {
        let from_zero = spec.baseline == BaselineKind::LogLinear;
        let monotone = spec
            .layout
            .blocks()
            .iter()
            .filter(|b| b.is_monotone())
            .map(|b| Chain {
                range: b.range(),
                from_zero,
            })
            .collect();
        Self {
            monotone,
            n: spec.n_params(),
        }
    }

    /// Parameters of several models laid end to end, followed by `extra`
    /// unconstrained coordinates.
    pub fn stacked(specs: &[&ModelSpec], extra: usize) -> Self {
        let mut monotone = Vec::new();
        let mut offset = 0;
        for spec in specs {
            for c in Self::new(spec).monotone {
                let range = c.range.start + offset..c.range.end + offset;
                monotone.push(Chain { range, ..c });
            }
            offset += spec.n_params();
        }
        Self {
            monotone,
            n: offset + extra,
        }
    }

    pub fn to_params(&self, free: &[f64]) -> Vec<f64> {
        let mut p = free.to_vec();
        for c in &self.monotone {
            for k in c.increments() {
                let prev = if c.from_zero && k == c.range.start + 1 {
                    0.0
                } else {
                    p[k - 1]
                };
                p[k] = prev + free[k].exp();
            }
        }
        p
    }

    pub fn from_params(&self, params: &[f64]) -> Vec<f64> {
        let mut d = params.to_vec();
        for c in &self.monotone {
            for k in c.increments() {
                let prev = if c.from_zero && k == c.range.start + 1 {
                    0.0
                } else {
                    params[k - 1]
                };
                d[k] = (params[k] - prev).max(MIN_INCREMENT).ln();
            }
        }
        d
    }

    /// Gradient in the free coordinates from a gradient in the parameters.
    pub fn pull_back(&self, free: &[f64], grad: &mut [f64]) {
        for c in &self.monotone {
            let mut tail = 0.0;
            for k in c.increments().rev() {
                tail += grad[k];
                grad[k] = tail * free[k].exp();
            }
            if !c.from_zero {
                grad[c.range.start] += tail;
            }
        }
    }

    /// `d params / d free` as a dense matrix.
    pub fn jacobian(&self, free: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::identity(self.n, self.n);
        for c in &self.monotone {
            for row in c.range.clone() {
                for col in c.range.clone() {
                    j[(row, col)] = if !c.depends(row, col) {
                        0.0
                    } else if col == c.range.start {
                        1.0
                    } else {
                        free[col].exp()
                    };
                }
            }
        }
        j
    }

    /// Whether a parameter vector satisfies the block constraints.
    pub fn admissible(&self, params: &[f64]) -> bool {
        self.monotone.iter().all(|c| {
            c.increments().all(|k| {
                let prev = if c.from_zero && k == c.range.start + 1 {
                    0.0
                } else {
                    params[k - 1]
                };
                params[k] > prev
            })
        })
    }

    /// Free coordinates whose increment has collapsed onto the boundary.
    /// Free coordinates holding log-increments of a monotone block.
    fn increment_coords(&self) -> impl Iterator<Item = usize> + '_ {
        self.monotone.iter().flat_map(|c| c.increments())
    }

    pub fn at_boundary(&self, free: &[f64]) -> Vec<bool> {
        let mut b = vec![false; self.n];
        for c in &self.monotone {
            for k in c.increments() {
                b[k] = free[k].exp() < BOUNDARY_INCREMENT;
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Relative step of the finite-difference Hessian.
    pub hessian_step: f64,
    /// Starting values in the original parametrization.
    pub start: Option<Vec<f64>>,
    /// Parameters pinned at the given values.
    pub fixed: Vec<(String, f64)>,
    /// Gauss-Hermite nodes for random intercepts.
    pub nodes: usize,
    pub newton_steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            hessian_step: 1e-5,
            start: None,
            fixed: Vec::new(),
            nodes: crate::likelihood::DEFAULT_NODES,
            newton_steps: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub grad_norm: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Vcov {
    /// Row-major covariance over all parameters (zero rows for pinned or
    /// boundary coordinates).
    Available(Vec<f64>),
    Singular,
    /// Coefficients were edited after fitting.
    Invalidated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub vcov: Vcov,
    pub loglik: f64,
    pub n_obs: usize,
    pub convergence: Convergence,
    /// Parameters held fixed during estimation.
    pub fixed: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Wald,
    LikelihoodRatio,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub kind: TestKind,
}

impl TestResult {
    fn chisq(statistic: f64, df: usize, kind: TestKind) -> Self {
        let p_value = if df == 0 {
            1.0
        } else {
            chisq_sf(statistic.max(0.0), df as f64).clamp(0.0, 1.0)
        };
        Self {
            statistic,
            df,
            p_value,
            kind,
        }
    }
}

fn validate(spec: &ModelSpec, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = ds.kind_counts();
    if counts.right == ds.len() {
        return Err(Error::UnsupportedCensoring(
            "all observations are right-censored".into(),
        ));
    }
    if let Some(strata) = &spec.strata {
        let enc = spec.encode_dataset(ds)?;
        for (k, level) in strata.levels.iter().enumerate() {
            if !enc.iter().any(|e| e.stratum == k) {
                return Err(Error::Role {
                    var: strata.var.clone(),
                    message: format!("stratum `{level}` has no observations"),
                });
            }
        }
    }
    Ok(())
}

fn midpoints(ds: &Dataset) -> Vec<f64> {
    ds.rows()
        .iter()
        .map(|o| {
            let (lo, hi) = o.time.window();
            match o.time.kind() {
                CensoringKind::Exact | CensoringKind::Right => lo,
                CensoringKind::Left => hi,
                CensoringKind::Interval => (lo * hi).sqrt(),
            }
        })
        .collect()
}

/// Fit `theta1 + theta2 log t` on the baseline alone; used for starting values.
fn initial_loglinear(spec: &ModelSpec, ds: &Dataset) -> Result<[f64; 2]> {
    let formula = Formula {
        response: spec.formula.response.clone(),
        ..Default::default()
    };
    let opts = BindOptions {
        link: spec.link,
        baseline: BaselineKind::LogLinear,
        ..Default::default()
    };
    let base = bind(&formula, ds, &opts)?;
    let design = Design::new(&base, ds)?;
    let mut logs: Vec<f64> = midpoints(ds).iter().map(|t| t.ln()).collect();
    logs.sort_by(|a, b| a.total_cmp(b));
    let median = logs[logs.len() / 2];
    let start = [-median, 0.0]; // theta2 = exp(0) = 1
    let re = Reparam::new(&base);
    let m = minimize(
        |d, g| {
            let p = re.to_params(d);
            let v = design.nll_grad(&p, &Sequential, g).unwrap_or(f64::INFINITY);
            re.pull_back(d, g);
            v
        },
        &start,
        &[],
        &BfgsOptions {
            gtol: 1e-6,
            max_iter: 200,
            ..Default::default()
        },
    );
    let p = re.to_params(if m.value < PENALTY { &m.x } else { &start });
    Ok([p[0], p[1]])
}

/// Least-squares projection of `h(t) = a + b log t` onto the Bernstein
/// basis; falls back to values at the Greville abscissae if the projection
/// is not monotone.
fn project_loglinear(basis: &Basis, ab: [f64; 2]) -> Vec<f64> {
    let Basis::Bernstein(b) = basis else {
        return ab.to_vec();
    };
    let dim = b.dim();
    let h = |x: f64| ab[0] + ab[1] * b.scaler.unscale(x).ln();
    let greville: Vec<f64> = (0..dim).map(|p| h(p as f64 / (dim - 1) as f64)).collect();
    let m = 200;
    let mut design = DMatrix::zeros(m, dim);
    let mut target = DVector::zeros(m);
    for i in 0..m {
        let x = (i as f64 + 0.5) / m as f64;
        let row = b.bern_eval(x);
        for p in 0..dim {
            design[(i, p)] = row[p];
        }
        target[i] = h(x);
    }
    let normal = design.transpose() * &design;
    let rhs = design.transpose() * target;
    match normal.cholesky() {
        Some(ch) => {
            let theta = ch.solve(&rhs);
            let v: Vec<f64> = theta.iter().copied().collect();
            if v.windows(2).all(|w| w[1] - w[0] > MIN_INCREMENT) {
                v
            } else {
                greville
            }
        }
        None => greville,
    }
}

fn default_start(spec: &ModelSpec, ds: &Dataset) -> Result<Vec<f64>> {
    let ab = initial_loglinear(spec, ds)?;
    let theta = project_loglinear(&spec.basis, ab);
    let mut p = vec![0.0; spec.n_params()];
    for k in 0..spec.n_strata() {
        p[spec.layout.baseline(k)].copy_from_slice(&theta);
    }
    if let Some(i) = spec.layout.log_variance() {
        p[i] = 0.1f64.ln();
    }
    Ok(p)
}

fn fixed_mask(spec: &ModelSpec, fixed: &[(String, f64)], start: &mut [f64]) -> Result<Vec<bool>> {
    let mut mask = vec![false; spec.n_params()];
    for (name, value) in fixed {
        let i = spec.layout.index(name)?;
        if spec.layout.block_of(i).is_some_and(|b| b.is_monotone()) {
            return Err(Error::InvalidArgument(format!(
                "cannot pin transformation coefficient `{name}`"
            )));
        }
        mask[i] = true;
        start[i] = *value;
    }
    Ok(mask)
}

/// Finite-difference Hessian of the objective in free coordinates.
fn hessian<G>(grad: &mut G, x: &[f64], free: &[bool], step: f64) -> DMatrix<f64>
where
    G: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        if !free[i] {
            continue;
        }
        let e = step * x[i].abs().max(1.0);
        xp[i] = x[i] + e;
        grad(&xp, &mut gp);
        xp[i] = x[i] - e;
        grad(&xp, &mut gm);
        xp[i] = x[i];
        for j in 0..n {
            h[(j, i)] = (gp[j] - gm[j]) / (2.0 * e);
        }
    }

    (&h + h.transpose()) * 0.5
}

/// Inverse of the submatrix over `keep`, scattered back into a full matrix.
fn inverse_on(h: &DMatrix<f64>, keep: &[bool]) -> Option<DMatrix<f64>> {
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let m = idx.len();
    let mut sub = DMatrix::zeros(m, m);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            sub[(a, b)] = h[(i, j)];
        }
    }
    let inv = sub.cholesky()?.inverse();
    let mut full = DMatrix::zeros(keep.len(), keep.len());
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            full[(i, j)] = inv[(a, b)];
        }
    }
    Some(full)
}

pub fn fit(spec: &ModelSpec, ds: &Dataset, opts: &FitOptions) -> Result<FittedModel> {
    fit_with(spec, ds, opts, &Sequential)
}

pub fn fit_with(
    spec: &ModelSpec,
    ds: &Dataset,
    opts: &FitOptions,
    exec: &dyn Executor,
) -> Result<FittedModel> {
    validate(spec, ds)?;
    let design = Design::new(spec, ds)?.with_nodes(opts.nodes);
    let mut start = match &opts.start {
        Some(s) if s.len() != spec.n_params() => {
            return Err(Error::LengthMismatch {
                expected: spec.n_params(),
                actual: s.len(),
            })
        }
        Some(s) => s.clone(),
        None if spec.extension.is_some() => {
            // warm start from the model without the extension
            let plain = spec.without_extension();
            let inner = FitOptions {
                start: None,
                fixed: Vec::new(),
                ..opts.clone()
            };
            let base = fit_with(&plain, ds, &inner, exec)?;
            let mut s = vec![0.0; spec.n_params()];
            s[..base.params.len()].copy_from_slice(&base.params);
            if let Some(i) = spec.layout.log_variance() {
                s[i] = 0.1f64.ln();
            }
            s
        }
        None => default_start(spec, ds)?,
    };
    let fixed = fixed_mask(spec, &opts.fixed, &mut start)?;
    let re = Reparam::new(spec);
    let objective = |p: &[f64], g: &mut [f64]| design.nll_grad(p, exec, g).unwrap_or(f64::INFINITY);
    let opt = optimize(objective, &re, &start, &fixed, opts);
    Ok(FittedModel {
        spec: spec.clone(),
        params: opt.params,
        vcov: opt.vcov,
        loglik: -opt.value,
        n_obs: ds.len(),
        convergence: opt.convergence,
        fixed,
    })
}

/// Result of [`optimize`].
pub(crate) struct Optimum {
    pub params: Vec<f64>,
    pub value: f64,
    pub vcov: Vcov,
    pub convergence: Convergence,
}

/// Minimize a negative log-likelihood given in the original parametrization:
/// BFGS in the reparametrized coordinates, Newton polishing with the
/// finite-difference Hessian, then the delta-method covariance.
pub(crate) fn optimize<F>(
    mut nll_grad: F,
    re: &Reparam,
    start: &[f64],
    fixed: &[bool],
    opts: &FitOptions,
) -> Optimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let free_mask: Vec<bool> = fixed.iter().map(|f| !f).collect();
    let mut objective = |d: &[f64], g: &mut [f64]| -> f64 {
        let p = re.to_params(d);
        let v = nll_grad(&p, g);
        if !v.is_finite() {
            return f64::INFINITY;
        }
        re.pull_back(d, g);
        for (gi, &fr) in g.iter_mut().zip(&free_mask) {
            if !fr {
                *gi = 0.0;
            }
        }
        v
    };

    let d0 = re.from_params(start);
    let m = minimize(&mut objective, &d0, fixed, &opts.bfgs);
    let mut x = m.x;
    let mut value = m.value;
    let mut grad = m.grad;
    let iterations = m.iterations;
    let mut converged = m.status == Status::Converged;

    // Newton polishing with the finite-difference Hessian
    let n = x.len();
    for _ in 0..opts.newton_steps {
        if inf_norm(&grad) <= opts.bfgs.grad_tol(value) * 1e-2 {
            break;
        }
        let h = hessian(&mut objective, &x, &free_mask, opts.hessian_step);
        let Some(inv) = inverse_on(&h, &free_mask) else {
            break;
        };
        let step = -(&inv * DVector::from_column_slice(&grad));
        let mut t = 1.0;
        let mut improved = false;
        let mut g_new = vec![0.0; n];
        for _ in 0..20 {
            let cand: Vec<f64> = (0..n).map(|i| x[i] + t * step[i]).collect();
            let v = objective(&cand, &mut g_new);
            if v.is_finite()
                && v <= value + 1e-12 * value.abs()
                && inf_norm(&g_new) < inf_norm(&grad)
            {
                x = cand;
                value = v;
                grad.copy_from_slice(&g_new);
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let grad_norm = inf_norm(&grad);
    if grad_norm <= opts.bfgs.grad_tol(value) {
        converged = true;
    }
    if value >= PENALTY {
        converged = false;
    }

    let boundary = re.at_boundary(&x);
    let mut keep: Vec<bool> = (0..n).map(|i| free_mask[i] && !boundary[i]).collect();
    let h = hessian(&mut objective, &x, &free_mask, opts.hessian_step);
    // increments close to zero leave a flat direction; treat the smallest
    // ones as active constraints until the information is positive definite
    let inv = loop {
        if let Some(inv) = inverse_on(&h, &keep) {
            break Some(inv);
        }
        let smallest = re
            .increment_coords()
            .filter(|&k| keep[k])
            .min_by(|&a, &b| x[a].total_cmp(&x[b]));
        match smallest {
            Some(k) => keep[k] = false,
            None => break None,
        }
    };
    let vcov = match inv {
        Some(inv) => {
            let j = re.jacobian(&x);
            let v = &j * inv * j.transpose();
            let v = (&v + v.transpose()) * 0.5;
            Vcov::Available(v.transpose().iter().copied().collect())
        }
        None => Vcov::Singular,
    };
    Optimum {
        params: re.to_params(&x),
        value,
        vcov,
        convergence: Convergence {
            iterations,
            grad_norm,
            status: if converged {
                FitStatus::Converged
            } else {
                FitStatus::NotConverged
            },
        },
    }
}

/// Survivor-type quantities available from [`FittedModel::predict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Survivor,
    Distribution,
    CumHazard,
    /// `log(-log S(t))`; equals the transformation `z(t)` under cloglog.
    LogCumHazard,
    Density,
    Hazard,
}

impl Quantity {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "survivor" => Self::Survivor,
            "distribution" => Self::Distribution,
            "cumhaz" => Self::CumHazard,
            "loghaz_cum" | "logcumhaz" => Self::LogCumHazard,
            "density" => Self::Density,
            "hazard" => Self::Hazard,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown quantity `{other}`"
                )))
            }
        })
    }

    fn from_z(self, noise: &Noise, z: f64, zp: f64) -> f64 {
        let log_s = noise.log_sf(z);
        match self {
            Self::Survivor => log_s.exp(),
            Self::Distribution => -log_s.exp_m1(),
            Self::CumHazard => -log_s,
            Self::LogCumHazard => (-log_s).ln(),
            Self::Density => (noise.log_pdf(z)).exp() * zp,
            Self::Hazard => (noise.log_pdf(z) - log_s).exp() * zp,
        }
    }

    /// Whether the quantity increases with `z`.
    fn increasing(self) -> Option<bool> {
        match self {
            Self::Survivor => Some(false),
            Self::Distribution | Self::CumHazard | Self::LogCumHazard => Some(true),
            Self::Density | Self::Hazard => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub level: f64,
    pub simultaneous: bool,
    pub draws: usize,
    pub seed: u64,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            simultaneous: false,
            draws: 100_000,
            seed: 1,
        }
    }
}

impl FittedModel {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> &[String] {
        self.spec.layout.names()
    }

    fn sign(&self, i: usize) -> f64 {
        let in_shift = self.spec.layout.shift().contains(&i);
        if in_shift {
            self.spec.reported_shift_sign()
        } else {
            1.0
        }
    }

    /// Coefficient by name in reported orientation.
    pub fn coef(&self, name: &str) -> Result<f64> {
        let i = self.spec.layout.index(name)?;
        Ok(self.sign(i) * self.params[i])
    }

    /// All coefficients in reported orientation.
    pub fn coefs(&self) -> Vec<(String, f64)> {
        self.names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), self.sign(i) * self.params[i]))
            .collect()
    }

    pub fn vcov_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.vcov {
            Vcov::Available(v) => Ok(DMatrix::from_row_slice(self.n_params(), self.n_params(), v)),
            Vcov::Singular => Err(Error::VcovUnavailable(
                "information matrix is singular".into(),
            )),
            Vcov::Invalidated => Err(Error::VcovUnavailable("coefficients were edited".into())),
        }
    }

    pub fn std_error(&self, name: &str) -> Result<f64> {
        let i = self.spec.layout.index(name)?;
        let v = self.vcov_matrix()?;
        Ok(v[(i, i)].max(0.0).sqrt())
    }

    /// Wald interval `estimate -/+ z_{(1+level)/2} SE` (reported orientation).
    /// A zero standard error yields a zero-width interval.
    pub fn wald_ci(&self, name: &str, level: f64) -> Result<(f64, f64)> {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::InvalidProbability(level));
        }
        let est = self.coef(name)?;
        let se = self.std_error(name)?;
        let q = if level == 0.0 {
            0.0
        } else {
            norm_quantile(0.5 * (1.0 + level))
        };
        Ok((est - q * se, est + q * se))
    }

    /// Wald test of the named coefficients being jointly zero.
    pub fn wald_test(&self, names: &[&str]) -> Result<TestResult> {
        let v = self.vcov_matrix()?;
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.spec.layout.index(n))
            .collect::<Result<_>>()?;
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |a, b| v[(idx[a], idx[b])]);
        let est = DVector::from_fn(k, |a, _| self.params[idx[a]]);
        let inv = sub.cholesky().ok_or(Error::SingularInformation)?.inverse();
        let stat = (est.transpose() * inv * &est)[(0, 0)];
        Ok(TestResult::chisq(stat, k, TestKind::Wald))
    }

    /// Replace a coefficient (reported orientation); the covariance becomes
    /// invalid.
    pub fn set_coef(&self, name: &str, value: f64) -> Result<FittedModel> {
        let i = self.spec.layout.index(name)?;
        let mut out = self.clone();
        out.params[i] = self.sign(i) * value;
        if !Reparam::new(&self.spec).admissible(&out.params) {
            return Err(Error::Monotonicity(name.into()));
        }
        out.vcov = Vcov::Invalidated;
        Ok(out)
    }

    /// Weibull log-acceleration factor `beta / theta2` of a shift term.
    pub fn log_acceleration(&self, name: &str) -> Result<f64> {
        if self.spec.baseline != BaselineKind::LogLinear {
            return Err(Error::InvalidArgument(
                "log-acceleration requires a log-linear baseline".into(),
            ));
        }
        let beta = self.coef(name)?;
        let theta2 = self.params[self.spec.layout.baseline(0).start + 1];
        Ok(beta / theta2)
    }

    pub fn noise(&self) -> Noise {
        noise(&self.spec, &self.params)
    }

    pub fn trafo(&self, enc: &EncodedRow, t: f64) -> Result<(f64, f64)> {
        trafo(&self.spec, &self.params, enc, t)
    }

    pub fn predict(&self, enc: &EncodedRow, grid: &[f64], what: Quantity) -> Result<Vec<f64>> {
        let noise = self.noise();
        grid.iter()
            .map(|&t| {
                let (z, zp) = self.trafo(enc, t)?;
                Ok(what.from_z(&noise, z, zp))
            })
            .collect()
    }

    /// Gradient of `z(t)` with respect to all parameters.
    fn z_gradient(&self, enc: &EncodedRow, t: f64) -> Result<Vec<f64>> {
        let layout = &self.spec.layout;
        let (a, _) = self.spec.basis.values(t)?;
        let mut g = vec![0.0; self.n_params()];
        let base = layout.baseline(enc.stratum);
        let mult = (0.5 * dot(&self.params[layout.scale()], &enc.scale)).exp();
        let h = dot(&a, &self.params[base.clone()]);
        for (k, i) in base.enumerate() {
            g[i] = mult * a[k];
        }
        for (j, x) in enc.time_varying.iter().enumerate() {
            for (k, i) in layout.time_varying(j).enumerate() {
                g[i] = x * a[k];
            }
        }
        for (k, i) in layout.shift().enumerate() {
            g[i] = enc.shift[k];
        }
        for (k, i) in layout.scale().enumerate() {
            g[i] = 0.5 * mult * h * enc.scale[k];
        }
        Ok(g)
    }

    /// Confidence band for a monotone function of `z(t)`, built on the `z`
    /// scale and mapped through the noise distribution.
    pub fn confband(
        &self,
        enc: &EncodedRow,
        grid: &[f64],
        what: Quantity,
        opts: &BandOptions,
    ) -> Result<Band> {
        let increasing = what
            .increasing()
            .ok_or_else(|| Error::InvalidArgument("bands need a monotone quantity".into()))?;
        if !(0.0..1.0).contains(&opts.level) {
            return Err(Error::InvalidProbability(opts.level));
        }
        let v = self.vcov_matrix()?;
        let mut z = Vec::with_capacity(grid.len());
        let mut grads = Vec::with_capacity(grid.len());
        let mut sd = Vec::with_capacity(grid.len());
        for &t in grid {
            z.push(self.trafo(enc, t)?.0);
            let g = DVector::from_vec(self.z_gradient(enc, t)?);
            sd.push((g.transpose() * &v * &g)[(0, 0)].max(0.0).sqrt());
            grads.push(g);
        }
        let crit = if opts.level == 0.0 {
            0.0
        } else if opts.simultaneous {
            max_t_quantile(&v, &grads, &sd, opts)?
        } else {
            norm_quantile(0.5 * (1.0 + opts.level))
        };
        let noise = self.noise();
        let map = |zz: f64| what.from_z(&noise, zz, 1.0);
        let mut band = Band {
            grid: grid.to_vec(),
            estimate: vec![],
            lower: vec![],
            upper: vec![],
        };
        for i in 0..grid.len() {
            let (a, b) = (map(z[i] - crit * sd[i]), map(z[i] + crit * sd[i]));
            band.estimate.push(map(z[i]));
            if increasing {
                band.lower.push(a);
                band.upper.push(b);
            } else {
                band.lower.push(b);
                band.upper.push(a);
            }
        }
        Ok(band)
    }

    /// `exp(beta_j(t))` for time-varying term `term` with a pointwise Wald band.
    pub fn hr_curve(&self, term: usize, grid: &[f64], level: f64) -> Result<Band> {
        if self.spec.time_varying.is_empty() {
            return Err(Error::NoTimeVarying);
        }
        if term >= self.spec.time_varying.len() {
            return Err(Error::InvalidArgument(format!(
                "no time-varying term {term}"
            )));
        }
        let range = self.spec.layout.time_varying(term);
        let theta = &self.params[range.clone()];
        let v = self.vcov_matrix().ok();
        let q = norm_quantile(0.5 * (1.0 + level));
        let mut band = Band {
            grid: grid.to_vec(),
            estimate: vec![],
            lower: vec![],
            upper: vec![],
        };
        for &t in grid {
            let (a, _) = self.spec.basis.values(t)?;
            let b = dot(&a, theta);
            let se = match &v {
                Some(v) => {
                    let mut s = 0.0;
                    for (k, i) in range.clone().enumerate() {
                        for (l, j) in range.clone().enumerate() {
                            s += a[k] * v[(i, j)] * a[l];
                        }
                    }
                    s.max(0.0).sqrt()
                }
                None => f64::NAN,
            };
            band.estimate.push(b.exp());
            band.lower.push((b - q * se).exp());
            band.upper.push((b + q * se).exp());
        }
        Ok(band)
    }
}

/// Level-quantile of `max_t |g_t' d| / sd_t` over multivariate normal draws
/// `d ~ N(0, V)`.
fn max_t_quantile(
    v: &DMatrix<f64>,
    grads: &[DVector<f64>],
    sd: &[f64],
    opts: &BandOptions,
) -> Result<f64> {
    let n = v.nrows();
    // PSD square root (covariance may be rank deficient at pinned coordinates)
    let eig = v.clone().symmetric_eigen();
    let mut root = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            root[(i, j)] *= s;
        }
    }
    let loadings: Vec<DVector<f64>> = grads.iter().map(|g| root.transpose() * g).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut maxima = Vec::with_capacity(opts.draws);
    let mut e = DVector::zeros(n);
    for _ in 0..opts.draws {
        for i in 0..n {
            e[i] = StandardNormal.sample(&mut rng);
        }
        let mut m: f64 = 0.0;
        for (l, &s) in loadings.iter().zip(sd) {
            if s > 0.0 {
                m = m.max((l.dot(&e) / s).abs());
            }
        }
        maxima.push(m);
    }
    maxima.sort_by(|a, b| a.total_cmp(b));
    let k = ((opts.level * opts.draws as f64).ceil() as usize).clamp(1, opts.draws) - 1;
    Ok(maxima[k])
}

/// Likelihood-ratio test of a null model nested in a full model.
pub fn lr_test(full: &FittedModel, null: &FittedModel) -> Result<TestResult> {
    if full.n_obs != null.n_obs {
        return Err(Error::NotNested(
            "models were fitted to different row counts".into(),
        ));
    }
    if null.names().iter().any(|n| !full.names().contains(n)) {
        return Err(Error::NotNested(
            "null parameters are not a subset of the full model".into(),
        ));
    }
    if full.loglik < null.loglik - 1e-6 {
        return Err(Error::Optimizer(format!(
            "full log-likelihood {} below null {}",
            full.loglik, null.loglik
        )));
    }
    let free = |m: &FittedModel| m.fixed.iter().filter(|f| !**f).count();
    let df = free(full).saturating_sub(free(null));
    let stat = (2.0 * (full.loglik - null.loglik)).max(0.0);
    Ok(TestResult::chisq(stat, df, TestKind::LikelihoodRatio))
}

/// Score test of `tested` (shift/scale/extension names) being zero, evaluated
/// at the restricted maximum likelihood estimate.
pub fn score_test(
    spec: &ModelSpec,
    ds: &Dataset,
    tested: &[&str],
    opts: &FitOptions,
) -> Result<TestResult> {
    score_test_with(spec, ds, tested, opts, &Sequential)
}

pub fn score_test_with(
    spec: &ModelSpec,
    ds: &Dataset,
    tested: &[&str],
    opts: &FitOptions,
    exec: &dyn Executor,
) -> Result<TestResult> {
    if tested.is_empty() {
        return Err(Error::InvalidArgument("no parameters to test".into()));
    }
    let mut o = opts.clone();
    for name in tested {
        o.fixed.push(((*name).into(), 0.0));
    }
    let restricted = fit_with(spec, ds, &o, exec)?;
    let design = Design::new(spec, ds)?.with_nodes(opts.nodes);
    let re = Reparam::new(spec);
    let x = re.from_params(&restricted.params);
    let mut objective = |d: &[f64], g: &mut [f64]| -> f64 {
        let p = re.to_params(d);
        let v = design.nll_grad(&p, exec, g).unwrap_or(f64::INFINITY);
        re.pull_back(d, g);
        v
    };
    let mut grad = vec![0.0; x.len()];
    objective(&x, &mut grad);
    let boundary = re.at_boundary(&x);
    let all = vec![true; x.len()];
    let h = hessian(&mut objective, &x, &all, opts.hessian_step);
    let keep: Vec<bool> = (0..x.len()).map(|i| !boundary[i]).collect();
    let inv = inverse_on(&h, &keep).ok_or(Error::SingularInformation)?;
    let idx: Vec<usize> = tested
        .iter()
        .map(|n| spec.layout.index(n))
        .collect::<Result<_>>()?;
    let mut stat = 0.0;
    for &i in &idx {
        for &j in &idx {
            stat += grad[i] * inv[(i, j)] * grad[j];
        }
    }
    Ok(TestResult::chisq(stat, idx.len(), TestKind::Score))
}

/// Names of the shift parameters belonging to block kinds other than the
/// baseline; convenience for callers building nested fits.
pub fn effect_names(spec: &ModelSpec) -> Vec<String> {
    spec.layout
        .blocks()
        .iter()
        .filter(|b| matches!(b.kind, BlockKind::Shift | BlockKind::Scale))
        .flat_map(|b| spec.layout.names()[b.range()].to_vec())
        .collect()
}

/// Is the fit a random-intercept model?
pub fn has_random_intercept(spec: &ModelSpec) -> bool {
    matches!(spec.extension, Some(Extension::RandomIntercept { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventTime, RawColumn};
    use crate::formula::parse_formula;
    use proptest::prelude::*;

    fn spec(baseline: BaselineKind) -> ModelSpec {
        let times = (1..20)
            .map(|i| EventTime::exact(i as f64).unwrap())
            .collect();
        let w = (1..20).map(|i| (i % 2) as f64).collect();
        let ds = Dataset::from_columns(times, vec![("w".into(), RawColumn::Numeric(w))]).unwrap();
        let opts = BindOptions {
            baseline,
            ..Default::default()
        };
        bind(&parse_formula("y ~ w").unwrap(), &ds, &opts).unwrap()
    }

    proptest! {
        #[test]
        fn reparam_round_trip_and_jacobian(free in proptest::collection::vec(-2.0f64..2.0, 8), loglinear: bool) {
            let s = if loglinear { spec(BaselineKind::LogLinear) } else { spec(BaselineKind::Bernstein { order: 6 }) };
            let re = Reparam::new(&s);
            let free = &free[..s.n_params()];
            let p = re.to_params(free);
            prop_assert!(re.admissible(&p));
            let back = re.from_params(&p);
            for (a, b) in back.iter().zip(free) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            // Jacobian columns against central differences; pull_back is J'g
            let j = re.jacobian(free);
            let g: Vec<f64> = (0..p.len()).map(|i| 0.3 * i as f64 - 1.0).collect();
            let mut pulled = g.clone();
            re.pull_back(free, &mut pulled);
            for col in 0..free.len() {
                let mut up = free.to_vec();
                let mut dn = free.to_vec();
                up[col] += 1e-6;
                dn[col] -= 1e-6;
                let (pu, pd) = (re.to_params(&up), re.to_params(&dn));
                let mut jg = 0.0;
                for row in 0..p.len() {
                    let fd = (pu[row] - pd[row]) / 2e-6;
                    prop_assert!((fd - j[(row, col)]).abs() < 1e-6);
                    jg += j[(row, col)] * g[row];
                }
                prop_assert!((jg - pulled[col]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loglinear_slope_is_constrained_against_zero() {
        let s = spec(BaselineKind::LogLinear);
        let re = Reparam::new(&s);
        assert!(re.admissible(&[-5.0, 0.5, 0.0]));
        assert!(!re.admissible(&[-5.0, -0.5, 0.0]));
        assert_eq!(re.to_params(&[-5.0, 0.0, 1.0]), vec![-5.0, 1.0, 1.0]);
    }
}
