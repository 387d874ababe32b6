//! Log-likelihood contributions and analytic gradients.
//!
//! Parameters are passed in the original parametrization laid out by
//! [`ParamLayout`](crate::model::ParamLayout). The linear predictor of a row
//! at time `t` is
//! `z(t) = sqrt(exp(gamma'x)) h_s(t) + beta'x + sum_j x_j beta_j(t) + r`.

use crate::data::{Dataset, EventTime, Value};
use crate::error::{Error, Result};
use crate::exec::{reduce, Executor, Partial};
use crate::model::{EncodedRow, Extension, ModelSpec};
use crate::prelude::*;
use crate::special::{gauss_hermite, log1mexp, log_sum_exp, softplus};
use crate::transform::{dot, Link};

/// Magnitude of the objective penalty returned for invalid parameters.
pub const PENALTY: f64 = 1e10;

pub const DEFAULT_NODES: usize = 15;

const CHUNK_ROWS: usize = 256;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Error distribution of the transformed time: a link, or the cloglog link
/// mixed over a mean-one gamma frailty with variance `exp(log_sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Link(Link),
    GammaFrailty { log_sigma2: f64 },
}

impl Noise {
    pub fn log_sf(&self, z: f64) -> f64 {
        match *self {
            Self::Link(l) => l.log_sf(z),
            Self::GammaFrailty { log_sigma2: eta } => -(-eta).exp() * softplus(eta + z),
        }
    }

    pub fn log_cdf(&self, z: f64) -> f64 {
        match *self {
            Self::Link(l) => l.log_cdf(z),
            Self::GammaFrailty { .. } => log1mexp(self.log_sf(z)),
        }
    }

    pub fn log_pdf(&self, z: f64) -> f64 {
        match *self {
            Self::Link(l) => l.log_pdf(z),
            Self::GammaFrailty { log_sigma2: eta } => z - ((-eta).exp() + 1.0) * softplus(eta + z),
        }
    }

    pub fn dlog_pdf(&self, z: f64) -> f64 {
        match *self {
            Self::Link(l) => l.dlog_pdf(z),
            Self::GammaFrailty { log_sigma2: eta } => 1.0 - ((-eta).exp() + 1.0) * sigmoid(eta + z),
        }
    }

    fn dlog_sf_deta(&self, z: f64) -> f64 {
        match *self {
            Self::Link(_) => 0.0,
            Self::GammaFrailty { log_sigma2: eta } => {
                (-eta).exp() * (softplus(eta + z) - sigmoid(eta + z))
            }
        }
    }

    fn dlog_pdf_deta(&self, z: f64) -> f64 {
        match *self {
            Self::Link(_) => 0.0,
            Self::GammaFrailty { log_sigma2: eta } => {
                (-eta).exp() * softplus(eta + z) - ((-eta).exp() + 1.0) * sigmoid(eta + z)
            }
        }
    }

    pub fn sf(&self, z: f64) -> f64 {
        self.log_sf(z).exp()
    }

    /// `z` with `F(z) = p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        match *self {
            Self::Link(l) => l.quantile(p),
            Self::GammaFrailty { log_sigma2: eta } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidProbability(p));
                }
                // (1 + s e^z)^(-1/s) = 1 - p
                let s = eta.exp();
                Ok((-s * (-p).ln_1p()).exp_m1().ln() - eta)
            }
        }
    }
}

/// Log-probability of `(z_lo, z_hi]` with derivatives; `None` bounds are
/// `-inf` / `+inf`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowEval {
    pub ll: f64,
    pub d_lo: f64,
    pub d_hi: f64,
    pub d_eta: f64,
}

/// Returns `Err(violation)` when the window has nonpositive width.
pub fn log_window(
    noise: &Noise,
    z_lo: Option<f64>,
    z_hi: Option<f64>,
) -> core::result::Result<WindowEval, f64> {
    match (z_lo, z_hi) {
        (None, None) => Ok(WindowEval::default()),
        (Some(lo), None) => {
            let ll = noise.log_sf(lo);
            Ok(WindowEval {
                ll,
                d_lo: -(noise.log_pdf(lo) - ll).exp(),
                d_hi: 0.0,
                d_eta: noise.dlog_sf_deta(lo),
            })
        }
        (None, Some(hi)) => {
            let ll = noise.log_cdf(hi);
            Ok(WindowEval {
                ll,
                d_lo: 0.0,
                d_hi: (noise.log_pdf(hi) - ll).exp(),
                d_eta: -(noise.log_sf(hi) - ll).exp() * noise.dlog_sf_deta(hi),
            })
        }
        (Some(lo), Some(hi)) => {
            if !(hi > lo) {
                return Err(lo - hi);
            }
            let (s_lo, s_hi) = (noise.log_sf(lo), noise.log_sf(hi));
            let f_hi = noise.log_cdf(hi);
            let mut ll = if f_hi < s_lo {
                f_hi + log1mexp(noise.log_cdf(lo) - f_hi)
            } else {
                s_lo + log1mexp(s_hi - s_lo)
            };
            if !ll.is_finite() {
                // mass lost to cancellation: midpoint density times width
                let mid = 0.5 * (lo + hi);
                ll = noise.log_pdf(mid) + (hi - lo).ln();
            }
            Ok(WindowEval {
                ll,
                d_lo: -(noise.log_pdf(lo) - ll).exp(),
                d_hi: (noise.log_pdf(hi) - ll).exp(),
                d_eta: (s_lo - ll).exp() * noise.dlog_sf_deta(lo)
                    - (s_hi - ll).exp() * noise.dlog_sf_deta(hi),
            })
        }
    }
}

/// Basis values `a(t)` and (for density evaluations) `a'(t)` at one time.
#[derive(Debug, Clone, PartialEq)]
struct Point {
    a: Vec<f64>,
    da: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Response {
    Exact(Point),
    Window(Option<Point>, Option<Point>),
}

#[derive(Debug, Clone, PartialEq)]
struct RowDesign {
    enc: EncodedRow,
    response: Response,
    truncation: Option<(Option<Point>, Option<Point>)>,
}

/// Slices of a flat parameter vector by role.
struct View<'p> {
    baseline: Vec<&'p [f64]>,
    tv: Vec<&'p [f64]>,
    beta: &'p [f64],
    gamma: &'p [f64],
    noise: Noise,
    log_variance: Option<f64>,
}

/// Index ranges needed to scatter row gradients.
#[derive(Debug, Clone)]
struct Offsets {
    baseline: Vec<usize>,
    tv: Vec<usize>,
    beta: usize,
    gamma: usize,
    log_variance: Option<usize>,
}

/// A model bound to a dataset with all basis evaluations precomputed.
#[derive(Debug, Clone)]
pub struct Design {
    spec: ModelSpec,
    rows: Vec<RowDesign>,
    clusters: Option<Vec<Vec<usize>>>,
    offsets: Offsets,
    nodes: usize,
}

/// Output of a single row evaluation.
struct RowOut {
    ll: f64,
    dll_dr: f64,
}

impl Design {
    pub fn new(spec: &ModelSpec, ds: &Dataset) -> Result<Self> {
        let encoded = spec.encode_dataset(ds)?;
        let point = |t: f64, with_deriv: bool| -> Result<Point> {
            let (a, da) = spec.basis.values(t)?;
            Ok(Point {
                a,
                da: if with_deriv { da } else { Vec::new() },
            })
        };
        let window_point = |t: f64, infinite_at: f64| -> Result<Option<Point>> {
            if t == infinite_at || !t.is_finite() {
                Ok(None)
            } else {
                point(t, false).map(Some)
            }
        };
        let mut rows = Vec::with_capacity(ds.len());
        for (obs, enc) in ds.rows().iter().zip(encoded) {
            let response = match obs.time {
                EventTime::Exact(t) => Response::Exact(point(t, true)?),
                other => {
                    let (lo, hi) = other.window();
                    Response::Window(window_point(lo, 0.0)?, window_point(hi, f64::INFINITY)?)
                }
            };
            let truncation = match &obs.truncation {
                Some(tr) if !tr.is_trivial() => Some((
                    window_point(tr.left, 0.0)?,
                    window_point(tr.right, f64::INFINITY)?,
                )),
                _ => None,
            };
            rows.push(RowDesign {
                enc,
                response,
                truncation,
            });
        }
        let clusters = match &spec.extension {
            Some(Extension::RandomIntercept { group }) => {
                let idx = ds.column_index(group)?;
                let n_levels = ds.columns()[idx].levels().len();
                let mut members = vec![Vec::new(); n_levels];
                for (i, obs) in ds.rows().iter().enumerate() {
                    if let Value::Level(l) = obs.values[idx] {
                        members[l as usize].push(i);
                    }
                }
                members.retain(|m| !m.is_empty());
                Some(members)
            }
            _ => None,
        };
        let layout = &spec.layout;
        let offsets = Offsets {
            baseline: (0..spec.n_strata())
                .map(|s| layout.baseline(s).start)
                .collect(),
            tv: (0..spec.time_varying.len())
                .map(|j| layout.time_varying(j).start)
                .collect(),
            beta: layout.shift().start,
            gamma: layout.scale().start,
            log_variance: layout.log_variance(),
        };
        Ok(Self {
            spec: spec.clone(),
            rows,
            clusters,
            offsets,
            nodes: DEFAULT_NODES,
        })
    }

    /// Number of Gauss-Hermite nodes for random-intercept integration.
    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes.max(1);
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub fn clusters(&self) -> Option<&[Vec<usize>]> {
        self.clusters.as_deref()
    }

    fn view<'p>(&self, params: &'p [f64]) -> View<'p> {
        let layout = &self.spec.layout;
        let log_variance = layout.log_variance().map(|i| params[i]);
        let noise = match self.spec.extension {
            Some(Extension::GammaFrailty) => Noise::GammaFrailty {
                log_sigma2: log_variance.unwrap_or(0.0),
            },
            _ => Noise::Link(self.spec.link),
        };
        View {
            baseline: (0..self.spec.n_strata())
                .map(|s| &params[layout.baseline(s)])
                .collect(),
            tv: (0..self.spec.time_varying.len())
                .map(|j| &params[layout.time_varying(j)])
                .collect(),
            beta: &params[layout.shift()],
            gamma: &params[layout.scale()],
            noise,
            log_variance,
        }
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// Log-likelihood of row `i` at random intercept `r`; adds
    /// `weight * d ll / d params` into `grad` when given.
    fn eval_row(&self, v: &View, i: usize, r: f64, grad: Option<(&mut [f64], f64)>) -> RowOut {
        let row = &self.rows[i];
        let enc = &row.enc;
        let theta = v.baseline[enc.stratum];
        let lin = dot(v.beta, &enc.shift) + r;
        let mult = (0.5 * dot(v.gamma, &enc.scale)).exp();
        let z_at = |p: &Point| {
            let mut z = mult * dot(&p.a, theta) + lin;
            for (x, th) in enc.time_varying.iter().zip(&v.tv) {
                z += x * dot(&p.a, th);
            }
            z
        };
        let zp_at = |p: &Point| {
            let mut zp = mult * dot(&p.da, theta);
            for (x, th) in enc.time_varying.iter().zip(&v.tv) {
                zp += x * dot(&p.da, th);
            }
            zp
        };

        // (point, d ll/dz, d ll/dz') pairs for the gradient pass
        let mut terms: [(Option<&Point>, f64, f64); 4] = [(None, 0.0, 0.0); 4];
        let mut d_eta = 0.0;
        let mut ll;
        match &row.response {
            Response::Exact(p) => {
                let z = z_at(p);
                let zp = zp_at(p);
                if !(zp > 0.0) || !z.is_finite() {
                    return invalid(-zp.min(0.0));
                }
                ll = v.noise.log_pdf(z) + zp.ln();
                terms[0] = (Some(p), v.noise.dlog_pdf(z), 1.0 / zp);
                d_eta += v.noise.dlog_pdf_deta(z);
            }
            Response::Window(lo, hi) => {
                let w = match log_window(&v.noise, lo.as_ref().map(z_at), hi.as_ref().map(z_at)) {
                    Ok(w) => w,
                    Err(violation) => return invalid(violation),
                };
                ll = w.ll;
                terms[0] = (lo.as_ref(), w.d_lo, 0.0);
                terms[1] = (hi.as_ref(), w.d_hi, 0.0);
                d_eta += w.d_eta;
            }
        }
        if let Some((lo, hi)) = &row.truncation {
            let w = match log_window(&v.noise, lo.as_ref().map(z_at), hi.as_ref().map(z_at)) {
                Ok(w) => w,
                Err(violation) => return invalid(violation),
            };
            ll -= w.ll;
            terms[2] = (lo.as_ref(), -w.d_lo, 0.0);
            terms[3] = (hi.as_ref(), -w.d_hi, 0.0);
            d_eta -= w.d_eta;
        }
        if !ll.is_finite() {
            return invalid(0.0);
        }

        let mut dll_dr = 0.0;
        for (p, gz, _) in &terms {
            if p.is_some() {
                dll_dr += gz;
            }
        }
        if let Some((g, weight)) = grad {
            let o = &self.offsets;
            let base = o.baseline[enc.stratum];
            for (p, gz, gzp) in terms.iter() {
                let Some(p) = p else { continue };
                let (gz, gzp) = (gz * weight, gzp * weight);
                let has_d = !p.da.is_empty() && gzp != 0.0;
                for (k, a) in p.a.iter().enumerate() {
                    g[base + k] += gz * mult * a;
                }
                if has_d {
                    for (k, da) in p.da.iter().enumerate() {
                        g[base + k] += gzp * mult * da;
                    }
                }
                for (j, x) in enc.time_varying.iter().enumerate() {
                    let off = o.tv[j];
                    for (k, a) in p.a.iter().enumerate() {
                        g[off + k] += gz * x * a;
                    }
                    if has_d {
                        for (k, da) in p.da.iter().enumerate() {
                            g[off + k] += gzp * x * da;
                        }
                    }
                }
                for (k, x) in enc.shift.iter().enumerate() {
                    g[o.beta + k] += gz * x;
                }
                if !enc.scale.is_empty() {
                    let mut dg = gz * 0.5 * mult * dot(&p.a, theta);
                    if has_d {
                        dg += gzp * 0.5 * mult * dot(&p.da, theta);
                    }
                    for (k, x) in enc.scale.iter().enumerate() {
                        g[o.gamma + k] += dg * x;
                    }
                }
            }
            if let (Some(idx), Noise::GammaFrailty { .. }) = (o.log_variance, v.noise) {
                g[idx] += weight * d_eta;
            }
        }
        RowOut { ll, dll_dr }
    }

    /// Negative log-likelihood and (optionally) its gradient.
    pub fn eval(
        &self,
        params: &[f64],
        exec: &dyn Executor,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_len(params)?;
        let want_grad = grad.is_some();
        let p = params.len();
        if let Some(g) = &grad {
            if g.len() != p {
                return Err(Error::LengthMismatch {
                    expected: p,
                    actual: g.len(),
                });
            }
        }
        let parts = match &self.clusters {
            None => {
                let n_tasks = self.rows.len().div_ceil(CHUNK_ROWS);
                exec.run(n_tasks, &|task| {
                    let v = self.view(params);
                    let mut part = Partial {
                        value: 0.0,
                        grad: vec![0.0; if want_grad { p } else { 0 }],
                    };
                    let end = ((task + 1) * CHUNK_ROWS).min(self.rows.len());
                    for i in task * CHUNK_ROWS..end {
                        let out = if want_grad {
                            self.eval_row(&v, i, 0.0, Some((&mut part.grad, -1.0)))
                        } else {
                            self.eval_row(&v, i, 0.0, None)
                        };
                        part.value -= out.ll;
                    }
                    part
                })
            }
            Some(clusters) => {
                let per_task = 8;
                let n_tasks = clusters.len().div_ceil(per_task);
                let (x, w) = gauss_hermite(self.nodes);
                exec.run(n_tasks, &|task| {
                    let mut part = Partial {
                        value: 0.0,
                        grad: vec![0.0; if want_grad { p } else { 0 }],
                    };
                    let end = ((task + 1) * per_task).min(clusters.len());
                    for members in &clusters[task * per_task..end] {
                        let g = want_grad.then_some(&mut part.grad[..]);
                        part.value -= self.cluster_ll(params, members, &x, &w, g);
                    }
                    part
                })
            }
        };
        Ok(reduce(parts, grad))
    }

    pub fn nll(&self, params: &[f64], exec: &dyn Executor) -> Result<f64> {
        self.eval(params, exec, None)
    }

    pub fn nll_grad(&self, params: &[f64], exec: &dyn Executor, grad: &mut [f64]) -> Result<f64> {
        self.eval(params, exec, Some(grad))
    }

    /// Per-row log-likelihood contributions (random intercept fixed at 0).
    pub fn row_loglik(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.check_len(params)?;
        let v = self.view(params);
        Ok((0..self.rows.len())
            .map(|i| self.eval_row(&v, i, 0.0, None).ll)
            .collect())
    }

    /// Per-row score vectors `d ll_i / d params` (random intercept fixed at 0).
    pub fn row_scores(&self, params: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(params)?;
        let v = self.view(params);
        Ok((0..self.rows.len())
            .map(|i| {
                let mut g = vec![0.0; params.len()];
                self.eval_row(&v, i, 0.0, Some((&mut g, 1.0)));
                g
            })
            .collect())
    }

    /// Negative log marginal likelihood of one cluster, integrating the
    /// random intercept with adaptive Gauss-Hermite quadrature.
    pub fn cluster_nll(&self, params: &[f64], members: &[usize]) -> Result<f64> {
        self.check_len(params)?;
        if self.spec.layout.log_variance().is_none() || self.clusters.is_none() {
            return Err(Error::InvalidArgument(
                "model has no random intercept".into(),
            ));
        }
        let (x, w) = gauss_hermite(self.nodes);
        let ll = self.cluster_ll(params, members, &x, &w, None);
        if !ll.is_finite() || ll <= -PENALTY {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        Ok(-ll)
    }

    fn cluster_ll(
        &self,
        params: &[f64],
        members: &[usize],
        x: &[f64],
        w: &[f64],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let v = self.view(params);
        let idx = self
            .offsets
            .log_variance
            .expect("random intercept has a variance parameter");
        let tau = (0.5 * v.log_variance.unwrap_or(0.0)).exp();
        let mut sum_ll = |u: f64| -> (f64, f64) {
            let mut ll = 0.0;
            let mut dr = 0.0;
            for &i in members {
                let out = self.eval_row(&v, i, tau * u, None);
                ll += out.ll;
                dr += out.dll_dr;
            }
            (ll, dr)
        };
        // log integrand g(u) = sum ll_i(tau u) - u^2/2 - log sqrt(2 pi)
        let log_norm = 0.918_938_533_204_672_8;
        let gprime = |u: f64, sum_ll: &mut dyn FnMut(f64) -> (f64, f64)| tau * sum_ll(u).1 - u;
        let mut u = 0.0;
        let mut curvature = -1.0;
        for _ in 0..50 {
            let g1 = gprime(u, &mut sum_ll);
            let eps = 1e-4;
            let g2 = (gprime(u + eps, &mut sum_ll) - gprime(u - eps, &mut sum_ll)) / (2.0 * eps);
            curvature = if g2.is_finite() && g2 < -1e-8 {
                g2
            } else {
                -1.0
            };
            if !g1.is_finite() {
                break;
            }
            let step = (-g1 / curvature).clamp(-2.0, 2.0);
            u += step;
            if step.abs() < 1e-10 {
                break;
            }
        }
        let eps = 1e-4;
        let g2 = (gprime(u + eps, &mut sum_ll) - gprime(u - eps, &mut sum_ll)) / (2.0 * eps);
        if g2.is_finite() && g2 < -1e-8 {
            curvature = g2;
        }
        let scale = core::f64::consts::SQRT_2 / (-curvature).sqrt();

        let k = x.len();
        let mut log_terms = vec![0.0; k];
        let mut nodes = vec![0.0; k];
        for j in 0..k {
            let uj = u + scale * x[j];
            nodes[j] = uj;
            let (ll, _) = sum_ll(uj);
            log_terms[j] = w[j].ln() + x[j] * x[j] + scale.ln() + ll - 0.5 * uj * uj - log_norm;
        }
        let total = log_sum_exp(&log_terms);
        if !total.is_finite() {
            return -PENALTY;
        }
        if let Some(g) = grad {
            for j in 0..k {
                let weight = (log_terms[j] - total).exp();
                if weight < 1e-300 {
                    continue;
                }
                let mut dr = 0.0;
                for &i in members {
                    dr += self
                        .eval_row(&v, i, tau * nodes[j], Some((&mut *g, -weight)))
                        .dll_dr;
                }
                // d/d log(tau2) of ll(tau u) = u dll/dr * tau / 2
                g[idx] -= weight * dr * nodes[j] * tau * 0.5;
            }
        }
        total
    }

    /// `(z, z')` for an encoded row at time `t`.
    pub fn trafo(&self, params: &[f64], enc: &EncodedRow, t: f64) -> Result<(f64, f64)> {
        trafo(&self.spec, params, enc, t)
    }
}

fn invalid(violation: f64) -> RowOut {
    RowOut {
        ll: -PENALTY * (1.0 + violation.abs().min(1e6)),
        dll_dr: 0.0,
    }
}

/// `(z(t), z'(t))` for a row under the given parameters (random intercept 0).
pub fn trafo(spec: &ModelSpec, params: &[f64], enc: &EncodedRow, t: f64) -> Result<(f64, f64)> {
    if params.len() != spec.n_params() {
        return Err(Error::LengthMismatch {
            expected: spec.n_params(),
            actual: params.len(),
        });
    }
    let layout = &spec.layout;
    let (a, da) = spec.basis.values(t)?;
    let theta = &params[layout.baseline(enc.stratum)];
    let mult = (0.5 * dot(&params[layout.scale()], &enc.scale)).exp();
    let mut z = mult * dot(&a, theta) + dot(&params[layout.shift()], &enc.shift);
    let mut zp = mult * dot(&da, theta);
    for (j, x) in enc.time_varying.iter().enumerate() {
        let th = &params[layout.time_varying(j)];
        z += x * dot(&a, th);
        zp += x * dot(&da, th);
    }
    Ok((z, zp))
}

/// Noise distribution implied by a spec and its parameters.
pub fn noise(spec: &ModelSpec, params: &[f64]) -> Noise {
    match (&spec.extension, spec.layout.log_variance()) {
        (Some(Extension::GammaFrailty), Some(i)) => Noise::GammaFrailty {
            log_sigma2: params[i],
        },
        _ => Noise::Link(spec.link),
    }
}

pub fn total_nll(params: &[f64], spec: &ModelSpec, ds: &Dataset) -> Result<f64> {
    Design::new(spec, ds)?.nll(params, &crate::exec::Sequential)
}

pub fn total_nll_grad(params: &[f64], spec: &ModelSpec, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; params.len()];
    let v = Design::new(spec, ds)?.nll_grad(params, &crate::exec::Sequential, &mut g)?;
    Ok((v, g))
}
