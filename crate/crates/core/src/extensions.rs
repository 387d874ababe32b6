//! Dependent censoring through a Gaussian copula, frailty and random-intercept
//! helpers, and marginal summaries of clustered fits.

use core::f64::consts::{FRAC_2_PI, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CompetingStatus, Dataset, EventTime};
use crate::error::{Error, Result};
use crate::estimate::{fit_with, optimize, Convergence, FitOptions, FittedModel, Reparam, Vcov};
use crate::exec::{reduce, Executor, Partial, Sequential};
use crate::formula::Formula;
use crate::likelihood::Noise;
use crate::model::{bind, BaselineKind, BindOptions, Extension, ModelSpec};
use crate::prelude::*;
use crate::special::{
    bvn_cdf, gauss_hermite_normal, log_norm_cdf, norm_hazard_lower, norm_quantile,
    norm_quantile_tails,
};
use crate::transform::{dot, Link};

const CHUNK_ROWS: usize = 256;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Probabilists' Gauss-Hermite nodes used to integrate out a random intercept
/// in predictions.
pub const MARGINAL_NODES: usize = 41;

/// Copula correlation `-xi / sqrt(1 + xi^2)`.
pub fn rho(xi: f64) -> f64 {
    -xi / xi.hypot(1.0)
}

fn drho_dxi(xi: f64) -> f64 {
    -(1.0 + xi * xi).powf(-1.5)
}

/// Kendall's tau of the Gaussian copula with parameter `xi`.
pub fn kendall_tau(xi: f64) -> f64 {
    FRAC_2_PI * rho(xi).asin()
}

/// Marginal hazard ratio `exp(beta / sqrt(lambda^2 + 1))`.
pub fn marginal_hr(beta: f64, lambda: f64) -> f64 {
    (beta / lambda.hypot(1.0)).exp()
}

/// Mean-one gamma frailty mixed into the cloglog link.
pub fn gamma_frailty(sigma2: f64) -> Result<Noise> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "frailty variance {sigma2} must be positive"
        )));
    }
    Ok(Noise::GammaFrailty {
        log_sigma2: sigma2.ln(),
    })
}

/// Marginal survivor of a random-intercept fit, `E_r S(t | r)` with
/// `r ~ N(0, tau2)`.
pub fn marginalize_survivor(
    fm: &FittedModel,
    enc: &crate::model::EncodedRow,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let Some(Extension::RandomIntercept { .. }) = fm.spec.extension else {
        return Err(Error::InvalidArgument(
            "marginal survivor needs a random-intercept fit".into(),
        ));
    };
    let i = fm
        .spec
        .layout
        .log_variance()
        .expect("random-intercept layout");
    let tau = (0.5 * fm.params[i]).exp();
    let (nodes, weights) = gauss_hermite_normal(MARGINAL_NODES);
    let noise = fm.noise();
    grid.iter()
        .map(|&t| {
            let z = fm.trafo(enc, t)?.0;
            Ok(nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * noise.sf(z + tau * x))
                .sum())
        })
        .collect()
}

/// Marginals of the copula model: a Bernstein cloglog model for the event
/// time and a Weibull (log-linear cloglog) model for the dependent censoring
/// time, both with the same shift terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub event: ModelSpec,
    pub censoring: ModelSpec,
    names: Vec<String>,
}

fn margin_data(ds: &Dataset, observed: CompetingStatus) -> Result<Dataset> {
    let times: Vec<EventTime> = ds
        .rows()
        .iter()
        .map(|o| {
            let t = copula_time(&o.time)?;
            if o.status == Some(observed) {
                EventTime::exact(t)
            } else {
                EventTime::right(t)
            }
        })
        .collect::<Result<_>>()?;
    ds.with_times(&times)
}

/// Range of the times at which a margin's own event is observed, falling back
/// to the full range when fewer than two distinct such times exist.
fn observed_range(ds: &Dataset, observed: CompetingStatus) -> Option<(f64, f64)> {
    let (lo, hi) = ds
        .rows()
        .iter()
        .filter(|o| o.status == Some(observed))
        .filter_map(|o| copula_time(&o.time).ok())
        .filter(|t| *t > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t), hi.max(t))
        });
    (lo < hi).then_some((lo, hi))
}

fn copula_time(time: &EventTime) -> Result<f64> {
    match *time {
        EventTime::Exact(t) | EventTime::RightCensored(t) => Ok(t),
        _ => Err(Error::UnsupportedCensoring(
            "copula rows need a single observed time".into(),
        )),
    }
}

impl CopulaModel {
    pub fn bind(formula: &Formula, ds: &Dataset, order: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, o) in ds.rows().iter().enumerate() {
            if o.status.is_none() {
                return Err(Error::MalformedRecord {
                    row: Some(i),
                    reason: "missing competing status".into(),
                });
            }
            copula_time(&o.time)?;
        }
        if !formula.left.is_empty() || !formula.scale.is_empty() {
            return Err(Error::Role {
                var: formula
                    .left
                    .first()
                    .or(formula.scale.first())
                    .cloned()
                    .unwrap_or_default(),
                message: "copula margins take shift terms only".into(),
            });
        }
        let margin = |observed: CompetingStatus, opts: &BindOptions| -> Result<ModelSpec> {
            let spec = bind(formula, &margin_data(ds, observed)?, opts)?;
            match observed_range(ds, observed) {
                Some((lo, hi)) => spec.with_support(lo, hi),
                None => Ok(spec),
            }
        };
        let event = margin(
            CompetingStatus::EventOfInterest,
            &BindOptions {
                baseline: BaselineKind::Bernstein { order },
                log_first: true,
                ..Default::default()
            },
        )?;
        let censoring = margin(
            CompetingStatus::DependentCensoring,
            &BindOptions {
                baseline: BaselineKind::LogLinear,
                ..Default::default()
            },
        )?;
        let mut names: Vec<String> = event
            .layout
            .names()
            .iter()
            .map(|n| format!("T:{n}"))
            .collect();
        names.extend(censoring.layout.names().iter().map(|n| format!("C:{n}")));
        names.push("xi".into());
        Ok(Self {
            event,
            censoring,
            names,
        })
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64], f64) {
        let k = self.event.n_params();
        let m = self.censoring.n_params();
        (&params[..k], &params[k..k + m], params[k + m])
    }

    /// Sign applied to a parameter when reporting (log-time orientation for
    /// the Weibull margin's shift terms).
    fn sign(&self, i: usize) -> f64 {
        let k = self.event.n_params();
        if i >= k
            && i < k + self.censoring.n_params()
            && self.censoring.layout.shift().contains(&(i - k))
        {
            self.censoring.reported_shift_sign()
        } else {
            1.0
        }
    }
}

/// Basis values of one margin at a row's time.
#[derive(Debug, Clone)]
struct MarginPoint {
    a: Vec<f64>,
    da: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CopulaRow {
    status: CompetingStatus,
    shift: Vec<f64>,
    event: MarginPoint,
    censoring: MarginPoint,
}

/// Copula model bound to a dataset.
#[derive(Debug, Clone)]
pub struct CopulaDesign {
    model: CopulaModel,
    rows: Vec<CopulaRow>,
}

/// Value and derivatives of the transformation of one margin.
#[derive(Debug, Clone, Copy)]
struct Margin {
    z: f64,
    dz: f64,
    log_sf: f64,
    log_pdf: f64,
    /// Normal score `Phi^-1(F(z))`.
    score: f64,
    /// `d score / d z`.
    dscore: f64,
}

impl Margin {
    fn new(z: f64, dz: f64) -> Self {
        let link = Link::MinExtremeValue;
        let (log_cdf, log_sf, log_pdf) = (link.log_cdf(z), link.log_sf(z), link.log_pdf(z));
        let score = norm_quantile_tails(log_cdf, log_sf);
        let dscore = (log_pdf + 0.5 * score * score + LN_SQRT_2PI).exp();
        Self {
            z,
            dz,
            log_sf,
            log_pdf,
            score,
            dscore,
        }
    }
}

/// Log-likelihood of one row and its derivatives with respect to the event
/// margin `(z, z')`, the censoring margin `(z, z')` and `rho`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CopulaTerm {
    pub ll: f64,
    pub d_event: (f64, f64),
    pub d_censoring: (f64, f64),
    pub d_rho: f64,
}

/// Contribution of an observed margin (`own`) with the other margin still
/// at risk: `log f(t) + log P(other > t | own = t)`.
fn observed_branch(own: &Margin, other: &Margin, rho: f64) -> (f64, f64, f64, f64, f64) {
    let s = (1.0 - rho * rho).sqrt();
    let (u, v) = (own.score, other.score);
    let w = (rho * u - v) / s;
    let mills = norm_hazard_lower(w);
    let ll = own.log_pdf + own.dz.ln() + log_norm_cdf(w);
    let d_own = Link::MinExtremeValue.dlog_pdf(own.z) + mills * rho / s * own.dscore;
    let d_own_prime = 1.0 / own.dz;
    let d_other = -mills / s * other.dscore;
    let d_rho = mills * (u - rho * v) / (s * s * s);
    (ll, d_own, d_own_prime, d_other, d_rho)
}

fn not_increasing() -> Error {
    Error::InvalidParameter("transformation is not increasing".into())
}

/// Per-row copula log-likelihood.
pub fn copula_term(
    status: CompetingStatus,
    event: (f64, f64),
    censoring: (f64, f64),
    rho: f64,
) -> Result<CopulaTerm> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "copula correlation {rho} outside (-1, 1)"
        )));
    }
    let e = Margin::new(event.0, event.1);
    let c = Margin::new(censoring.0, censoring.1);
    let term = match status {
        CompetingStatus::EventOfInterest if !(e.dz > 0.0) => return Err(not_increasing()),
        CompetingStatus::DependentCensoring if !(c.dz > 0.0) => return Err(not_increasing()),
        CompetingStatus::EventOfInterest => {
            let (ll, de, dep, dc, dr) = observed_branch(&e, &c, rho);
            CopulaTerm {
                ll,
                d_event: (de, dep),
                d_censoring: (dc, 0.0),
                d_rho: dr,
            }
        }
        CompetingStatus::DependentCensoring => {
            let (ll, dc, dcp, de, dr) = observed_branch(&c, &e, rho);
            CopulaTerm {
                ll,
                d_event: (de, 0.0),
                d_censoring: (dc, dcp),
                d_rho: dr,
            }
        }
        CompetingStatus::AdministrativeCensoring => {
            // P(T > a, C > a) = Phi2(-u, -v; rho)
            let (u, v) = (e.score, c.score);
            let s2 = 1.0 - rho * rho;
            let s = s2.sqrt();
            let joint = if rho == 0.0 {
                // exact factorization; avoids losing the product to rounding
                Ok(e.log_sf + c.log_sf)
            } else {
                let p = bvn_cdf(-u, -v, rho);
                if p > 0.0 {
                    Ok(p.ln())
                } else {
                    Err(Error::InvalidParameter("zero joint survival mass".into()))
                }
            }?;
            let log_phi = |x: f64| -0.5 * x * x - LN_SQRT_2PI;
            let du = -(log_phi(u) + log_norm_cdf((rho * u - v) / s) - joint).exp();
            let dv = -(log_phi(v) + log_norm_cdf((rho * v - u) / s) - joint).exp();
            let density =
                (-(u * u - 2.0 * rho * u * v + v * v) / (2.0 * s2)).exp() / (2.0 * PI * s);
            CopulaTerm {
                ll: joint,
                d_event: (du * e.dscore, 0.0),
                d_censoring: (dv * c.dscore, 0.0),
                d_rho: density / joint.exp(),
            }
        }
    };
    if !term.ll.is_finite() {
        return Err(Error::InvalidParameter(
            "non-finite copula contribution".into(),
        ));
    }
    Ok(term)
}

impl CopulaDesign {
    pub fn new(model: &CopulaModel, ds: &Dataset) -> Result<Self> {
        let shifts = model.event.encode_dataset(ds)?;
        let mut rows = Vec::with_capacity(ds.len());
        for (o, enc) in ds.rows().iter().zip(shifts) {
            let t = copula_time(&o.time)?;
            let point = |spec: &ModelSpec| -> Result<MarginPoint> {
                let (a, da) = spec.basis.values(t)?;
                Ok(MarginPoint { a, da })
            };
            rows.push(CopulaRow {
                status: o.status.ok_or_else(|| Error::MalformedRecord {
                    row: None,
                    reason: "missing competing status".into(),
                })?,
                shift: enc.shift,
                event: point(&model.event)?,
                censoring: point(&model.censoring)?,
            });
        }
        Ok(Self {
            model: model.clone(),
            rows,
        })
    }

    pub fn model(&self) -> &CopulaModel {
        &self.model
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn margin_z(
        point: &MarginPoint,
        spec: &ModelSpec,
        params: &[f64],
        shift: &[f64],
    ) -> (f64, f64) {
        let theta = &params[spec.layout.baseline(0)];
        let beta = &params[spec.layout.shift()];
        (
            dot(&point.a, theta) + dot(beta, shift),
            dot(&point.da, theta),
        )
    }

    /// Negative log-likelihood; writes the gradient when `grad` is given.
    pub fn eval(
        &self,
        params: &[f64],
        exec: &dyn Executor,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let n = self.model.n_params();
        if params.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: params.len(),
            });
        }
        let (pe, pc, xi) = self.model.split(params);
        let r = rho(xi);
        let want_grad = grad.is_some();
        let (ev, ce) = (&self.model.event, &self.model.censoring);
        let k = ev.n_params();
        let chunks = self.rows.len().div_ceil(CHUNK_ROWS);
        let failed = core::sync::atomic::AtomicBool::new(false);
        let task = |c: usize| -> Partial {
            let mut part = Partial {
                value: 0.0,
                grad: if want_grad { vec![0.0; n] } else { Vec::new() },
            };
            for row in &self.rows[c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(self.rows.len())] {
                let (ze, zpe) = Self::margin_z(&row.event, ev, pe, &row.shift);
                let (zc, zpc) = Self::margin_z(&row.censoring, ce, pc, &row.shift);
                let Ok(term) = copula_term(row.status, (ze, zpe), (zc, zpc), r) else {
                    failed.store(true, core::sync::atomic::Ordering::Relaxed);
                    return part;
                };
                part.value -= term.ll;
                if want_grad {
                    let g = &mut part.grad;
                    scatter(g, 0, ev, row, &row.event, term.d_event);
                    scatter(g, k, ce, row, &row.censoring, term.d_censoring);
                    g[n - 1] -= term.d_rho * drho_dxi(xi);
                }
            }
            part
        };
        let parts = exec.run(chunks, &task);
        if failed.load(core::sync::atomic::Ordering::Relaxed) {
            return Err(Error::InvalidParameter(
                "copula likelihood undefined at these parameters".into(),
            ));
        }
        Ok(reduce(parts, grad))
    }

    pub fn nll(&self, params: &[f64], exec: &dyn Executor) -> Result<f64> {
        self.eval(params, exec, None)
    }

    pub fn nll_grad(&self, params: &[f64], exec: &dyn Executor, grad: &mut [f64]) -> Result<f64> {
        self.eval(params, exec, Some(grad))
    }
}

/// Add `-dll` of one margin to the gradient of the negative log-likelihood.
fn scatter(
    g: &mut [f64],
    offset: usize,
    spec: &ModelSpec,
    row: &CopulaRow,
    point: &MarginPoint,
    d: (f64, f64),
) {
    for (k, i) in spec.layout.baseline(0).enumerate() {
        g[offset + i] -= d.0 * point.a[k] + d.1 * point.da[k];
    }
    for (k, i) in spec.layout.shift().enumerate() {
        g[offset + i] -= d.0 * row.shift[k];
    }
}

/// Fitted copula model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaFit {
    pub model: CopulaModel,
    pub params: Vec<f64>,
    pub vcov: Vcov,
    pub loglik: f64,
    pub n_obs: usize,
    pub convergence: Convergence,
}

impl CopulaFit {
    pub fn names(&self) -> &[String] {
        self.model.names()
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        let i = self.model.index(name)?;
        Ok(self.model.sign(i) * self.params[i])
    }

    pub fn coefs(&self) -> Vec<(String, f64)> {
        self.names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), self.model.sign(i) * self.params[i]))
            .collect()
    }

    pub fn xi(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn kendall_tau(&self) -> f64 {
        kendall_tau(self.xi())
    }

    pub fn vcov_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.params.len();
        match &self.vcov {
            Vcov::Available(v) => Ok(DMatrix::from_row_slice(n, n, v)),
            Vcov::Singular => Err(Error::VcovUnavailable(
                "information matrix is singular".into(),
            )),
            Vcov::Invalidated => Err(Error::VcovUnavailable("coefficients were edited".into())),
        }
    }

    pub fn std_error(&self, name: &str) -> Result<f64> {
        let i = self.model.index(name)?;
        Ok(self.vcov_matrix()?[(i, i)].max(0.0).sqrt())
    }

    pub fn wald_ci(&self, name: &str, level: f64) -> Result<(f64, f64)> {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::InvalidProbability(level));
        }
        let (est, se) = (self.coef(name)?, self.std_error(name)?);
        let q = if level == 0.0 {
            0.0
        } else {
            norm_quantile(0.5 * (1.0 + level))
        };
        Ok((est - q * se, est + q * se))
    }
}

/// Independent-censoring fits of the two margins; at `xi = 0` the copula
/// log-likelihood is their sum.
pub fn fit_margins(
    model: &CopulaModel,
    ds: &Dataset,
    opts: &FitOptions,
    exec: &dyn Executor,
) -> Result<(FittedModel, FittedModel)> {
    let inner = FitOptions {
        start: None,
        fixed: Vec::new(),
        ..opts.clone()
    };
    let event = fit_with(
        &model.event,
        &margin_data(ds, CompetingStatus::EventOfInterest)?,
        &inner,
        exec,
    )?;
    let censoring = fit_with(
        &model.censoring,
        &margin_data(ds, CompetingStatus::DependentCensoring)?,
        &inner,
        exec,
    )?;
    Ok((event, censoring))
}

pub fn fit_copula(formula: &Formula, ds: &Dataset, opts: &FitOptions) -> Result<CopulaFit> {
    fit_copula_with(formula, ds, opts, &Sequential)
}

/// Joint maximum likelihood over both margins and `xi`, started from the
/// independent-censoring fits with `xi = 0`. Fails when no row is dependently
/// censored, since neither the censoring margin nor `xi` is then identified.
pub fn fit_copula_with(
    formula: &Formula,
    ds: &Dataset,
    opts: &FitOptions,
    exec: &dyn Executor,
) -> Result<CopulaFit> {
    let model = CopulaModel::bind(formula, ds, crate::transform::DEFAULT_ORDER)?;
    let count = |s: CompetingStatus| ds.rows().iter().filter(|o| o.status == Some(s)).count();
    if count(CompetingStatus::DependentCensoring) == 0 {
        return Err(Error::UnsupportedCensoring(
            "no dependently censored rows; the copula parameter is not identified".into(),
        ));
    }
    if count(CompetingStatus::EventOfInterest) == 0 {
        return Err(Error::UnsupportedCensoring("no events of interest".into()));
    }
    let design = CopulaDesign::new(&model, ds)?;
    let start = match &opts.start {
        Some(s) if s.len() != model.n_params() => {
            return Err(Error::LengthMismatch {
                expected: model.n_params(),
                actual: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => {
            let (event, censoring) = fit_margins(&model, ds, opts, exec)?;
            let mut s = event.params;
            s.extend(censoring.params);
            s.push(0.0);
            s
        }
    };
    let mut fixed = vec![false; model.n_params()];
    let mut start = start;
    for (name, value) in &opts.fixed {
        let i = model.index(name)?;
        if model.sign(i) < 0.0 || name.contains(":theta") {
            return Err(Error::InvalidArgument(format!(
                "cannot pin `{name}` in the copula model"
            )));
        }
        fixed[i] = true;
        start[i] = *value;
    }
    let re = Reparam::stacked(&[&model.event, &model.censoring], 1);
    let objective = |p: &[f64], g: &mut [f64]| design.nll_grad(p, exec, g).unwrap_or(f64::INFINITY);
    let opt = optimize(objective, &re, &start, &fixed, opts);
    Ok(CopulaFit {
        model,
        params: opt.params,
        vcov: opt.vcov,
        loglik: -opt.value,
        n_obs: ds.len(),
        convergence: opt.convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_tau_values() {
        assert_eq!(kendall_tau(0.0), 0.0);
        assert!((kendall_tau(-0.164) - 0.1035).abs() < 1e-3);
        assert!((kendall_tau(-1e9) - 1.0).abs() < 1e-3);
        assert!((kendall_tau(0.7) + kendall_tau(-0.7)).abs() < 1e-15);
    }

    #[test]
    fn rho_is_odd_decreasing_and_bounded() {
        let xs: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.25).collect();
        for w in xs.windows(2) {
            assert!(rho(w[1]) < rho(w[0]));
        }
        for &x in &xs {
            assert!(rho(x).abs() < 1.0);
            assert_eq!(rho(-x), -rho(x));
        }
    }

    #[test]
    fn marginal_hazard_ratio() {
        assert!((marginal_hr(-0.239, 0.174) - 0.7905).abs() < 1e-3);
        assert_eq!(marginal_hr(0.4, 0.0), 0.4f64.exp());
        assert_eq!(marginal_hr(0.0, 3.0), 1.0);
    }

    #[test]
    fn frailty_variance_must_be_positive() {
        assert!(gamma_frailty(0.0).is_err());
        assert!(gamma_frailty(-1.0).is_err());
        assert!(gamma_frailty(0.5).is_ok());
    }

    #[test]
    fn copula_term_gradient_matches_finite_differences() {
        let statuses = [
            CompetingStatus::EventOfInterest,
            CompetingStatus::DependentCensoring,
            CompetingStatus::AdministrativeCensoring,
        ];
        for status in statuses {
            for &(ze, zc, r) in &[(-0.7, -1.2, 0.3), (0.4, -2.0, -0.6), (-2.5, 0.3, 0.85)] {
                let (zpe, zpc) = (0.8, 1.3);
                let f = |a: f64, b: f64, c: f64, d: f64, rr: f64| {
                    copula_term(status, (a, b), (c, d), rr).unwrap().ll
                };
                let t = copula_term(status, (ze, zpe), (zc, zpc), r).unwrap();
                let h = 1e-6;
                let checks = [
                    (
                        t.d_event.0,
                        (f(ze + h, zpe, zc, zpc, r) - f(ze - h, zpe, zc, zpc, r)) / (2.0 * h),
                    ),
                    (
                        t.d_event.1,
                        (f(ze, zpe + h, zc, zpc, r) - f(ze, zpe - h, zc, zpc, r)) / (2.0 * h),
                    ),
                    (
                        t.d_censoring.0,
                        (f(ze, zpe, zc + h, zpc, r) - f(ze, zpe, zc - h, zpc, r)) / (2.0 * h),
                    ),
                    (
                        t.d_censoring.1,
                        (f(ze, zpe, zc, zpc + h, r) - f(ze, zpe, zc, zpc - h, r)) / (2.0 * h),
                    ),
                    (
                        t.d_rho,
                        (f(ze, zpe, zc, zpc, r + h) - f(ze, zpe, zc, zpc, r - h)) / (2.0 * h),
                    ),
                ];
                for (k, (an, fd)) in checks.iter().enumerate() {
                    assert!((an - fd).abs() < 1e-6, "{status:?} {k}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn administrative_branch_at_zero_correlation() {
        // u = v = 0 gives Phi2(0, 0; 0) = 1/4
        let z0 = core::f64::consts::LN_2.ln();
        let t = copula_term(
            CompetingStatus::AdministrativeCensoring,
            (z0, 1.0),
            (z0, 1.0),
            0.0,
        )
        .unwrap();
        assert!((t.ll - 0.25f64.ln()).abs() < 1e-12);
        let t = copula_term(
            CompetingStatus::AdministrativeCensoring,
            (z0, 1.0),
            (z0, 1.0),
            1e-12,
        )
        .unwrap();
        assert!((t.ll - 0.25f64.ln()).abs() < 1e-9);
        assert!((bvn_cdf(0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        assert!(copula_term(
            CompetingStatus::EventOfInterest,
            (0.0, 1.0),
            (0.0, 1.0),
            1.0
        )
        .is_err());
    }
}
