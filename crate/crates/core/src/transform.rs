//! Time rescaling, basis functions for the transformation `h`, and the
//! error distributions (links) that map `h` to probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prelude::*;
use crate::special::{log1mexp, log_norm_cdf, norm_cdf, norm_quantile, softplus};

pub const DEFAULT_ORDER: usize = 6;

/// Maps the support `[lo, hi]` (optionally on log scale) onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScaler {
    pub lo: f64,
    pub hi: f64,
    pub log_first: bool,
}

impl TimeScaler {
    pub fn new(lo: f64, hi: f64, log_first: bool) -> Result<Self> {
        let ok = lo < hi && lo.is_finite() && hi.is_finite() && (!log_first || lo > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "support [{lo}, {hi}] invalid (log_first = {log_first})"
            )));
        }
        Ok(Self { lo, hi, log_first })
    }

    fn g(&self, t: f64) -> f64 {
        if self.log_first {
            t.ln()
        } else {
            t
        }
    }

    fn width(&self) -> f64 {
        self.g(self.hi) - self.g(self.lo)
    }

    pub fn rescale(&self, t: f64) -> Result<f64> {
        if self.log_first && !(t > 0.0) {
            return Err(Error::InvalidTime(t));
        }
        Ok((self.g(t) - self.g(self.lo)) / self.width())
    }

    /// `dx/dt` at `t`.
    pub fn dx_dt(&self, t: f64) -> f64 {
        if self.log_first {
            1.0 / (self.width() * t)
        } else {
            1.0 / self.width()
        }
    }

    /// Inverse of [`rescale`](Self::rescale).
    pub fn unscale(&self, x: f64) -> f64 {
        let g = self.g(self.lo) + x * self.width();
        if self.log_first {
            g.exp()
        } else {
            g
        }
    }
}

/// Bernstein polynomial basis of a given order on a rescaled time axis,
/// continued linearly outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernsteinBasis {
    pub order: usize,
    pub scaler: TimeScaler,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn bernstein_inside(n: usize, x: f64, out: &mut [f64]) {
    for (p, o) in out.iter_mut().enumerate().take(n + 1) {
        *o = binomial(n, p) * x.powi(p as i32) * (1.0 - x).powi((n - p) as i32);
    }
}

fn bernstein_deriv_inside(n: usize, x: f64, out: &mut [f64]) {
    // b'_{p,n} = n (b_{p-1,n-1} - b_{p,n-1})
    let mut lower = [0.0; 64];
    let mut lower_vec;
    let lower: &mut [f64] = if n <= 64 {
        &mut lower[..n]
    } else {
        lower_vec = vec![0.0; n];
        &mut lower_vec[..]
    };
    bernstein_inside(n - 1, x, lower);
    for p in 0..=n {
        let left = if p > 0 { lower[p - 1] } else { 0.0 };
        let right = if p < n { lower[p] } else { 0.0 };
        out[p] = n as f64 * (left - right);
    }
}

impl BernsteinBasis {
    pub fn new(order: usize, scaler: TimeScaler) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument(
                "Bernstein order must be at least 1".into(),
            ));
        }
        Ok(Self { order, scaler })
    }

    pub fn dim(&self) -> usize {
        self.order + 1
    }

    /// Basis values at rescaled `x`.
    pub fn eval_x(&self, x: f64, out: &mut [f64]) {
        let n = self.order;
        if (0.0..=1.0).contains(&x) {
            bernstein_inside(n, x, out);
        } else {
            let edge = if x < 0.0 { 0.0 } else { 1.0 };
            let mut slope = vec![0.0; n + 1];
            bernstein_inside(n, edge, out);
            bernstein_deriv_inside(n, edge, &mut slope);
            for (o, s) in out.iter_mut().zip(&slope) {
                *o += s * (x - edge);
            }
        }
    }

    /// Derivatives of the basis with respect to rescaled `x`.
    pub fn deriv_x(&self, x: f64, out: &mut [f64]) {
        bernstein_deriv_inside(self.order, x.clamp(0.0, 1.0), out);
    }

    pub fn bern_eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_x(x, &mut out);
        out
    }

    pub fn bern_deriv(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.deriv_x(x, &mut out);
        out
    }

    /// `a(t)` and `a'(t)` (time derivative, chain rule included).
    pub fn eval(&self, t: f64, a: &mut [f64], da: &mut [f64]) -> Result<()> {
        let x = self.scaler.rescale(t)?;
        self.eval_x(x, a);
        self.deriv_x(x, da);
        let dx = self.scaler.dx_dt(t);
        da.iter_mut().for_each(|v| *v *= dx);
        Ok(())
    }

    pub fn h_eval(&self, theta: &[f64], t: f64) -> Result<f64> {
        check_len(theta, self.dim())?;
        let x = self.scaler.rescale(t)?;
        Ok(dot(&self.bern_eval(x), theta))
    }

    pub fn h_prime(&self, theta: &[f64], t: f64) -> Result<f64> {
        check_len(theta, self.dim())?;
        let x = self.scaler.rescale(t)?;
        Ok(dot(&self.bern_deriv(x), theta) * self.scaler.dx_dt(t))
    }
}

/// The transformation basis of a model: `(1, log t)` or Bernstein.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    LogLinear,
    Bernstein(BernsteinBasis),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Self::LogLinear => 2,
            Self::Bernstein(b) => b.dim(),
        }
    }

    pub fn eval(&self, t: f64, a: &mut [f64], da: &mut [f64]) -> Result<()> {
        match self {
            Self::LogLinear => {
                if !(t > 0.0) {
                    return Err(Error::InvalidTime(t));
                }
                a[0] = 1.0;
                a[1] = t.ln();
                da[0] = 0.0;
                da[1] = 1.0 / t;
                Ok(())
            }
            Self::Bernstein(b) => b.eval(t, a, da),
        }
    }

    pub fn h_eval(&self, theta: &[f64], t: f64) -> Result<f64> {
        let (a, _) = self.values(t)?;
        check_len(theta, a.len())?;
        Ok(dot(&a, theta))
    }

    pub fn h_prime(&self, theta: &[f64], t: f64) -> Result<f64> {
        let (_, da) = self.values(t)?;
        check_len(theta, da.len())?;
        Ok(dot(&da, theta))
    }

    pub fn values(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut a = vec![0.0; self.dim()];
        let mut da = vec![0.0; self.dim()];
        self.eval(t, &mut a, &mut da)?;
        Ok((a, da))
    }
}

fn check_len(theta: &[f64], dim: usize) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Error distribution `F` of the transformation model `P(T <= t) = F(z(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    /// Complementary log-log; `h` is the log-cumulative hazard.
    MinExtremeValue,
    Logistic,
    Normal,
    /// Log-log link.
    MaxExtremeValue,
}

impl Link {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cloglog" | "mev" | "MinExtremeValue" => Ok(Self::MinExtremeValue),
            "logit" | "logistic" | "Logistic" => Ok(Self::Logistic),
            "probit" | "normal" | "Normal" => Ok(Self::Normal),
            "loglog" | "MaxExtremeValue" => Ok(Self::MaxExtremeValue),
            other => Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MinExtremeValue => "cloglog",
            Self::Logistic => "logit",
            Self::Normal => "probit",
            Self::MaxExtremeValue => "loglog",
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => -(-z.exp()).exp_m1(),
            Self::Logistic => 1.0 / (1.0 + (-z).exp()),
            Self::Normal => norm_cdf(z),
            Self::MaxExtremeValue => (-(-z).exp()).exp(),
        }
    }

    pub fn sf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => (-z.exp()).exp(),
            Self::Logistic => 1.0 / (1.0 + z.exp()),
            Self::Normal => norm_cdf(-z),
            Self::MaxExtremeValue => -(-(-z).exp()).exp_m1(),
        }
    }

    pub fn log_cdf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => log1mexp(-z.exp()),
            Self::Logistic => -softplus(-z),
            Self::Normal => log_norm_cdf(z),
            Self::MaxExtremeValue => -(-z).exp(),
        }
    }

    pub fn log_sf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => -z.exp(),
            Self::Logistic => -softplus(z),
            Self::Normal => log_norm_cdf(-z),
            Self::MaxExtremeValue => log1mexp(-(-z).exp()),
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.log_pdf(z).exp()
    }

    pub fn log_pdf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => z - z.exp(),
            Self::Logistic => -z.abs() - 2.0 * (-z.abs()).exp().ln_1p(),
            Self::Normal => -0.5 * z * z - 0.918_938_533_204_672_8,
            Self::MaxExtremeValue => -z - (-z).exp(),
        }
    }

    /// `d/dz log f(z)`.
    pub fn dlog_pdf(&self, z: f64) -> f64 {
        match self {
            Self::MinExtremeValue => 1.0 - z.exp(),
            Self::Logistic => -(0.5 * z).tanh(),
            Self::Normal => -z,
            Self::MaxExtremeValue => (-z).exp() - 1.0,
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(match self {
            Self::MinExtremeValue => (-(-p).ln_1p()).ln(),
            Self::Logistic => (p / (1.0 - p)).ln(),
            Self::Normal => norm_quantile(p),
            Self::MaxExtremeValue => -(-p.ln()).ln(),
        })
    }

    pub const ALL: [Link; 4] = [
        Link::MinExtremeValue,
        Link::Logistic,
        Link::Normal,
        Link::MaxExtremeValue,
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(order: usize) -> BernsteinBasis {
        BernsteinBasis::new(order, TimeScaler::new(1.0, 100.0, true).unwrap()).unwrap()
    }

    #[test]
    fn rescale_boundaries() {
        let s = TimeScaler::new(2.0, 10.0, false).unwrap();
        assert_eq!(s.rescale(2.0).unwrap(), 0.0);
        assert_eq!(s.rescale(10.0).unwrap(), 1.0);
        let e = core::f64::consts::E;
        let s = TimeScaler::new(1.0, e * e, true).unwrap();
        assert!((s.rescale(e).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.rescale(0.0).is_err());
        assert!((s.unscale(s.rescale(3.3).unwrap()) - 3.3).abs() < 1e-12);
        assert!(TimeScaler::new(0.0, 1.0, true).is_err());
    }

    #[test]
    fn endpoint_and_partition() {
        let b = basis(6);
        let v = b.bern_eval(0.0);
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = b.bern_eval(1.0);
        assert_eq!(v[6], 1.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = basis(3);
        let x = 0.3;
        let eps = 1e-6;
        let d = b.bern_deriv(x);
        let hi = b.bern_eval(x + eps);
        let lo = b.bern_eval(x - eps);
        for p in 0..4 {
            let fd = (hi[p] - lo[p]) / (2.0 * eps);
            assert!((fd - d[p]).abs() < 1e-8, "p={p}: {fd} vs {}", d[p]);
        }
    }

    #[test]
    fn constant_coefficients_give_constant_h() {
        let b = basis(6);
        let theta = [1.5; 7];
        for &t in &[0.5, 1.0, 7.0, 100.0, 500.0] {
            assert!((b.h_eval(&theta, t).unwrap() - 1.5).abs() < 1e-12);
            assert!(b.h_prime(&theta, t).unwrap().abs() < 1e-12);
        }
        assert!(b.h_eval(&theta[..3], 2.0).is_err());
    }

    #[test]
    fn extrapolation_is_linear_and_monotone() {
        let b = basis(4);
        let theta = [-2.0, -1.0, -0.5, 0.3, 1.0];
        let h = |t: f64| b.h_eval(&theta, t).unwrap();
        // beyond hi, h is linear in x
        let s = b.scaler;
        let (x1, x2, x3) = (1.5, 2.0, 2.5);
        let (t1, t2, t3) = (s.unscale(x1), s.unscale(x2), s.unscale(x3));
        assert!(((h(t3) - h(t2)) - (h(t2) - h(t1))).abs() < 1e-12);
        assert!(h(0.01) < h(0.1) && h(0.1) < h(1.0) && h(100.0) < h(1000.0));
    }

    #[test]
    fn mev_density_at_zero() {
        assert!((Link::MinExtremeValue.pdf(0.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn link_cdf_derivative_is_pdf() {
        let eps = 1e-6;
        for link in Link::ALL {
            for &z in &[-2.0, 0.0, 0.7, 1.9] {
                let fd = (link.cdf(z + eps) - link.cdf(z - eps)) / (2.0 * eps);
                assert!((fd - link.pdf(z)).abs() < 1e-8, "{link:?} z={z}");
                let fd = (link.log_pdf(z + eps) - link.log_pdf(z - eps)) / (2.0 * eps);
                assert!((fd - link.dlog_pdf(z)).abs() < 1e-7, "{link:?} z={z}");
            }
        }
    }

    #[test]
    fn link_tails_consistent() {
        for link in Link::ALL {
            for &z in &[-30.0, -5.0, -0.3, 0.0, 0.4, 3.0, 20.0] {
                let (lf, ls) = (link.log_cdf(z), link.log_sf(z));
                assert!((lf.exp() + ls.exp() - 1.0).abs() < 1e-12, "{link:?} z={z}");
                assert!((link.cdf(z) + link.sf(z) - 1.0).abs() < 1e-12);
            }
            assert!((link.cdf(link.quantile(0.5).unwrap()) - 0.5).abs() < 1e-12);
            assert!(link.quantile(1.0).is_err());
        }
    }

    #[test]
    fn link_sanity_grid() {
        for link in Link::ALL {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..10_000 {
                let z = -8.0 + 16.0 * i as f64 / 9_999.0;
                assert!(link.log_pdf(z).is_finite());
                // F and f saturate in double precision; compare on the stable tails
                let f = if z <= 0.0 {
                    link.log_cdf(z)
                } else {
                    -link.log_sf(z)
                };
                assert!(f > prev, "{link:?} not increasing at {z}");
                prev = f;
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..=1.0, order in 1usize..20) {
            let s: f64 = basis(order).bern_eval(x).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(basis(order).bern_eval(x).iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn monotone_coefficients_monotone_h(
            incs in proptest::collection::vec(0.0f64..2.0, 6),
            start in -3.0f64..3.0,
            t1 in 1.0f64..100.0,
            dt in 0.0f64..50.0,
        ) {
            let mut theta = vec![start];
            for d in incs { theta.push(theta.last().unwrap() + d); }
            let b = basis(6);
            let t2 = (t1 + dt).min(100.0);
            prop_assert!(b.h_eval(&theta, t1).unwrap() <= b.h_eval(&theta, t2).unwrap() + 1e-12);
        }

        #[test]
        fn chain_rule(incs in proptest::collection::vec(0.05f64..2.0, 6), t in 1.5f64..90.0) {
            let mut theta = vec![-1.0];
            for d in incs { theta.push(theta.last().unwrap() + d); }
            let b = basis(6);
            let eps = 1e-5 * t;
            let fd = (b.h_eval(&theta, t + eps).unwrap() - b.h_eval(&theta, t - eps).unwrap()) / (2.0 * eps);
            let an = b.h_prime(&theta, t).unwrap();
            prop_assert!((fd - an).abs() < 1e-6 * an.abs().max(1e-3));
        }
    }
}
