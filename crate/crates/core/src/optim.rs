//! Unconstrained quasi-Newton minimization (BFGS, strong Wolfe line search).

use serde::{Deserialize, Serialize};

use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    /// Convergence when the largest free gradient component is below
    /// `gtol * max(1, |f|)`.
    pub gtol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-8,
            max_iter: 1000,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

impl BfgsOptions {
    /// Gradient threshold at objective value `f`.
    pub fn grad_tol(&self, f: f64) -> f64 {
        self.gtol * f.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the iterate is the
    /// best point seen.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Minimize `f` starting at `x0`. `f(x, grad)` returns the value and writes
/// the gradient. Coordinates flagged in `fixed` stay at their start values.
pub fn minimize<F>(mut f: F, x0: &[f64], fixed: &[bool], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let free: Vec<bool> = (0..n)
        .map(|i| !fixed.get(i).copied().unwrap_or(false))
        .collect();
    let mut eval = |x: &[f64], g: &mut [f64]| {
        let v = sanitize(f(x, g));
        for (gi, &fr) in g.iter_mut().zip(&free) {
            if !fr || !gi.is_finite() {
                *gi = 0.0;
            }
        }
        v
    };

    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = eval(&x, &mut g);
    let mut h = identity(n);
    let mut fresh_h = true;
    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol(fx) {
            status = Status::Converged;
            break;
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            h = identity(n);
            fresh_h = true;
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
        }
        let alpha0 = if fresh_h {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let step = line_search(&mut eval, &x, fx, slope, &p, alpha0, opts, &mut xn, &mut gn);
        let Some((alpha, f_new)) = step else {
            if fresh_h {
                status = Status::LineSearchFailed;
                break;
            }
            h = identity(n);
            fresh_h = true;
            continue;
        };
        let s: Vec<f64> = p.iter().map(|pi| alpha * pi).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        let f_old = fx;
        fx = f_new;
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh_h {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
                fresh_h = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        if (f_old - fx).abs() <= 1e-15 * fx.abs().max(1.0) && inf_norm(&s) <= 1e-14 {
            status = if inf_norm(&g) <= opts.grad_tol(fx) {
                Status::Converged
            } else {
                Status::LineSearchFailed
            };
            break;
        }
    }
    if status == Status::MaxIterations && inf_norm(&g) <= opts.grad_tol(fx) {
        status = Status::Converged;
    }
    Minimum {
        x,
        value: fx,
        grad: g,
        iterations,
        status,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - r s y') H (I - r y s') + r s s'` with `r = 1 / y's`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Strong Wolfe line search (bracketing + zoom). Leaves the accepted point
/// and gradient in `xn`, `gn`.
#[allow(clippy::too_many_arguments)]
fn line_search<E>(
    eval: &mut E,
    x: &[f64],
    f0: f64,
    d0: f64,
    p: &[f64],
    alpha0: f64,
    opts: &BfgsOptions,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<(f64, f64)>
where
    E: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut phi = |a: f64, xn: &mut [f64], gn: &mut [f64]| {
        for i in 0..x.len() {
            xn[i] = x[i] + a * p[i];
        }
        let v = eval(xn, gn);
        (v, dot(gn, p))
    };
    let (c1, c2) = (opts.c1, opts.c2);
    let mut a_prev = 0.0;
    let (mut f_prev, mut d_prev) = (f0, d0);
    let mut a = alpha0;
    for i in 0..40 {
        let (fa, da) = phi(a, xn, gn);
        if !fa.is_finite() || fa > f0 + c1 * a * d0 || (i > 0 && fa >= f_prev) {
            return zoom(
                &mut phi,
                f0,
                d0,
                (a_prev, f_prev, d_prev),
                (a, fa, da),
                c1,
                c2,
                xn,
                gn,
            );
        }
        if da.abs() <= -c2 * d0 {
            return Some((a, fa));
        }
        if da >= 0.0 {
            return zoom(
                &mut phi,
                f0,
                d0,
                (a, fa, da),
                (a_prev, f_prev, d_prev),
                c1,
                c2,
                xn,
                gn,
            );
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<P>(
    phi: &mut P,
    f0: f64,
    d0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    c1: f64,
    c2: f64,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<(f64, f64)>
where
    P: FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64),
{
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..60 {
        let a = interpolate(lo, hi);
        let (fa, da) = phi(a, xn, gn);
        if !fa.is_finite() || fa > f0 + c1 * a * d0 || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -c2 * d0 {
                return Some((a, fa));
            }
            best = Some((a, fa));
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // accept a sufficient-decrease point even if curvature is not met
    let (a, _) = best.or((lo.0 > 0.0 && lo.1 < f0).then_some((lo.0, lo.1)))?;
    let (fv, _) = phi(a, xn, gn);
    Some((a, fv))
}

/// Safeguarded cubic interpolation between bracket ends (falls back to bisection).
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, d0) = lo;
    let (a1, f1, d1) = hi;
    let mid = 0.5 * (a0 + a1);
    if !f1.is_finite() || !d1.is_finite() {
        return a0 + 0.5 * (a1 - a0) * if a1 > a0 { 0.5 } else { 1.0 };
    }
    let d1c = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1c * d1c - d0 * d1;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt() * (a1 - a0).signum();
    let a = a1 - (a1 - a0) * (d1 + d2 - d1c) / (d1 - d0 + 2.0 * d2);
    let (lo_b, hi_b) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let margin = 0.1 * (hi_b - lo_b);
    if a.is_finite() && a > lo_b + margin && a < hi_b - margin {
        a
    } else {
        mid
    }
}
