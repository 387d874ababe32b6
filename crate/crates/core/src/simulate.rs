//! Event-time simulation by probability integral transform, and helpers to
//! build censored samples from simulated times.

use crate::data::EventTime;
use crate::error::{Error, Result};
use crate::estimate::{FittedModel, Vcov};
use crate::likelihood::Noise;
use crate::model::EncodedRow;
use crate::prelude::*;
use crate::transform::{dot, Basis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawOptions {
    /// Grid points across the support used to bracket each root.
    pub grid: usize,
    /// Relative width at which bisection stops.
    pub rel_tol: f64,
    /// Extrapolation reach beyond each support end, in support widths of the
    /// rescaled axis. Roots further out are clamped and flagged.
    pub reach: f64,
}

impl Default for DrawOptions {
    fn default() -> Self {
        Self {
            grid: 1000,
            rel_tol: 1e-10,
            reach: 10.0,
        }
    }
}

/// Simulated times, `per_row` consecutive entries per input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    pub per_row: usize,
    pub times: Vec<f64>,
    /// Draws whose target lay outside the reachable range.
    pub clamped: Vec<bool>,
}

impl Draws {
    pub fn n_clamped(&self) -> usize {
        self.clamped.iter().filter(|c| **c).count()
    }
}

/// The random stream for one row: a fixed seed with the row index as stream
/// id, so rows can be generated in any order or in parallel.
pub fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Inverts `F(z(t)) = p` for a fitted model. Draws are conditional on a zero
/// random intercept.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    fm: &'a FittedModel,
    noise: Noise,
    opts: DrawOptions,
    times: Vec<f64>,
    /// Baseline transformation on the grid, per stratum.
    baseline: Vec<Vec<f64>>,
    /// Time-varying coefficient functions on the grid, per term.
    varying: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(fm: &'a FittedModel, opts: &DrawOptions) -> Result<Self> {
        if opts.grid < 2 || !(opts.rel_tol > 0.0) || !(opts.reach >= 0.0) {
            return Err(Error::InvalidArgument(
                "draw options need grid >= 2, rel_tol > 0, reach >= 0".into(),
            ));
        }
        let spec = &fm.spec;
        let support = match spec.basis {
            Basis::Bernstein(b) => b.scaler,
            Basis::LogLinear => spec.support,
        };
        let mut times = Vec::with_capacity(opts.grid + 2);
        let lower = support.unscale(-opts.reach);
        times.push(if lower > 0.0 {
            lower
        } else {
            support.lo * 1e-9
        });
        times.extend((0..opts.grid).map(|k| support.unscale(k as f64 / (opts.grid - 1) as f64)));
        times.push(support.unscale(1.0 + opts.reach));
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "extrapolation reach overflows the time axis".into(),
            ));
        }

        let layout = &spec.layout;
        let dim = spec.basis.dim();
        let (mut a, mut da) = (vec![0.0; dim], vec![0.0; dim]);
        let mut basis = Vec::with_capacity(times.len());
        for &t in &times {
            spec.basis.eval(t, &mut a, &mut da)?;
            basis.push(a.clone());
        }
        let on_grid = |theta: &[f64]| basis.iter().map(|a| dot(a, theta)).collect::<Vec<f64>>();
        let baseline = (0..spec.n_strata())
            .map(|s| on_grid(&fm.params[layout.baseline(s)]))
            .collect();
        let varying = (0..spec.time_varying.len())
            .map(|j| on_grid(&fm.params[layout.time_varying(j)]))
            .collect();
        Ok(Self {
            fm,
            noise: fm.noise(),
            opts: *opts,
            times,
            baseline,
            varying,
        })
    }

    fn linear_parts(&self, enc: &EncodedRow) -> (f64, f64) {
        let layout = &self.fm.spec.layout;
        let p = &self.fm.params;
        (
            (0.5 * dot(&p[layout.scale()], &enc.scale)).exp(),
            dot(&p[layout.shift()], &enc.shift),
        )
    }

    fn z_grid(&self, enc: &EncodedRow, k: usize, mult: f64, shift: f64) -> f64 {
        let mut z = mult * self.baseline[enc.stratum][k] + shift;
        for (x, h) in enc.time_varying.iter().zip(&self.varying) {
            z += x * h[k];
        }
        z
    }

    fn check(&self, enc: &EncodedRow) -> Result<()> {
        let spec = &self.fm.spec;
        let ok = enc.stratum < spec.n_strata()
            && enc.shift.len() == spec.shift.len()
            && enc.scale.len() == spec.scale.len()
            && enc.time_varying.len() == spec.time_varying.len();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "encoded row does not match the model".into(),
            ))
        }
    }

    /// Time `t` with `P(T <= t) = p`; the flag marks a clamped result.
    pub fn quantile(&self, enc: &EncodedRow, p: f64) -> Result<(f64, bool)> {
        self.check(enc)?;
        let target = self.noise.quantile(p)?;
        let (mult, shift) = self.linear_parts(enc);
        Ok(self.solve(enc, target, mult, shift))
    }

    fn solve(&self, enc: &EncodedRow, target: f64, mult: f64, shift: f64) -> (f64, bool) {
        let last = self.times.len() - 1;
        if target <= self.z_grid(enc, 0, mult, shift) {
            return (self.times[0], true);
        }
        if target > self.z_grid(enc, last, mult, shift) {
            return (self.times[last], true);
        }
        // first grid point with z >= target
        let (mut lo, mut hi) = (0, last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.z_grid(enc, mid, mult, shift) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (mut t_lo, mut t_hi) = (self.times[lo], self.times[hi]);
        while t_hi - t_lo > self.opts.rel_tol * t_hi {
            let mid = 0.5 * (t_lo + t_hi);
            if mid <= t_lo || mid >= t_hi {
                break;
            }
            match self.fm.trafo(enc, mid) {
                Ok((z, _)) if z < target => t_lo = mid,
                _ => t_hi = mid,
            }
        }
        (0.5 * (t_lo + t_hi), false)
    }

    /// `n` draws for one row from its own random stream.
    pub fn draw_row(
        &self,
        enc: &EncodedRow,
        row: usize,
        n: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<bool>)> {
        self.check(enc)?;
        let (mult, shift) = self.linear_parts(enc);
        let mut rng = row_rng(seed, row);
        let mut times = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = loop {
                let u = rng.random::<f64>();
                if u > 0.0 {
                    break u;
                }
            };
            let (t, c) = self.solve(enc, self.noise.quantile(u)?, mult, shift);
            times.push(t);
            clamped.push(c);
        }
        Ok((times, clamped))
    }
}

/// `per_row` event times for each encoded row, by inverting the model
/// distribution at uniform draws.
pub fn draw_times(
    fm: &FittedModel,
    rows: &[EncodedRow],
    per_row: usize,
    seed: u64,
    opts: &DrawOptions,
) -> Result<Draws> {
    let sampler = Sampler::new(fm, opts)?;
    let mut out = Draws {
        per_row,
        times: Vec::with_capacity(rows.len() * per_row),
        clamped: Vec::new(),
    };
    for (i, enc) in rows.iter().enumerate() {
        let (t, c) = sampler.draw_row(enc, i, per_row, seed)?;
        out.times.extend(t);
        out.clamped.extend(c);
    }
    let clamped = out.n_clamped();
    if clamped > 0 {
        log::warn!("{clamped} simulated times clamped to the extrapolation range");
    }
    Ok(out)
}

/// Observed data from event and censoring times: exact when the event comes
/// first, right-censored at the censoring time otherwise.
pub fn make_censored(event: &[f64], censoring: &[f64]) -> Result<Vec<EventTime>> {
    if event.len() != censoring.len() {
        return Err(Error::LengthMismatch {
            expected: event.len(),
            actual: censoring.len(),
        });
    }
    event
        .iter()
        .zip(censoring)
        .map(|(&t, &c)| {
            if t < c {
                EventTime::exact(t)
            } else {
                EventTime::right(c)
            }
        })
        .collect()
}

/// The model with every baseline transformation shifted up by `delta`, i.e.
/// an intercept change on the `z` scale. Under the cloglog link a shift of
/// `log r` multiplies the hazard by `r`.
pub fn shift_intercept(fm: &FittedModel, delta: f64) -> Result<FittedModel> {
    if !delta.is_finite() {
        return Err(Error::InvalidArgument(
            "intercept shift must be finite".into(),
        ));
    }
    let mut out = fm.clone();
    for s in 0..fm.spec.n_strata() {
        let block = fm.spec.layout.baseline(s);
        match fm.spec.basis {
            // basis (1, log t): only the intercept moves
            Basis::LogLinear => out.params[block.start] += delta,
            // Bernstein polynomials sum to one
            Basis::Bernstein(_) => out.params[block].iter_mut().for_each(|v| *v += delta),
        }
    }
    out.vcov = Vcov::Invalidated;
    Ok(out)
}
