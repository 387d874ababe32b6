//! Pluggable execution of independent tasks with an ordered reduction.

use crate::prelude::*;

/// Partial objective value and gradient from one task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partial {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Runs `n_tasks` independent tasks; results come back in task order so that
/// summing them gives bitwise-reproducible totals regardless of threading.
pub trait Executor: Sync {
    fn run(&self, n_tasks: usize, task: &(dyn Fn(usize) -> Partial + Sync)) -> Vec<Partial>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run(&self, n_tasks: usize, task: &(dyn Fn(usize) -> Partial + Sync)) -> Vec<Partial> {
        (0..n_tasks).map(task).collect()
    }
}

/// Sum partials in order into `grad` (if any); returns the summed value.
pub fn reduce(parts: Vec<Partial>, grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    match grad {
        Some(g) => {
            g.iter_mut().for_each(|v| *v = 0.0);
            for p in parts {
                total += p.value;
                for (gi, pi) in g.iter_mut().zip(&p.grad) {
                    *gi += pi;
                }
            }
        }
        None => total = parts.iter().map(|p| p.value).sum(),
    }
    total
}
