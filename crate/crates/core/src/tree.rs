//! Model-based recursive partitioning: a transformation model is fitted in
//! every node and the data split on numeric partitioning variables while the
//! model's parameters change significantly along them.
//!
//! Candidate splits are ranked by the score approximation of the two-child
//! log-likelihood gain, `n (n - 1) / (n_L n_R) * S_Lᵀ M⁺ S_L` with `S_L` the
//! summed (centered) per-row scores left of the threshold and `M` their outer
//! product sum. The maximum over thresholds and variables is referred to its
//! permutation distribution; the best few candidates of a significant node
//! are then refitted and the largest exact gain is taken.

use crate::data::{Dataset, Value};
use crate::error::{Error, Result};
use crate::estimate::{fit_with, FitOptions, FitStatus, FittedModel, Quantity};
use crate::exec::{Executor, Partial};
use crate::likelihood::Design;
use crate::model::{Covariate, Extension, ModelSpec};
use crate::prelude::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeControl {
    /// Smallest number of rows in a child.
    pub minbucket: usize,
    /// Significance level of the permutation test.
    pub alpha: f64,
    pub max_depth: usize,
    pub permutations: usize,
    /// Candidates refitted exactly once a node tests significant.
    pub refit_candidates: usize,
    pub seed: u64,
}

impl Default for TreeControl {
    fn default() -> Self {
        Self {
            minbucket: 40,
            alpha: 0.05,
            max_depth: usize::MAX,
            permutations: 199,
            refit_candidates: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: String,
    /// Rows with a value `<=` the threshold go to the first child.
    pub threshold: f64,
    /// Exact two-child log-likelihood gain of the chosen split.
    pub gain: f64,
}

/// Outcome of the permutation test in a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTest {
    pub statistic: f64,
    pub p_value: f64,
    pub variable: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Preorder index, root is 0.
    pub id: usize,
    pub depth: usize,
    /// Dataset rows in this node.
    pub rows: Vec<usize>,
    /// `None` when the node model could not be fitted.
    pub model: Option<FittedModel>,
    /// The node model failed to fit or did not converge.
    pub fit_failed: bool,
    pub test: Option<NodeTest>,
    pub split: Option<Split>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        if self.is_leaf() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    pub fn n_nodes(&self) -> usize {
        1 + self.children.iter().map(|c| c.n_nodes()).sum::<usize>()
    }

    /// Leaf reached by a row with the given partitioning values.
    pub fn route(&self, value: impl Fn(&str) -> Option<f64>) -> Result<&TreeNode> {
        let mut node = self;
        while let Some(split) = &node.split {
            let x = value(&split.variable)
                .ok_or_else(|| Error::UnknownColumn(split.variable.clone()))?;
            if x.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "partitioning value `{}` is NaN",
                    split.variable
                )));
            }
            node = &node.children[if x <= split.threshold { 0 } else { 1 }];
        }
        Ok(node)
    }

    /// Leaf id and leaf-model prediction for a covariate record.
    pub fn predict(
        &self,
        lookup: impl Fn(&str) -> Option<Covariate>,
        grid: &[f64],
        what: Quantity,
    ) -> Result<(usize, Vec<f64>)> {
        let leaf = self.route(|v| match lookup(v) {
            Some(Covariate::Num(x)) => Some(x),
            _ => None,
        })?;
        let model = leaf.model.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("leaf {} has no fitted model", leaf.id))
        })?;
        let enc = model.spec.encode_with(&lookup)?;
        Ok((leaf.id, model.predict(&enc, grid, what)?))
    }
}

/// Survivor curve of the leaf a covariate record falls into.
pub fn predict_tree(
    tree: &TreeNode,
    lookup: impl Fn(&str) -> Option<Covariate>,
    grid: &[f64],
) -> Result<(usize, Vec<f64>)> {
    tree.predict(lookup, grid, Quantity::Survivor)
}

/// Candidate split positions of one variable: rows sorted by value and the
/// sorted positions after which a threshold can be placed.
struct Ordering {
    order: Vec<usize>,
    cuts: Vec<usize>,
    values: Vec<f64>,
}

impl Ordering {
    fn new(values: Vec<f64>, minbucket: usize) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let cuts = (0..n.saturating_sub(1))
            .filter(|&k| {
                k + 1 >= minbucket && n - k > minbucket && values[order[k]] < values[order[k + 1]]
            })
            .collect();
        Self {
            order,
            cuts,
            values,
        }
    }

    fn threshold(&self, cut: usize) -> f64 {
        0.5 * (self.values[self.order[cut]] + self.values[self.order[cut + 1]])
    }
}

/// Per-candidate statistics of all variables for a given assignment of score
/// rows (`perm[i]` is the score row placed at data row `i`).
fn scan(
    scores: &[Vec<f64>],
    pinv: &DMatrix<f64>,
    vars: &[Ordering],
    perm: &[usize],
    mut visit: impl FnMut(usize, usize, f64),
) {
    let n = perm.len();
    let p = pinv.nrows();
    let mut cum = DVector::<f64>::zeros(p);
    for (v, ord) in vars.iter().enumerate() {
        cum.fill(0.0);
        let mut next = 0;
        for &cut in &ord.cuts {
            while next <= cut {
                let s = &scores[perm[ord.order[next]]];
                for k in 0..p {
                    cum[k] += s[k];
                }
                next += 1;
            }
            let nl = (cut + 1) as f64;
            let nr = n as f64 - nl;
            let q = cum.dot(&(pinv * &cum));
            visit(v, cut, q * n as f64 * (n as f64 - 1.0) / (nl * nr));
        }
    }
}

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix.
fn pseudo_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let n = eig.eigenvalues.len();
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 1e-10 * top {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lambda;
        }
    }
    inv
}

struct Grower<'a> {
    spec: &'a ModelSpec,
    ds: &'a Dataset,
    part_vars: Vec<(String, usize)>,
    control: &'a TreeControl,
    fit_opts: &'a FitOptions,
    exec: &'a dyn Executor,
    next_id: usize,
}

impl Grower<'_> {
    fn fit_rows(&self, rows: &[usize], start: Option<&[f64]>) -> Option<FittedModel> {
        let sub = self.ds.subset(rows).ok()?;
        let opts = FitOptions {
            start: start.map(|s| s.to_vec()),
            ..self.fit_opts.clone()
        };
        match fit_with(self.spec, &sub, &opts, self.exec) {
            Ok(fm) if fm.convergence.status == FitStatus::Converged => Some(fm),
            Ok(_) => None,
            Err(e) => {
                log::debug!("node fit failed: {e}");
                None
            }
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, start: Option<&[f64]>) -> TreeNode {
        let id = self.next_id;
        self.next_id += 1;
        let model = self.fit_rows(&rows, start);
        let mut node = TreeNode {
            id,
            depth,
            fit_failed: model.is_none(),
            model,
            rows,
            test: None,
            split: None,
            children: vec![],
        };
        if node.fit_failed {
            log::warn!("node {id}: model fit failed, node kept as a leaf");
            return node;
        }
        if depth >= self.control.max_depth || node.n() < 2 * self.control.minbucket {
            return node;
        }
        let Some((test, candidates)) = self.test_node(&node) else {
            return node;
        };
        let significant = test.p_value <= self.control.alpha;
        node.test = Some(test);
        if !significant {
            return node;
        }
        let parent = node
            .model
            .as_ref()
            .map(|m| m.params.clone())
            .unwrap_or_default();
        let parent_ll = node.model.as_ref().map_or(0.0, |m| m.loglik);
        // exact gains of the best candidates; ties keep the earlier (higher
        // ranked, then smaller threshold) candidate
        let mut best: Option<(f64, String, f64, Vec<usize>, Vec<usize>)> = None;
        for (var, threshold) in candidates {
            let col = self
                .part_vars
                .iter()
                .find(|v| v.0 == var)
                .map(|v| v.1)
                .unwrap_or(0);
            let (left, right): (Vec<usize>, Vec<usize>) = node
                .rows
                .iter()
                .partition(|&&i| numeric(self.ds, i, col) <= threshold);
            let (Some(l), Some(r)) = (
                self.fit_rows(&left, Some(&parent)),
                self.fit_rows(&right, Some(&parent)),
            ) else {
                continue;
            };
            let gain = l.loglik + r.loglik - parent_ll;
            if best.as_ref().is_none_or(|b| gain > b.0) {
                best = Some((gain, var, threshold, left, right));
            }
        }
        let Some((gain, variable, threshold, left, right)) = best else {
            return node;
        };
        node.split = Some(Split {
            variable,
            threshold,
            gain,
        });
        let l = self.grow(left, depth + 1, Some(&parent));
        let r = self.grow(right, depth + 1, Some(&parent));
        node.children = vec![l, r];
        node
    }

    /// Permutation test of the maximal score statistic, with the top-ranked
    /// candidate splits.
    fn test_node(&self, node: &TreeNode) -> Option<(NodeTest, Vec<(String, f64)>)> {
        let model = node.model.as_ref()?;
        let sub = self.ds.subset(&node.rows).ok()?;
        let design = Design::new(self.spec, &sub).ok()?;
        let mut scores = design.row_scores(&model.params).ok()?;
        let n = scores.len();
        let p = model.params.len();
        // drop pinned coordinates and center
        for k in 0..p {
            if model.fixed.get(k).copied().unwrap_or(false) {
                scores.iter_mut().for_each(|s| s[k] = 0.0);
            }
            let mean = scores.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            scores.iter_mut().for_each(|s| s[k] -= mean);
        }
        let mut outer = DMatrix::<f64>::zeros(p, p);
        for s in &scores {
            let v = DVector::from_column_slice(s);
            outer += &v * v.transpose();
        }
        let pinv = pseudo_inverse(outer);
        let vars: Vec<Ordering> = self
            .part_vars
            .iter()
            .map(|(_, col)| {
                Ordering::new(
                    node.rows
                        .iter()
                        .map(|&i| numeric(self.ds, i, *col))
                        .collect(),
                    self.control.minbucket,
                )
            })
            .collect();
        if vars.iter().all(|v| v.cuts.is_empty()) {
            return None;
        }

        let identity: Vec<usize> = (0..n).collect();
        let mut observed = Vec::new();
        scan(&scores, &pinv, &vars, &identity, |v, cut, stat| {
            observed.push((stat, v, cut))
        });
        let (stat, v, cut) =
            observed.iter().copied().fold(
                (f64::NEG_INFINITY, 0, 0),
                |b, c| if c.0 > b.0 { c } else { b },
            );

        let seed = self.control.seed.wrapping_add(node.id as u64);
        let exceed: usize = self
            .exec
            .run(self.control.permutations, &|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let mut perm = identity.clone();
                perm.shuffle(&mut rng);
                let mut max = f64::NEG_INFINITY;
                scan(&scores, &pinv, &vars, &perm, |_, _, s| max = max.max(s));
                Partial {
                    value: f64::from(u8::from(max >= stat * (1.0 - 1e-12))),
                    grad: Vec::new(),
                }
            })
            .iter()
            .map(|p| p.value as usize)
            .sum();
        let p_value = (1 + exceed) as f64 / (1 + self.control.permutations) as f64;

        // best candidates by statistic; a stable sort keeps smaller thresholds
        // first among equal statistics
        observed.sort_by(|a, b| b.0.total_cmp(&a.0));
        let candidates = observed
            .iter()
            .take(self.control.refit_candidates.max(1))
            .map(|&(_, v, cut)| (self.part_vars[v].0.clone(), vars[v].threshold(cut)))
            .collect();
        let test = NodeTest {
            statistic: stat,
            p_value,
            variable: self.part_vars[v].0.clone(),
            threshold: vars[v].threshold(cut),
        };
        Some((test, candidates))
    }
}

fn numeric(ds: &Dataset, row: usize, col: usize) -> f64 {
    match ds.rows()[row].values[col] {
        Value::Num(x) => x,
        Value::Level(l) => f64::from(l),
    }
}

/// Grows a tree of `spec` models over the numeric partitioning variables.
/// Every node model uses the root's bound specification (same basis and
/// support), fitted to the node's rows and started from the parent estimate.
pub fn grow_tree(
    spec: &ModelSpec,
    ds: &Dataset,
    part_vars: &[&str],
    control: &TreeControl,
    fit_opts: &FitOptions,
    exec: &dyn Executor,
) -> Result<TreeNode> {
    if part_vars.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one partitioning variable is required".into(),
        ));
    }
    if matches!(spec.extension, Some(Extension::RandomIntercept { .. })) {
        return Err(Error::InvalidArgument(
            "trees do not support random-intercept models".into(),
        ));
    }
    if control.minbucket == 0
        || !(control.alpha > 0.0 && control.alpha <= 1.0)
        || control.permutations == 0
    {
        return Err(Error::InvalidArgument(
            "tree control needs minbucket >= 1, alpha in (0, 1], permutations >= 1".into(),
        ));
    }
    let vars = part_vars
        .iter()
        .map(|&v| {
            if ds.column(v)?.is_categorical() {
                return Err(Error::Role {
                    var: v.into(),
                    message: "partitioning variables must be numeric".into(),
                });
            }
            let idx = ds.column_index(v)?;
            if ds
                .rows()
                .iter()
                .any(|r| matches!(r.values[idx], Value::Num(x) if x.is_nan()))
            {
                return Err(Error::Role {
                    var: v.into(),
                    message: "partitioning variable has missing values".into(),
                });
            }
            Ok((v.to_string(), idx))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grower = Grower {
        spec,
        ds,
        part_vars: vars,
        control,
        fit_opts,
        exec,
        next_id: 0,
    };
    Ok(grower.grow((0..ds.len()).collect(), 0, None))
}
