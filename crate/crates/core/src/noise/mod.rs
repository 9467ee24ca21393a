//! Wiener–Poisson driving noise on a uniform time grid.
//!
//! Two realizations share one layout: an exact non-recombining scenario tree
//! (two-point Brownian increments, at most one jump per step) and a seeded
//! Monte Carlo ensemble whose per-path streams make results independent of
//! evaluation order. Both expose the discrete filtration through
//! [`ScenarioSet::conditional_expectation`].

mod history;
mod regression;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Point;
use crate::policy::POLICY;

pub use history::{NoHistory, NoiseHistory, PathHistory};

/// Leaf-count limit of an enumerated tree.
pub const MAX_TREE_LEAVES: u128 = 10_000_000;

/// Total one-step jump probability allowed by [`NoiseModel::new`].
pub const MAX_STEP_JUMP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
    #[error("scenario tree would have {leaves} leaves (limit {limit})")]
    TreeTooLarge { leaves: u128, limit: u128 },
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("step {step} outside grid of {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("monte carlo ensemble needs at least one path")]
    NoPaths,
}

/// One jump mark `e_k` with intensity `lambda_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mark {
    pub vector: Point,
    pub intensity: f64,
}

/// Brownian dimension, finite Lévy measure and time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    brownian_dim: usize,
    marks: Vec<Mark>,
    horizon: f64,
    steps: usize,
}

impl NoiseModel {
    pub fn new(
        brownian_dim: usize,
        marks: Vec<Mark>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self, NoiseError> {
        if brownian_dim == 0 {
            return Err(NoiseError::InvalidModel("brownian dimension must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(NoiseError::InvalidModel(
                "horizon must be positive and the grid nonempty".into(),
            ));
        }
        let h = horizon / steps as f64;
        let mut total = 0.0;
        for (k, mark) in marks.iter().enumerate() {
            if mark.vector.is_empty() || mark.vector.iter().all(|v| *v == 0.0) {
                return Err(NoiseError::InvalidModel(format!("mark {k} is the zero vector")));
            }
            if !(mark.intensity > 0.0 && mark.intensity.is_finite()) {
                return Err(NoiseError::InvalidModel(format!(
                    "mark {k} needs a positive intensity"
                )));
            }
            if mark.intensity * h >= 1.0 {
                return Err(NoiseError::InvalidModel(format!(
                    "mark {k}: lambda*h = {} must be < 1",
                    mark.intensity * h
                )));
            }
            total += mark.intensity * h;
        }
        if total > MAX_STEP_JUMP_PROBABILITY {
            return Err(NoiseError::InvalidModel(format!(
                "total one-step jump probability {total} exceeds {MAX_STEP_JUMP_PROBABILITY}"
            )));
        }
        Ok(Self {
            brownian_dim,
            marks,
            horizon,
            steps,
        })
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn mark_count(&self) -> usize {
        self.marks.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.horizon
        } else {
            step as f64 * self.step_size()
        }
    }

    /// Variance `lambda_k h (1 - lambda_k h)` of a compensated jump increment.
    pub fn jump_variance(&self, mark: usize) -> f64 {
        let p = self.marks[mark].intensity * self.step_size();
        p * (1.0 - p)
    }

    /// Number of tree branches per step: `2^d (1 + K)`.
    pub fn branching(&self) -> usize {
        (1usize << self.brownian_dim) * (1 + self.marks.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioMode {
    Tree { branching: usize },
    MonteCarlo { n_paths: usize, seed: u64 },
}

/// Per-step node data, row-major by node.
#[derive(Clone, Debug, Default)]
struct Level {
    brownian: Vec<f64>,
    counts: Vec<u32>,
    d_brownian: Vec<f64>,
    jumps: Vec<u8>,
    weight: Vec<f64>,
}

/// A realized discrete filtration: nodes per time step, parents, weights and
/// the noise increments leading into every node.
#[derive(Clone, Debug)]
pub struct ScenarioSet {
    model: NoiseModel,
    mode: ScenarioMode,
    levels: Vec<Level>,
    branch_probs: Vec<f64>,
}

/// Enumerate the full scenario tree.
pub fn build_tree(model: &NoiseModel) -> Result<ScenarioSet, NoiseError> {
    let b = model.branching();
    let leaves = (b as u128).checked_pow(model.steps() as u32).unwrap_or(u128::MAX);
    if leaves > MAX_TREE_LEAVES {
        return Err(NoiseError::TreeTooLarge {
            leaves,
            limit: MAX_TREE_LEAVES,
        });
    }
    let d = model.brownian_dim();
    let k = model.mark_count();
    let h = model.step_size();
    let sqrt_h = h.sqrt();
    let no_jump = 1.0 - model.marks().iter().map(|m| m.intensity * h).sum::<f64>();
    let sign_share = 1.0 / (1usize << d) as f64;
    let branch_probs: Vec<f64> = (0..b)
        .map(|br| {
            let j = br % (1 + k);
            sign_share
                * if j == 0 {
                    no_jump
                } else {
                    model.marks()[j - 1].intensity * h
                }
        })
        .collect();

    let mut levels = vec![Level {
        brownian: vec![0.0; d],
        counts: vec![0; k],
        d_brownian: vec![0.0; d],
        jumps: vec![0; k],
        weight: vec![1.0],
    }];
    for _ in 0..model.steps() {
        let prev = levels.last().expect("root level");
        let parents = prev.weight.len();
        let nodes = parents * b;
        let mut next = Level {
            brownian: vec![0.0; nodes * d],
            counts: vec![0; nodes * k],
            d_brownian: vec![0.0; nodes * d],
            jumps: vec![0; nodes * k],
            weight: vec![0.0; nodes],
        };
        for parent in 0..parents {
            for br in 0..b {
                let node = parent * b + br;
                let signs = br / (1 + k);
                let j = br % (1 + k);
                for c in 0..d {
                    let dw = if (signs >> c) & 1 == 0 { sqrt_h } else { -sqrt_h };
                    next.d_brownian[node * d + c] = dw;
                    next.brownian[node * d + c] = prev.brownian[parent * d + c] + dw;
                }
                for m in 0..k {
                    let jumped = (j == m + 1) as u8;
                    next.jumps[node * k + m] = jumped;
                    next.counts[node * k + m] = prev.counts[parent * k + m] + jumped as u32;
                }
                next.weight[node] = prev.weight[parent] * branch_probs[br];
            }
        }
        levels.push(next);
    }
    Ok(ScenarioSet {
        model: model.clone(),
        mode: ScenarioMode::Tree { branching: b },
        levels,
        branch_probs,
    })
}

/// Sample a Monte Carlo ensemble. Path `p` draws from the ChaCha stream
/// `(seed, p)`, so the ensemble does not depend on scheduling.
pub fn sample_paths(model: &NoiseModel, n_paths: usize, seed: u64) -> Result<ScenarioSet, NoiseError> {
    if n_paths == 0 {
        return Err(NoiseError::NoPaths);
    }
    let d = model.brownian_dim();
    let k = model.mark_count();
    let n = model.steps();
    let h = model.step_size();
    let sqrt_h = h.sqrt();
    let probs: Vec<f64> = model.marks().iter().map(|m| m.intensity * h).collect();
    let paths: Vec<(Vec<f64>, Vec<u8>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut dw = Vec::with_capacity(n * d);
            let mut jumps = Vec::with_capacity(n * k);
            for _ in 0..n {
                for _ in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    dw.push(sqrt_h * z);
                }
                for &q in &probs {
                    jumps.push((rng.random::<f64>() < q) as u8);
                }
            }
            (dw, jumps)
        })
        .collect();

    let weight = 1.0 / n_paths as f64;
    let mut levels = Vec::with_capacity(n + 1);
    levels.push(Level {
        brownian: vec![0.0; n_paths * d],
        counts: vec![0; n_paths * k],
        d_brownian: vec![0.0; n_paths * d],
        jumps: vec![0; n_paths * k],
        weight: vec![weight; n_paths],
    });
    for step in 0..n {
        let prev = &levels[step];
        let mut next = Level {
            brownian: vec![0.0; n_paths * d],
            counts: vec![0; n_paths * k],
            d_brownian: vec![0.0; n_paths * d],
            jumps: vec![0; n_paths * k],
            weight: vec![weight; n_paths],
        };
        for (p, (dw, jumps)) in paths.iter().enumerate() {
            for c in 0..d {
                let inc = dw[step * d + c];
                next.d_brownian[p * d + c] = inc;
                next.brownian[p * d + c] = prev.brownian[p * d + c] + inc;
            }
            for m in 0..k {
                let jumped = jumps[step * k + m];
                next.jumps[p * k + m] = jumped;
                next.counts[p * k + m] = prev.counts[p * k + m] + jumped as u32;
            }
        }
        levels.push(next);
    }
    Ok(ScenarioSet {
        model: model.clone(),
        mode: ScenarioMode::MonteCarlo { n_paths, seed },
        levels,
        branch_probs: Vec::new(),
    })
}

impl ScenarioSet {
    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn mode(&self) -> &ScenarioMode {
        &self.mode
    }

    pub fn is_tree(&self) -> bool {
        matches!(self.mode, ScenarioMode::Tree { .. })
    }

    pub fn steps(&self) -> usize {
        self.model.steps()
    }

    pub fn step_size(&self) -> f64 {
        self.model.step_size()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.model.time(step)
    }

    pub fn nodes(&self, step: usize) -> usize {
        self.levels[step].weight.len()
    }

    /// Total number of nodes over all steps.
    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.weight.len()).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes(self.steps())
    }

    /// Parent (at `step - 1`) of `node` at `step >= 1`.
    pub fn parent(&self, step: usize, node: usize) -> usize {
        debug_assert!(step >= 1);
        match self.mode {
            ScenarioMode::Tree { branching } => node / branching,
            ScenarioMode::MonteCarlo { .. } => node,
        }
    }

    /// Ancestor at step `earlier <= step`.
    pub fn ancestor(&self, step: usize, node: usize, earlier: usize) -> usize {
        debug_assert!(earlier <= step);
        match self.mode {
            ScenarioMode::Tree { branching } => {
                let mut idx = node;
                for _ in earlier..step {
                    idx /= branching;
                }
                idx
            }
            ScenarioMode::MonteCarlo { .. } => node,
        }
    }

    /// Probability of reaching the node (tree) or `1/n_paths` (Monte Carlo).
    pub fn weight(&self, step: usize, node: usize) -> f64 {
        self.levels[step].weight[node]
    }

    /// Brownian value `W_t` at the node.
    pub fn brownian(&self, step: usize, node: usize) -> &[f64] {
        let d = self.model.brownian_dim();
        &self.levels[step].brownian[node * d..(node + 1) * d]
    }

    /// Jump counters `N^k_t` at the node.
    pub fn jump_counts(&self, step: usize, node: usize) -> &[u32] {
        let k = self.model.mark_count();
        &self.levels[step].counts[node * k..(node + 1) * k]
    }

    /// Brownian increment of the step leading into the node.
    pub fn brownian_increment(&self, step: usize, node: usize) -> &[f64] {
        let d = self.model.brownian_dim();
        &self.levels[step].d_brownian[node * d..(node + 1) * d]
    }

    /// Jump indicators of the step leading into the node.
    pub fn jump_indicators(&self, step: usize, node: usize) -> &[u8] {
        let k = self.model.mark_count();
        &self.levels[step].jumps[node * k..(node + 1) * k]
    }

    /// Compensated increment `1{jump k} - lambda_k h` into the node.
    pub fn compensated_increment(&self, step: usize, node: usize, mark: usize) -> f64 {
        if step == 0 {
            return 0.0;
        }
        self.jump_indicators(step, node)[mark] as f64
            - self.model.marks()[mark].intensity * self.step_size()
    }

    /// Branch probabilities of one tree step (empty for Monte Carlo).
    pub fn branch_probabilities(&self) -> &[f64] {
        &self.branch_probs
    }

    /// History view of the node, restricted to times up to the node's time.
    pub fn history(&self, step: usize, node: usize) -> NodeHistory<'_> {
        NodeHistory {
            scen: self,
            step,
            node,
        }
    }

    /// Conditional expectation given the information at `step`.
    ///
    /// `values` holds `width` numbers per node at `step + 1` (row-major). The
    /// result holds `width` numbers per node at `step`. Trees average over
    /// children with exact branch weights; Monte Carlo regresses on
    /// polynomials of total degree `<= 2` in `(W_t, N_t)`.
    pub fn conditional_expectation(
        &self,
        step: usize,
        values: &[f64],
        width: usize,
    ) -> Result<Vec<f64>, NoiseError> {
        if step >= self.steps() {
            return Err(NoiseError::StepOutOfRange {
                step,
                steps: self.steps(),
            });
        }
        let expected = self.nodes(step + 1) * width;
        if values.len() != expected {
            return Err(NoiseError::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        let parents = self.nodes(step);
        match self.mode {
            // Pairwise means over sign patterns, then the jump mixture written
            // relative to the no-jump mean. Constants and symmetric
            // increments come out exact.
            ScenarioMode::Tree { branching } => {
                let k1 = 1 + self.model.mark_count();
                let signs = branching / k1;
                let jump_probs: Vec<f64> = (0..k1)
                    .map(|j| self.branch_probs[j] * signs as f64)
                    .collect();
                let mut out = vec![0.0; parents * width];
                if width == 0 {
                    return Ok(out);
                }
                out.par_chunks_mut(width).enumerate().for_each_init(
                    || (vec![0.0; signs * width], vec![0.0; k1 * width]),
                    |(buf, means), (parent, slot)| {
                        for j in 0..k1 {
                            for s in 0..signs {
                                let child = parent * branching + s * k1 + j;
                                buf[s * width..(s + 1) * width]
                                    .copy_from_slice(&values[child * width..(child + 1) * width]);
                            }
                            let mut len = signs;
                            while len > 1 {
                                len /= 2;
                                for i in 0..len {
                                    for w in 0..width {
                                        buf[i * width + w] =
                                            0.5 * (buf[2 * i * width + w] + buf[(2 * i + 1) * width + w]);
                                    }
                                }
                            }
                            means[j * width..(j + 1) * width].copy_from_slice(&buf[..width]);
                        }
                        for w in 0..width {
                            let base = means[w];
                            let mut acc = 0.0;
                            for j in 1..k1 {
                                acc += jump_probs[j] * (means[j * width + w] - base);
                            }
                            slot[w] = base + acc;
                        }
                    },
                );
                Ok(out)
            }
            ScenarioMode::MonteCarlo { .. } => {
                let d = self.model.brownian_dim();
                let k = self.model.mark_count();
                let vars = d + k;
                let level = &self.levels[step];
                let mut state = Vec::with_capacity(parents * vars);
                for p in 0..parents {
                    state.extend_from_slice(&level.brownian[p * d..(p + 1) * d]);
                    state.extend(level.counts[p * k..(p + 1) * k].iter().map(|&c| c as f64));
                }
                let (fitted, _) = regression::fit_and_predict(&state, vars, values, width, 2);
                Ok(fitted)
            }
        }
    }

    /// Fold a per-node quantity along every root-to-leaf path:
    /// `acc(child) = combine(acc(parent), term(child))`, starting from
    /// `combine(init, term(root))`. Returns one accumulator per leaf.
    pub fn fold_paths<T, F, C>(&self, init: T, term: F, combine: C) -> Vec<T>
    where
        T: Clone + Send + Sync,
        F: Fn(usize, usize) -> T + Sync,
        C: Fn(&T, T) -> T + Sync,
    {
        let roots = self.nodes(0);
        let mut acc: Vec<T> = (0..roots).map(|i| combine(&init, term(0, i))).collect();
        for step in 1..=self.steps() {
            acc = (0..self.nodes(step))
                .into_par_iter()
                .map(|node| combine(&acc[self.parent(step, node)], term(step, node)))
                .collect();
        }
        acc
    }

    /// Weighted average of one value per leaf, summed in leaf order.
    pub fn expectation(&self, leaf_values: &[f64]) -> f64 {
        let n = self.steps();
        leaf_values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(n, i) * v)
            .sum()
    }

    /// Structural identity used to reject mixing bundles from different
    /// scenario sets.
    pub fn fingerprint(&self) -> ScenarioFingerprint {
        ScenarioFingerprint {
            mode: self.mode.clone(),
            steps: self.steps(),
            horizon: self.model.horizon(),
            brownian_dim: self.model.brownian_dim(),
            marks: self.model.mark_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioFingerprint {
    pub mode: ScenarioMode,
    pub steps: usize,
    pub horizon: f64,
    pub brownian_dim: usize,
    pub marks: usize,
}

/// Non-anticipative view of one node's past.
#[derive(Clone, Copy)]
pub struct NodeHistory<'a> {
    scen: &'a ScenarioSet,
    step: usize,
    node: usize,
}

impl NodeHistory<'_> {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn node(&self) -> usize {
        self.node
    }

    fn step_at(&self, t: f64) -> Option<usize> {
        let h = self.scen.step_size();
        let tol = POLICY.time_snap * (1.0 + self.scen.model.horizon());
        if t > self.time() + tol || t < -tol {
            return None;
        }
        let s = ((t + tol) / h).floor() as usize;
        Some(s.min(self.step))
    }
}

impl NoiseHistory for NodeHistory<'_> {
    fn time(&self) -> f64 {
        self.scen.time(self.step)
    }

    fn brownian_at(&self, t: f64) -> Option<Point> {
        let s = self.step_at(t)?;
        let a = self.scen.ancestor(self.step, self.node, s);
        Some(Point::from_column_slice(self.scen.brownian(s, a)))
    }

    fn jump_counts_at(&self, t: f64) -> Option<Vec<u32>> {
        let s = self.step_at(t)?;
        let a = self.scen.ancestor(self.step, self.node, s);
        Some(self.scen.jump_counts(s, a).to_vec())
    }
}
