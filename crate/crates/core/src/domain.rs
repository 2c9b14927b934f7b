//! Shared domain types: next-token distributions, model costs, the pairwise
//! acceptance matrix, problem instances and hierarchy plans.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token identifiers index into the shared vocabulary.
pub type Token = u32;

/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Slack allowed when checking the acceptance-rate triangle inequality.
const TRIANGLE_TOL: f64 = 1e-9;

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Builds a distribution from probabilities that already sum to one
    /// (within [`PROB_SUM_TOL`]); the vector is renormalized exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self::renormalized(probs, total))
    }

    /// Normalizes arbitrary nonnegative weights with positive total mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights have zero mass".into()));
        }
        Ok(Self::renormalized(weights, total))
    }

    fn renormalized(mut probs: Vec<f64>, total: f64) -> Self {
        if total != 1.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Self { probs }
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "vocabulary must be nonempty");
        Self { probs: vec![1.0 / size as f64; size] }
    }

    pub fn point_mass(size: usize, token: Token) -> Self {
        assert!((token as usize) < size, "token outside vocabulary");
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `token`; zero for ids outside the vocabulary.
    pub fn prob(&self, token: Token) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    /// Draws a token by inverting the cumulative distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i as Token;
                }
            }
        }
        // rounding left u above the accumulated mass
        last_positive as Token
    }

    /// Half the L1 distance between the two vectors.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        check_same_len(self, other)?;
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

pub(crate) fn check_same_len(p: &Categorical, q: &Categorical) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: q.len() });
    }
    Ok(())
}

/// Probability that a token drafted from `q` survives verification against
/// `p`: one minus their total-variation distance.
pub fn acceptance_rate(p: &Categorical, q: &Categorical) -> Result<f64> {
    let tv = p.total_variation(q)?;
    Ok((1.0 - tv).clamp(0.0, 1.0))
}

/// A candidate model: its display name and cost per forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub cost: f64,
}

/// Dense square matrix of pairwise acceptance rates. Only entries above the
/// diagonal are stored meaningfully; lookups below it are mirrored and the
/// diagonal reads as 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl AcceptanceMatrix {
    pub fn ones(dim: usize) -> Self {
        Self { dim, data: vec![1.0; dim * dim] }
    }

    /// Builds from full square rows; entries on or below the diagonal are ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut m = Self::ones(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Input(format!(
                    "acceptance matrix must be square: row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            m.data[i * dim + i + 1..(i + 1) * dim].copy_from_slice(&row[i + 1..]);
        }
        Ok(m)
    }

    /// Builds from the strictly upper triangle, row by row: row `i` holds
    /// the entries for columns `i+1..dim`.
    pub fn from_upper(upper: &[&[f64]]) -> Result<Self> {
        let dim = upper.len() + 1;
        let mut m = Self::ones(dim);
        for (i, row) in upper.iter().enumerate() {
            if row.len() != dim - i - 1 {
                return Err(Error::Input(format!("upper-triangle row {i} has wrong length")));
            }
            for (offset, &v) in row.iter().enumerate() {
                m.data[i * dim + i + 1 + offset] = v;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Acceptance rate between models `i` and `j` (symmetric).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => 1.0,
            Less => self.data[i * self.dim + j],
            Greater => self.data[j * self.dim + i],
        }
    }

    /// Sets the rate between `i` and `j` (stored in the upper triangle).
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        if lo != hi {
            self.data[lo * self.dim + hi] = value;
        }
    }

    /// Symmetric completion with a unit diagonal.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A single finding from [`validate_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// An entry above the diagonal lies outside `[0, 1]`.
    OutOfRange { i: usize, j: usize, value: f64 },
    /// `alpha(i,j) + alpha(j,k) > alpha(i,k) + 1`.
    Triangle { i: usize, j: usize, k: usize, lhs: f64, rhs: f64 },
}

impl Diagnostic {
    pub fn severity(&self) -> Severity {
        match self {
            Diagnostic::OutOfRange { .. } => Severity::Error,
            Diagnostic::Triangle { .. } => Severity::Warning,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::OutOfRange { i, j, value } => {
                write!(f, "error: alpha[{i}][{j}] = {value} is outside [0, 1]")
            }
            Diagnostic::Triangle { i, j, k, lhs, rhs } => write!(
                f,
                "warning: triangle inequality violated at ({i}, {j}, {k}): {lhs:.6} > {rhs:.6}"
            ),
        }
    }
}

/// Range and triangle-inequality check. An empty result means the matrix
/// is consistent with rates derived from total-variation distances.
pub fn validate_matrix(alpha: &AcceptanceMatrix) -> Vec<Diagnostic> {
    let n = alpha.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let value = alpha.get(i, j);
            if !(0.0..=1.0).contains(&value) {
                out.push(Diagnostic::OutOfRange { i, j, value });
            }
        }
    }
    // symmetric in (i, k), so only i < k is visited
    for i in 0..n {
        for k in i + 1..n {
            for j in (0..n).filter(|&j| j != i && j != k) {
                let lhs = alpha.get(i, j) + alpha.get(j, k);
                let rhs = alpha.get(i, k) + 1.0;
                if lhs > rhs + TRIANGLE_TOL {
                    out.push(Diagnostic::Triangle { i, j, k, lhs, rhs });
                }
            }
        }
    }
    out
}

/// An instance of the hierarchy-selection problem. The last model is the
/// target; every other model is a candidate drafter.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    models: Vec<ModelSpec>,
    alpha: AcceptanceMatrix,
    t_max: u32,
    vocab_size: Option<usize>,
}

impl Problem {
    pub fn new(models: Vec<ModelSpec>, alpha: AcceptanceMatrix, t_max: u32) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::Input(format!(
                "need at least 2 models (drafter and target), got {}",
                models.len()
            )));
        }
        if t_max < 1 {
            return Err(Error::Input("t_max must be at least 1".into()));
        }
        if let Some(m) = models.iter().find(|m| !(m.cost.is_finite() && m.cost > 0.0)) {
            return Err(Error::Input(format!("model {:?} has non-positive cost {}", m.name, m.cost)));
        }
        if alpha.dim() != models.len() {
            return Err(Error::DimensionMismatch { expected: models.len(), actual: alpha.dim() });
        }
        if let Some(Diagnostic::OutOfRange { i, j, value }) =
            validate_matrix(&alpha).into_iter().find(|d| d.severity() == Severity::Error)
        {
            return Err(Error::Range { i, j, value });
        }
        Ok(Self { models, alpha, t_max, vocab_size: None })
    }

    /// Convenience constructor from bare costs; models are named `M1..Mn`.
    pub fn from_costs(costs: &[f64], alpha: AcceptanceMatrix, t_max: u32) -> Result<Self> {
        let models = costs
            .iter()
            .enumerate()
            .map(|(i, &cost)| ModelSpec { name: format!("M{}", i + 1), cost })
            .collect();
        Self::new(models, alpha, t_max)
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    /// Index of the target model.
    pub fn target(&self) -> usize {
        self.models.len() - 1
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.models[i].cost
    }

    pub fn costs(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.cost).collect()
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha.get(i, j)
    }

    pub fn acceptance(&self) -> &AcceptanceMatrix {
        &self.alpha
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.vocab_size
    }

    pub fn with_t_max(mut self, t_max: u32) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::Input("t_max must be at least 1".into()));
        }
        self.t_max = t_max;
        Ok(self)
    }

    pub fn with_vocab_size(mut self, vocab_size: Option<usize>) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    /// Sub-problem over the given model indices (strictly increasing, ending
    /// at the target). Indices are renumbered from zero.
    pub fn subproblem(&self, indices: &[usize]) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("subproblem indices must be strictly increasing".into()));
        }
        if indices.last() != Some(&self.target()) {
            return Err(Error::Input("subproblem must keep the target model".into()));
        }
        let models = indices.iter().map(|&i| self.models[i].clone()).collect();
        let mut alpha = AcceptanceMatrix::ones(indices.len());
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate().skip(a + 1) {
                alpha.set(a, b, self.alpha.get(i, j));
            }
        }
        Ok(Self::new(models, alpha, self.t_max)?.with_vocab_size(self.vocab_size))
    }

    /// Sub-problem keeping only the last `k` models (the `k − 1` largest
    /// drafters plus the target).
    pub fn last_models(&self, k: usize) -> Result<Self> {
        let n = self.num_models();
        if k < 2 || k > n {
            return Err(Error::Input(format!("cannot keep {k} of {n} models")));
        }
        let indices: Vec<usize> = (n - k..n).collect();
        self.subproblem(&indices)
    }

    /// Diagnostics for the acceptance matrix (warnings only, since
    /// construction already rejected range errors).
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        validate_matrix(&self.alpha)
    }

    pub fn to_config(&self) -> ProblemConfig {
        ProblemConfig {
            vocab_size: self.vocab_size,
            models: self.models.clone(),
            alpha: self.alpha.to_rows(),
            t_max: self.t_max,
        }
    }
}

/// JSON form of a [`Problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    pub models: Vec<ModelSpec>,
    pub alpha: Vec<Vec<f64>>,
    pub t_max: u32,
}

impl ProblemConfig {
    pub fn into_problem(self) -> Result<Problem> {
        if self.alpha.len() != self.models.len() {
            return Err(Error::Input(format!(
                "alpha has {} rows but there are {} models",
                self.alpha.len(),
                self.models.len()
            )));
        }
        let alpha = AcceptanceMatrix::from_rows(&self.alpha)?;
        Ok(Problem::new(self.models, alpha, self.t_max)?.with_vocab_size(self.vocab_size))
    }
}

/// Parses a problem-config JSON document.
pub fn load_problem(text: &str) -> Result<Problem> {
    let config: ProblemConfig = serde_json::from_str(text)?;
    config.into_problem()
}

/// An ordered model subset (ending at the target) plus the per-level batch
/// sizes. `t_params[n]` is the number of tokens level `n` accumulates before
/// passing them up.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchyPlan {
    pub sigma: Vec<usize>,
    pub t_params: Vec<u32>,
}

impl HierarchyPlan {
    /// Builds a plan whose batch sizes are nondecreasing up the hierarchy,
    /// the shape every optimizer result has.
    pub fn new(sigma: Vec<usize>, t_params: Vec<u32>) -> Result<Self> {
        let plan = Self::new_unordered(sigma, t_params)?;
        if plan.t_params.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Plan(format!(
                "T must be nondecreasing up the hierarchy, got {:?}",
                plan.t_params
            )));
        }
        Ok(plan)
    }

    /// Like [`HierarchyPlan::new`] but allows batch sizes to decrease.
    pub fn new_unordered(sigma: Vec<usize>, t_params: Vec<u32>) -> Result<Self> {
        if sigma.len() < 2 {
            return Err(Error::Plan(format!("need at least one drafter and a target, got {sigma:?}")));
        }
        if sigma.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Plan(format!("model indices must be strictly increasing: {sigma:?}")));
        }
        if t_params.len() != sigma.len() - 1 {
            return Err(Error::Plan(format!(
                "expected {} T values for {} models, got {}",
                sigma.len() - 1,
                sigma.len(),
                t_params.len()
            )));
        }
        if t_params.contains(&0) {
            return Err(Error::Plan("T values must be at least 1".into()));
        }
        Ok(Self { sigma, t_params })
    }

    /// Two-level plan: one drafter with draft length `t`.
    pub fn single_draft(draft: usize, target: usize, t: u32) -> Result<Self> {
        Self::new(vec![draft, target], vec![t])
    }

    /// Number of models in the hierarchy.
    pub fn depth(&self) -> usize {
        self.sigma.len()
    }

    /// Checks the plan against a problem: ends at the target, indices in
    /// range, batch sizes within `t_max`.
    pub fn validate_for(&self, problem: &Problem) -> Result<()> {
        if *self.sigma.last().expect("nonempty sigma") != problem.target() {
            return Err(Error::Plan(format!(
                "plan must end at the target model {}, got {:?}",
                problem.target(),
                self.sigma
            )));
        }
        if let Some(&t) = self.t_params.iter().find(|&&t| t > problem.t_max()) {
            return Err(Error::Plan(format!("T = {t} exceeds t_max = {}", problem.t_max())));
        }
        Ok(())
    }
}

impl fmt::Display for HierarchyPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sigma={:?} T={:?}", self.sigma, self.t_params)
    }
}
