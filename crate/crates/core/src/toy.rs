//! Synthetic Markov model families with controllable agreement, and the
//! empirical acceptance-matrix estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{acceptance_rate, AcceptanceMatrix, Categorical, Token};
use crate::engine::LanguageModel;
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB: usize = 16;
pub const DEFAULT_ORDER: usize = 1;
/// Tokens sampled from the target to build each estimation context.
pub const BURN_IN: usize = 10;

/// Next-token model conditioned on the last `order` tokens. Contexts
/// shorter than the window are left-padded with token 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    order: usize,
    vocab: usize,
    rows: Vec<Categorical>,
    cost: f64,
}

impl MarkovModel {
    /// `rows[w]` is the distribution after window `w`, windows encoded in
    /// base `vocab` with the oldest token most significant.
    pub fn new(order: usize, rows: Vec<Categorical>, cost: f64) -> Result<Self> {
        let vocab = rows.first().map(Categorical::len).unwrap_or(0);
        if vocab == 0 {
            return Err(Error::Input("model needs at least one row".into()));
        }
        let expected = vocab.checked_pow(order as u32).ok_or_else(|| Error::Input("table too large".into()))?;
        if rows.len() != expected {
            return Err(Error::Input(format!("order {order} over {vocab} tokens needs {expected} rows")));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != vocab) {
            return Err(Error::DimensionMismatch { expected: vocab, actual: r.len() });
        }
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(Error::Input(format!("cost must be positive, got {cost}")));
        }
        Ok(Self { order, vocab, rows, cost })
    }

    /// Table with Dirichlet(1) rows drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(order: usize, vocab: usize, cost: f64, rng: &mut R) -> Result<Self> {
        let n = vocab.checked_pow(order as u32).ok_or_else(|| Error::Input("table too large".into()))?;
        let rows = (0..n)
            .map(|_| Categorical::from_weights((0..vocab).map(|_| rng.sample::<f64, _>(Exp1)).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(order, rows, cost)
    }

    /// Row-wise mixture `w * a + (1 - w) * b`.
    pub fn mixture(a: &Self, b: &Self, w: f64, cost: f64) -> Result<Self> {
        if a.order != b.order || a.vocab != b.vocab {
            return Err(Error::Input("mixture components must share order and vocabulary".into()));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Input(format!("mixture weight {w} outside [0, 1]")));
        }
        let rows = a
            .rows
            .iter()
            .zip(&b.rows)
            .map(|(x, y)| {
                Categorical::from_weights(
                    x.probs().iter().zip(y.probs()).map(|(p, q)| w * p + (1.0 - w) * q).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(a.order, rows, cost)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &[Categorical] {
        &self.rows
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    fn window(&self, context: &[Token]) -> usize {
        let pad = self.order.saturating_sub(context.len());
        let tail = &context[context.len().saturating_sub(self.order)..];
        let mut idx = 0;
        for _ in 0..pad {
            idx *= self.vocab;
        }
        for &t in tail {
            idx = idx * self.vocab + t as usize;
        }
        idx
    }
}

impl LanguageModel for MarkovModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn cost(&self) -> f64 {
        self.cost
    }

    fn distribution(&self, context: &[Token]) -> Categorical {
        self.rows[self.window(context)].clone()
    }

    // only the last `order` context tokens matter; avoids copying long contexts
    fn prefix_distributions(&self, context: &[Token], continuation: &[Token]) -> Vec<Categorical> {
        let keep = context.len().min(self.order);
        let mut buf = context[context.len() - keep..].to_vec();
        let mut out = Vec::with_capacity(continuation.len() + 1);
        out.push(self.distribution(&buf));
        for &tok in continuation {
            buf.push(tok);
            out.push(self.distribution(&buf[buf.len().saturating_sub(self.order)..]));
        }
        out
    }
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

/// Family description. `agreement[i]` is the weight model `i` puts on the
/// target's rows; the last entry describes the target itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub agreement: Vec<f64>,
    pub costs: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.agreement;
        if a.len() < 2 {
            return Err(Error::Input("a family needs at least two models".into()));
        }
        if self.costs.len() != a.len() {
            return Err(Error::Input(format!("{} agreement entries but {} costs", a.len(), self.costs.len())));
        }
        if self.vocab_size == 0 {
            return Err(Error::Input("vocab_size must be positive".into()));
        }
        if let Some(w) = a.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Input(format!("agreement {w} outside [0, 1]")));
        }
        if a.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Input("agreement schedule must be nondecreasing".into()));
        }
        if a[a.len() - 1] != 1.0 {
            return Err(Error::Input("the last agreement entry (the target) must be 1".into()));
        }
        if self.costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Input("costs must be positive".into()));
        }
        if self.costs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Input("costs must be nondecreasing".into()));
        }
        Ok(())
    }
}

pub fn load_family(text: &str) -> Result<FamilySpec> {
    let spec: FamilySpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Builds the family: a random target table, and for each model a mixture
/// of it with that model's own random noise table.
pub fn make_family(spec: &FamilySpec) -> Result<Vec<MarkovModel>> {
    spec.validate()?;
    let n = spec.agreement.len();
    let target = MarkovModel::random(spec.order, spec.vocab_size, spec.costs[n - 1], &mut stream(spec.seed, 0))?;
    (0..n)
        .map(|i| {
            let w = spec.agreement[i];
            if w == 1.0 {
                return Ok(target.clone().with_cost(spec.costs[i]));
            }
            let noise =
                MarkovModel::random(spec.order, spec.vocab_size, 1.0, &mut stream(spec.seed, i as u64 + 1))?;
            MarkovModel::mixture(&target, &noise, w, spec.costs[i])
        })
        .collect()
}

/// Prompts drawn from the target's own behaviour: `BURN_IN` tokens sampled
/// from the empty context, one independent stream per prompt.
pub fn burn_in_contexts(target: &dyn LanguageModel, n: usize, seed: u64) -> Vec<Vec<Token>> {
    (0..n)
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut ctx = Vec::with_capacity(BURN_IN);
            for _ in 0..BURN_IN {
                let tok = target.distribution(&ctx).sample(&mut rng);
                ctx.push(tok);
            }
            ctx
        })
        .collect()
}

/// Mean pairwise acceptance rate over `contexts`.
pub fn estimate_acceptance_matrix_with(
    models: &[&dyn LanguageModel],
    contexts: &[Vec<Token>],
) -> Result<AcceptanceMatrix> {
    if models.len() < 2 {
        return Err(Error::Input("need at least two models".into()));
    }
    if contexts.is_empty() {
        return Err(Error::Input("need at least one context".into()));
    }
    let vocab = models[0].vocab_size();
    if let Some(m) = models.iter().find(|m| m.vocab_size() != vocab) {
        return Err(Error::DimensionMismatch { expected: vocab, actual: m.vocab_size() });
    }
    let n = models.len();
    let per_context: Vec<Vec<f64>> = contexts
        .par_iter()
        .map(|ctx| {
            let dists: Vec<Categorical> = models.iter().map(|m| m.distribution(ctx)).collect();
            let mut out = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    out.push(acceptance_rate(&dists[j], &dists[i])?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    // summed in context order so the result does not depend on scheduling
    let mut sums = vec![0.0; n * (n - 1) / 2];
    for row in &per_context {
        for (s, a) in sums.iter_mut().zip(row) {
            *s += a;
        }
    }
    let mut alpha = AcceptanceMatrix::ones(n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            alpha.set(i, j, (sums[k] / contexts.len() as f64).clamp(0.0, 1.0));
            k += 1;
        }
    }
    Ok(alpha)
}

/// Estimates the matrix over `n_contexts` burn-in prompts from the last
/// model (the target).
pub fn estimate_acceptance_matrix(
    models: &[&dyn LanguageModel],
    n_contexts: usize,
    seed: u64,
) -> Result<AcceptanceMatrix> {
    let target = *models.last().ok_or_else(|| Error::Input("no models".into()))?;
    estimate_acceptance_matrix_with(models, &burn_in_contexts(target, n_contexts, seed))
}

pub fn as_dyn(models: &[MarkovModel]) -> Vec<&dyn LanguageModel> {
    models.iter().map(|m| m as &dyn LanguageModel).collect()
}
