//! The recursive hierarchical generation loop over an abstract model
//! interface, with the single-draft and autoregressive baselines.
//!
//! Level 0 drafts `T_0` tokens autoregressively. Each intermediate level
//! keeps asking the level below for drafts and verifying them until it holds
//! `T_n` tokens. The target verifies one batch per outer round. Tokens a
//! level emits carry that level's distributions, which the level above uses
//! as the draft law.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::domain::{Categorical, HierarchyPlan, Token};
use crate::error::{Error, Result};
use crate::sampling::{verify, DraftBatch};

/// A next-token model with a nominal cost per forward pass.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Cost charged for one call, whether it samples one token or scores a
    /// whole continuation.
    fn cost(&self) -> f64;

    /// Next-token distribution after `context`. Must be deterministic.
    fn distribution(&self, context: &[Token]) -> Categorical;

    /// Samples the next token along with the distribution it came from.
    fn next_token(&self, context: &[Token], rng: &mut dyn RngCore) -> (Token, Categorical) {
        let dist = self.distribution(context);
        (dist.sample(rng), dist)
    }

    /// The `t + 1` distributions after each prefix of `continuation`
    /// (including the empty and the full prefix). Counts as one call.
    fn prefix_distributions(&self, context: &[Token], continuation: &[Token]) -> Vec<Categorical> {
        let mut buf = Vec::with_capacity(context.len() + continuation.len());
        buf.extend_from_slice(context);
        let mut out = Vec::with_capacity(continuation.len() + 1);
        out.push(self.distribution(&buf));
        for &tok in continuation {
            buf.push(tok);
            out.push(self.distribution(&buf));
        }
        out
    }
}

/// What an intermediate level does with tokens beyond its quota `T_n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OvershootPolicy {
    /// Hand exactly `T_n` tokens upward and drop the rest.
    #[default]
    Truncate,
    /// Hand every accumulated token upward.
    ReturnAll,
}

/// Acceptance decision used at each verification.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum VerifyRule {
    /// Speculative rejection sampling; preserves the target's law.
    #[default]
    Rejection,
    /// Accept each draft with a fixed probability per level, ignoring the
    /// distributions. Entry `n - 1` is the rate used when level `n` verifies.
    /// The token after the accepted prefix is drawn from the verifier.
    Coin(Vec<f64>),
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub overshoot: OvershootPolicy,
    pub rule: VerifyRule,
    /// Record every model call in `SessionStats::trace`.
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallKind {
    Generate,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub level: usize,
    pub kind: CallKind,
    /// Tokens in the continuation scored (verify) or 1 (generate).
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LevelStats {
    pub generate_calls: u64,
    pub verify_calls: u64,
    /// Verification rounds this level performed.
    pub rounds: u64,
    /// Draft tokens received from the level below.
    pub drafted: u64,
    pub accepted: u64,
    /// `accepted_hist[n]` counts rounds that accepted exactly `n` drafts
    /// (and so yielded `n + 1` tokens).
    pub accepted_hist: Vec<u64>,
    /// Nominal cost of this level's calls.
    pub cost: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl LevelStats {
    pub fn calls(&self) -> u64 {
        self.generate_calls + self.verify_calls
    }

    pub(crate) fn record_round(&mut self, drafted: usize, accepted: usize) {
        self.rounds += 1;
        self.drafted += drafted as u64;
        self.accepted += accepted as u64;
        if self.accepted_hist.len() <= accepted {
            self.accepted_hist.resize(accepted + 1, 0);
        }
        self.accepted_hist[accepted] += 1;
    }

    fn merge(&mut self, other: &LevelStats) {
        self.generate_calls += other.generate_calls;
        self.verify_calls += other.verify_calls;
        self.rounds += other.rounds;
        self.drafted += other.drafted;
        self.accepted += other.accepted;
        if self.accepted_hist.len() < other.accepted_hist.len() {
            self.accepted_hist.resize(other.accepted_hist.len(), 0);
        }
        for (a, b) in self.accepted_hist.iter_mut().zip(&other.accepted_hist) {
            *a += b;
        }
        self.cost += other.cost;
        self.wall_time += other.wall_time;
    }
}

/// Counters for one generation session. `levels[0]` is the base drafter
/// and the last entry is the target.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionStats {
    pub levels: Vec<LevelStats>,
    pub total_cost: f64,
    pub tokens_emitted: u64,
    /// Verification rounds at the top level.
    pub outer_rounds: u64,
    #[serde(skip)]
    pub trace: Vec<CallRecord>,
}

impl SessionStats {
    pub fn new(levels: usize) -> Self {
        Self { levels: vec![LevelStats::default(); levels], ..Self::default() }
    }

    /// Nominal cost per emitted token.
    pub fn latency_per_token(&self) -> f64 {
        self.total_cost / self.tokens_emitted as f64
    }

    pub fn wall_time(&self) -> Duration {
        self.levels.iter().map(|l| l.wall_time).sum()
    }

    /// Adds another session's counters (traces are not merged).
    pub fn merge(&mut self, other: &SessionStats) {
        if self.levels.len() < other.levels.len() {
            self.levels.resize(other.levels.len(), LevelStats::default());
        }
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            a.merge(b);
        }
        self.total_cost += other.total_cost;
        self.tokens_emitted += other.tokens_emitted;
        self.outer_rounds += other.outer_rounds;
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<Token>,
    pub stats: SessionStats,
}

struct Session<'a, R: Rng + ?Sized> {
    models: &'a [&'a dyn LanguageModel],
    t: &'a [u32],
    options: &'a EngineOptions,
    stats: SessionStats,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Session<'_, R> {
    fn charge(&mut self, level: usize, kind: CallKind, tokens: usize, elapsed: Duration) {
        let cost = self.models[level].cost();
        let stats = &mut self.stats.levels[level];
        match kind {
            CallKind::Generate => stats.generate_calls += 1,
            CallKind::Verify => stats.verify_calls += 1,
        }
        stats.cost += cost;
        stats.wall_time += elapsed;
        self.stats.total_cost += cost;
        if self.options.record_trace {
            self.stats.trace.push(CallRecord { level, kind, tokens });
        }
    }

    /// Tokens produced by `level` for the level above, with `level`'s
    /// distribution at each position. `ctx` is restored before returning.
    fn draft(&mut self, level: usize, ctx: &mut Vec<Token>) -> Result<(Vec<Token>, Vec<Categorical>)> {
        let quota = self.t[level] as usize;
        let base = ctx.len();
        let mut tokens = Vec::with_capacity(quota + 1);
        let mut probs = Vec::with_capacity(quota + 1);
        if level == 0 {
            for _ in 0..quota {
                let start = Instant::now();
                let dist = self.models[0].distribution(ctx);
                let tok = dist.sample(&mut *self.rng);
                self.charge(0, CallKind::Generate, 1, start.elapsed());
                ctx.push(tok);
                tokens.push(tok);
                probs.push(dist);
            }
        } else {
            while tokens.len() < quota {
                let (drafts, q) = self.draft(level - 1, ctx)?;
                let (out, p) = self.verify_round(level, ctx, drafts, q)?;
                ctx.extend_from_slice(&out);
                tokens.extend(out);
                probs.extend(p);
            }
            if self.options.overshoot == OvershootPolicy::Truncate {
                tokens.truncate(quota);
                probs.truncate(quota);
            }
        }
        ctx.truncate(base);
        Ok((tokens, probs))
    }

    /// One verification by `level` of drafts following `ctx`.
    fn verify_round(
        &mut self,
        level: usize,
        ctx: &[Token],
        drafts: Vec<Token>,
        q: Vec<Categorical>,
    ) -> Result<(Vec<Token>, Vec<Categorical>)> {
        let start = Instant::now();
        let mut p = self.models[level].prefix_distributions(ctx, &drafts);
        self.charge(level, CallKind::Verify, drafts.len(), start.elapsed());
        let drafted = drafts.len();
        let (tokens, probs, accepted) = match &self.options.rule {
            VerifyRule::Rejection => {
                let out = verify(&DraftBatch::new(drafts, q)?, p, &mut *self.rng)?;
                (out.output_tokens, out.output_probs, out.accepted_count)
            }
            VerifyRule::Coin(alphas) => {
                let alpha = alphas[level - 1];
                let accepted = (0..drafted).take_while(|_| self.rng.random_bool(alpha)).count();
                let last = p[accepted].sample(&mut *self.rng);
                let mut tokens = drafts;
                tokens.truncate(accepted);
                tokens.push(last);
                p.truncate(accepted + 1);
                (tokens, p, accepted)
            }
        };
        self.stats.levels[level].record_round(drafted, accepted);
        Ok((tokens, probs))
    }
}

fn check_inputs(
    models: &[&dyn LanguageModel],
    plan: &HierarchyPlan,
    context: &[Token],
    min_tokens: usize,
    options: &EngineOptions,
) -> Result<()> {
    if models.len() != plan.sigma.len() {
        return Err(Error::Plan(format!(
            "plan has {} levels but {} models were supplied",
            plan.sigma.len(),
            models.len()
        )));
    }
    if min_tokens == 0 {
        return Err(Error::Input("min_tokens must be at least 1".into()));
    }
    let vocab = models[0].vocab_size();
    if let Some(m) = models.iter().find(|m| m.vocab_size() != vocab) {
        return Err(Error::DimensionMismatch { expected: vocab, actual: m.vocab_size() });
    }
    if let Some(&tok) = context.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Input(format!("context token {tok} outside vocabulary of {vocab}")));
    }
    if let VerifyRule::Coin(alphas) = &options.rule {
        if alphas.len() != plan.t_params.len() {
            return Err(Error::Input(format!(
                "coin rule needs {} rates, got {}",
                plan.t_params.len(),
                alphas.len()
            )));
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Input("coin rates must lie in [0, 1]".into()));
        }
    }
    Ok(())
}

/// Generates at least `min_tokens` tokens after `context` with the
/// hierarchy `plan`. `models[n]` runs level `n`; the last is the target.
pub fn hsd_generate<R: Rng + ?Sized>(
    models: &[&dyn LanguageModel],
    plan: &HierarchyPlan,
    context: &[Token],
    min_tokens: usize,
    rng: &mut R,
) -> Result<Generation> {
    hsd_generate_with(models, plan, context, min_tokens, &EngineOptions::default(), rng)
}

pub fn hsd_generate_with<R: Rng + ?Sized>(
    models: &[&dyn LanguageModel],
    plan: &HierarchyPlan,
    context: &[Token],
    min_tokens: usize,
    options: &EngineOptions,
    rng: &mut R,
) -> Result<Generation> {
    check_inputs(models, plan, context, min_tokens, options)?;
    let top = models.len() - 1;
    let mut session = Session {
        models,
        t: &plan.t_params,
        options,
        stats: SessionStats::new(models.len()),
        rng,
    };
    let mut ctx = context.to_vec();
    let mut emitted = Vec::with_capacity(min_tokens + plan.t_params[top - 1] as usize + 1);
    while emitted.len() < min_tokens {
        let (drafts, q) = session.draft(top - 1, &mut ctx)?;
        let (out, _) = session.verify_round(top, &ctx, drafts, q)?;
        session.stats.outer_rounds += 1;
        ctx.extend_from_slice(&out);
        emitted.extend(out);
    }
    let mut stats = session.stats;
    stats.tokens_emitted = emitted.len() as u64;
    Ok(Generation { tokens: emitted, stats })
}

/// Standard speculative decoding with one drafter and draft length `t`.
pub fn single_draft_generate<R: Rng + ?Sized>(
    draft: &dyn LanguageModel,
    target: &dyn LanguageModel,
    t: u32,
    context: &[Token],
    min_tokens: usize,
    options: &EngineOptions,
    rng: &mut R,
) -> Result<Generation> {
    let plan = HierarchyPlan::single_draft(0, 1, t)?;
    hsd_generate_with(&[draft, target], &plan, context, min_tokens, options, rng)
}

/// Samples `n` tokens from `target` one call at a time.
pub fn autoregressive_generate<R: Rng + ?Sized>(
    target: &dyn LanguageModel,
    context: &[Token],
    n: usize,
    rng: &mut R,
) -> Result<Generation> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    let mut stats = SessionStats::new(1);
    let mut ctx = context.to_vec();
    let mut tokens = Vec::with_capacity(n);
    let level = &mut stats.levels[0];
    for _ in 0..n {
        let start = Instant::now();
        let tok = target.distribution(&ctx).sample(rng);
        level.wall_time += start.elapsed();
        level.generate_calls += 1;
        level.cost += target.cost();
        ctx.push(tok);
        tokens.push(tok);
    }
    stats.total_cost = stats.levels[0].cost;
    stats.tokens_emitted = n as u64;
    Ok(Generation { tokens, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{expected_latency, expected_round_tokens};
    use crate::domain::{AcceptanceMatrix, Problem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Distribution depends on the last token through a fixed table.
    struct TableModel {
        rows: Vec<Categorical>,
        cost: f64,
    }

    impl TableModel {
        fn new(rows: Vec<Vec<f64>>, cost: f64) -> Self {
            Self { rows: rows.into_iter().map(|r| Categorical::from_weights(r).unwrap()).collect(), cost }
        }

        fn random(vocab: usize, seed: u64, cost: f64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = (0..vocab).map(|_| (0..vocab).map(|_| rng.random::<f64>() + 0.05).collect()).collect();
            Self::new(rows, cost)
        }

        /// Mixture of `self` with `other`, weight `w` on `self`.
        fn blend(&self, other: &Self, w: f64, cost: f64) -> Self {
            let rows = self
                .rows
                .iter()
                .zip(&other.rows)
                .map(|(a, b)| a.probs().iter().zip(b.probs()).map(|(x, y)| w * x + (1.0 - w) * y).collect())
                .collect();
            Self::new(rows, cost)
        }
    }

    impl LanguageModel for TableModel {
        fn vocab_size(&self) -> usize {
            self.rows.len()
        }
        fn cost(&self) -> f64 {
            self.cost
        }
        fn distribution(&self, context: &[Token]) -> Categorical {
            self.rows[context.last().copied().unwrap_or(0) as usize].clone()
        }
    }

    fn empirical_tv(counts: &[u64], n: u64, p: &Categorical) -> f64 {
        0.5 * counts.iter().zip(p.probs()).map(|(&c, &q)| (c as f64 / n as f64 - q).abs()).sum::<f64>()
    }

    fn first_token_tv(models: &[&dyn LanguageModel], plan: &HierarchyPlan, seed: u64) -> f64 {
        let ctx = [3, 1];
        let target = models[models.len() - 1];
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; target.vocab_size()];
        for _ in 0..n {
            let g = hsd_generate(models, plan, &ctx, 1, &mut rng).unwrap();
            counts[g.tokens[0] as usize] += 1;
        }
        empirical_tv(&counts, n, &target.distribution(&ctx))
    }

    #[test]
    fn identical_drafter_accepts_everything() {
        let m = TableModel::random(6, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = single_draft_generate(&m, &m, 4, &[0], 50, &EngineOptions::default(), &mut rng).unwrap();
        let top = &g.stats.levels[1];
        assert_eq!(top.accepted, top.drafted);
        assert_eq!(g.tokens.len() as u64, 5 * top.rounds);
    }

    #[test]
    fn t1_identical_gives_two_tokens_per_round() {
        let m = TableModel::random(4, 7, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = single_draft_generate(&m, &m, 1, &[], 20, &EngineOptions::default(), &mut rng).unwrap();
        assert_eq!(g.stats.levels[1].accepted_hist, vec![0, g.stats.levels[1].rounds]);
        assert_eq!(g.tokens.len(), 20);
    }

    #[test]
    fn two_level_matches_standard_speculative_decoding() {
        // Hand-rolled speculative decoding loop driven by the same RNG.
        let target = TableModel::random(5, 11, 10.0);
        let noise = TableModel::random(5, 12, 1.0);
        let draft = target.blend(&noise, 0.5, 1.0);
        let ctx = vec![2u32];
        let plan = HierarchyPlan::single_draft(0, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = hsd_generate(&[&draft, &target], &plan, &ctx, 40, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = ctx.clone();
        while out.len() - ctx.len() < 40 {
            let mut d = Vec::new();
            let mut q = Vec::new();
            let mut c = out.clone();
            for _ in 0..3 {
                let dist = draft.distribution(&c);
                let tok = dist.sample(&mut rng);
                c.push(tok);
                d.push(tok);
                q.push(dist);
            }
            let p = target.prefix_distributions(&out, &d);
            let v = verify(&DraftBatch::new(d, q).unwrap(), p, &mut rng).unwrap();
            out.extend(v.output_tokens);
        }
        assert_eq!(g.tokens, out[ctx.len()..]);
        assert_eq!(g.stats.total_cost, g.stats.levels[0].calls() as f64 + 10.0 * g.stats.levels[1].calls() as f64);
    }

    #[test]
    fn single_draft_is_trace_identical_to_two_level_hsd() {
        let target = TableModel::random(5, 21, 4.0);
        let draft = target.blend(&TableModel::random(5, 22, 1.0), 0.3, 1.0);
        let opts = EngineOptions { record_trace: true, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = single_draft_generate(&draft, &target, 4, &[1], 30, &opts, &mut rng).unwrap();
        let plan = HierarchyPlan::single_draft(3, 9, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = hsd_generate_with(&[&draft, &target], &plan, &[1], 30, &opts, &mut rng).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.stats.trace, b.stats.trace);
        assert!(!a.stats.trace.is_empty());
    }

    #[test]
    fn three_level_first_token_law() {
        let target = TableModel::random(8, 31, 20.0);
        let mid = target.blend(&TableModel::random(8, 32, 1.0), 0.7, 3.0);
        let base = target.blend(&TableModel::random(8, 33, 1.0), 0.3, 0.5);
        let plan = HierarchyPlan::new(vec![0, 1, 2], vec![2, 3]).unwrap();
        let tv = first_token_tv(&[&base, &mid, &target], &plan, 34);
        assert!(tv < 0.01, "TV {tv}");
    }

    #[test]
    fn four_level_first_token_law_with_return_all() {
        let target = TableModel::random(6, 41, 20.0);
        let a = target.blend(&TableModel::random(6, 42, 1.0), 0.8, 5.0);
        let b = target.blend(&TableModel::random(6, 43, 1.0), 0.5, 1.0);
        let c = target.blend(&TableModel::random(6, 44, 1.0), 0.2, 0.1);
        let plan = HierarchyPlan::new(vec![0, 1, 2, 3], vec![1, 2, 2]).unwrap();
        let models: [&dyn LanguageModel; 4] = [&c, &b, &a, &target];
        let opts = EngineOptions { overshoot: OvershootPolicy::ReturnAll, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut counts = vec![0u64; 6];
        let n = 100_000;
        for _ in 0..n {
            let g = hsd_generate_with(&models, &plan, &[5], 1, &opts, &mut rng).unwrap();
            counts[g.tokens[0] as usize] += 1;
        }
        let tv = empirical_tv(&counts, n, &target.distribution(&[5]));
        assert!(tv < 0.01, "TV {tv}");
    }

    #[test]
    fn coin_drafter_mean_tokens_per_round() {
        let m = TableModel::random(4, 51, 1.0);
        let opts = EngineOptions { rule: VerifyRule::Coin(vec![0.8]), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let rounds = 100_000u64;
        let mut lengths = Vec::with_capacity(rounds as usize);
        for _ in 0..rounds {
            let g = single_draft_generate(&m, &m, 5, &[], 1, &opts, &mut rng).unwrap();
            lengths.push(g.tokens.len() as f64);
        }
        let n = rounds as f64;
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (1.0 - 0.8f64.powi(6)) / 0.2;
        assert!((expected - 3.689).abs() < 1e-3);
        assert!((mean - expected).abs() <= 3.0 * (var / n).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn call_trace_roles() {
        let target = TableModel::random(5, 61, 8.0);
        let mid = target.blend(&TableModel::random(5, 62, 1.0), 0.6, 2.0);
        let base = target.blend(&TableModel::random(5, 63, 1.0), 0.2, 0.5);
        let plan = HierarchyPlan::new(vec![0, 1, 2], vec![2, 4]).unwrap();
        let opts = EngineOptions { record_trace: true, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let g = hsd_generate_with(&[&base, &mid, &target], &plan, &[0], 100, &opts, &mut rng).unwrap();
        let trace = &g.stats.trace;
        assert!(trace.iter().filter(|c| c.level == 0).all(|c| c.kind == CallKind::Generate));
        assert!(trace.iter().filter(|c| c.level == 2).all(|c| c.kind == CallKind::Verify));
        assert!(trace.iter().any(|c| c.level == 1 && c.kind == CallKind::Verify));
        // level 1 drafts for the target only through its verified buffer
        assert_eq!(g.stats.levels[1].generate_calls, 0);
        // truncation: the target always sees exactly T_1 drafts
        assert!(trace.iter().filter(|c| c.level == 2).all(|c| c.tokens == 4));
        assert!(trace.iter().filter(|c| c.level == 1).all(|c| c.tokens == 2));

        let s = &g.stats;
        let by_calls: f64 = s.levels.iter().zip([0.5, 2.0, 8.0]).map(|(l, c)| l.calls() as f64 * c).sum();
        assert!((s.total_cost - by_calls).abs() < 1e-9);
        assert_eq!(s.levels[2].rounds, s.outer_rounds);
        assert!(s.tokens_emitted >= s.outer_rounds);
        for l in &s.levels[1..] {
            assert_eq!(l.accepted_hist.iter().sum::<u64>(), l.rounds);
        }
    }

    #[test]
    fn coin_accounting_matches_latency_model() {
        let alphas = [0.6, 0.75];
        let costs = [0.2, 1.5, 12.0];
        let target = TableModel::random(4, 71, costs[2]);
        let mid = TableModel::random(4, 72, costs[1]);
        let base = TableModel::random(4, 73, costs[0]);
        let plan = HierarchyPlan::new(vec![0, 1, 2], vec![2, 5]).unwrap();
        let opts = EngineOptions { rule: VerifyRule::Coin(alphas.to_vec()), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let g = hsd_generate_with(&[&base, &mid, &target], &plan, &[], 200_000, &opts, &mut rng).unwrap();

        // alpha between levels 0 and 2 does not enter the latency of this plan
        let alpha = AcceptanceMatrix::from_upper(&[&[alphas[0], 0.5], &[alphas[1]]]).unwrap();
        let problem = Problem::from_costs(&costs, alpha, 5).unwrap();
        let l = expected_latency(&problem, &plan).unwrap().latency_per_token;
        let sim = g.stats.latency_per_token();
        assert!((sim - l).abs() / l < 0.01, "{sim} vs {l}");

        let top = &g.stats.levels[2];
        let mean_tokens = g.stats.tokens_emitted as f64 / top.rounds as f64;
        assert!((mean_tokens - expected_round_tokens(alphas[1], 5)).abs() < 0.02);
    }

    #[test]
    fn autoregressive_cost_and_law() {
        let target = TableModel::random(5, 81, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let g = autoregressive_generate(&target, &[0], 1, &mut rng).unwrap();
        assert_eq!((g.stats.levels[0].calls(), g.stats.total_cost), (1, 3.0));
        let g = autoregressive_generate(&target, &[0], 100, &mut rng).unwrap();
        assert_eq!(g.tokens.len(), 100);
        assert!((g.stats.total_cost - 300.0).abs() < 1e-9);

        let n = 200_000;
        let mut counts = vec![0u64; 5];
        for _ in 0..n {
            counts[autoregressive_generate(&target, &[2], 1, &mut rng).unwrap().tokens[0] as usize] += 1;
        }
        assert!(empirical_tv(&counts, n, &target.distribution(&[2])) < 0.01);
    }

    #[test]
    fn input_errors() {
        let a = TableModel::random(4, 1, 1.0);
        let b = TableModel::random(5, 2, 1.0);
        let plan = HierarchyPlan::single_draft(0, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(hsd_generate(&[&a], &plan, &[], 1, &mut rng), Err(Error::Plan(_))));
        assert!(matches!(
            hsd_generate(&[&a, &b], &plan, &[], 1, &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(hsd_generate(&[&a, &a], &plan, &[], 0, &mut rng).is_err());
        assert!(hsd_generate(&[&a, &a], &plan, &[9], 1, &mut rng).is_err());
        let opts = EngineOptions { rule: VerifyRule::Coin(vec![0.5, 0.5]), ..Default::default() };
        assert!(hsd_generate_with(&[&a, &a], &plan, &[], 1, &opts, &mut rng).is_err());
        assert!(autoregressive_generate(&a, &[], 0, &mut rng).is_err());
    }
}
