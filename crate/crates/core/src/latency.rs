//! Analytical latency model: tokens per verification round, the expected
//! number of rounds a level needs to fill its buffer, and the expected cost
//! per emitted token of a hierarchy.

use std::collections::HashMap;

use serde::Serialize;

use crate::domain::{HierarchyPlan, Problem};
use crate::error::Result;

/// Acceptance rates at or above `1 - ALPHA_ONE_EPS` use the `alpha = 1` limits.
const ALPHA_ONE_EPS: f64 = 1e-12;

/// Law of the number of tokens a verification round yields from a batch of
/// `t` drafts with IID acceptance `alpha`: entry `n - 1` is the probability
/// of `n` tokens, for `n` in `1..=t+1`.
pub fn round_token_distribution(alpha: f64, t: u32) -> Vec<f64> {
    let alpha = alpha.clamp(0.0, 1.0);
    let t = t as usize;
    let mut out = Vec::with_capacity(t + 1);
    let mut pow = 1.0;
    for _ in 0..t {
        out.push(pow * (1.0 - alpha));
        pow *= alpha;
    }
    out.push(pow);
    out
}

/// Expected tokens per round, `(1 - alpha^(t+1)) / (1 - alpha)`.
pub fn expected_round_tokens(alpha: f64, t: u32) -> f64 {
    1.0 / top_rate(alpha, t)
}

/// Renewal recursion `g(r) = 1 + Σ_n P(n) g(r - n)` with `g(r <= 0) = 0`,
/// evaluated for every threshold `r` in `0..=tj_max`.
fn rounds_profile(alpha: f64, ti: u32, tj_max: u32) -> Vec<f64> {
    let step = round_token_distribution(alpha, ti);
    let mut g = vec![0.0; tj_max as usize + 1];
    for r in 1..g.len() {
        let mut acc = 1.0;
        for (k, &p) in step.iter().enumerate() {
            let n = k + 1;
            if n >= r {
                break;
            }
            acc += p * g[r - n];
        }
        g[r] = acc;
    }
    g
}

/// Expected number of draft/verify rounds until a level needing `tj`
/// tokens has accumulated at least that many, when each round verifies a
/// batch of `ti` drafts with IID acceptance `alpha`.
pub fn gamma(alpha: f64, ti: u32, tj: u32) -> f64 {
    assert!(ti >= 1 && tj >= 1, "batch sizes must be positive");
    rounds_profile(alpha, ti, tj)[tj as usize]
}

/// Memoized `gamma`, keyed by the exact bit pattern of `alpha` and the
/// lower batch size. One entry stores the whole profile up to `t_max`.
#[derive(Debug, Clone)]
pub struct GammaTable {
    t_max: u32,
    memo: HashMap<(u64, u32), Vec<f64>>,
}

impl GammaTable {
    pub fn new(t_max: u32) -> Self {
        Self { t_max, memo: HashMap::new() }
    }

    pub fn get(&mut self, alpha: f64, ti: u32, tj: u32) -> f64 {
        assert!(ti >= 1 && tj >= 1, "batch sizes must be positive");
        if tj > self.t_max {
            return gamma(alpha, ti, tj);
        }
        let t_max = self.t_max;
        let profile =
            self.memo.entry((alpha.to_bits(), ti)).or_insert_with(|| rounds_profile(alpha, ti, t_max));
        profile[tj as usize]
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

/// Rounds per emitted token at the top level, `(1 - alpha) / (1 - alpha^(t+1))`,
/// with the limit `1 / (t + 1)` as `alpha -> 1`.
pub fn top_rate(alpha: f64, t: u32) -> f64 {
    let alpha = alpha.clamp(0.0, 1.0);
    if alpha >= 1.0 - ALPHA_ONE_EPS {
        return 1.0 / (t as f64 + 1.0);
    }
    (1.0 - alpha) / (1.0 - alpha.powi(t as i32 + 1))
}

/// Expected latency of a plan with per-level diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub plan: HierarchyPlan,
    /// Expected cost per emitted token.
    pub latency_per_token: f64,
    /// `R` factor of each level, base first: `T_0`, then `gamma` for the
    /// intermediate levels, then the top rate.
    pub r_factors: Vec<f64>,
    /// Share of the latency charged to each level; sums to the latency.
    pub contributions: Vec<f64>,
    /// Target-only latency divided by the hierarchy's latency.
    pub speedup: f64,
}

/// Per-level `R` factors of a plan, base first.
pub(crate) fn r_factors(problem: &Problem, plan: &HierarchyPlan, gammas: &mut GammaTable) -> Vec<f64> {
    let sigma = &plan.sigma;
    let t = &plan.t_params;
    let top = sigma.len() - 1;
    let mut out = Vec::with_capacity(sigma.len());
    out.push(t[0] as f64);
    for n in 1..top {
        out.push(gammas.get(problem.alpha(sigma[n - 1], sigma[n]), t[n - 1], t[n]));
    }
    out.push(top_rate(problem.alpha(sigma[top - 1], sigma[top]), t[top - 1]));
    out
}

/// Latency of a plan using a caller-supplied gamma memo. The plan is
/// assumed valid for the problem.
pub(crate) fn latency_with(problem: &Problem, plan: &HierarchyPlan, gammas: &mut GammaTable) -> f64 {
    let r = r_factors(problem, plan, gammas);
    let mut cost = 0.0;
    for (level, &model) in plan.sigma.iter().enumerate() {
        cost = r[level] * (cost + problem.cost(model));
    }
    cost
}

/// Expected cost per emitted token of running `plan` on `problem` under
/// IID acceptance.
pub fn expected_latency(problem: &Problem, plan: &HierarchyPlan) -> Result<LatencyReport> {
    plan.validate_for(problem)?;
    let mut gammas = GammaTable::new(problem.t_max());
    let r = r_factors(problem, plan, &mut gammas);

    let mut latency = 0.0;
    for (level, &model) in plan.sigma.iter().enumerate() {
        latency = r[level] * (latency + problem.cost(model));
    }

    // contribution of level i is c_i times the product of R over levels >= i
    let mut contributions = vec![0.0; r.len()];
    let mut suffix = 1.0;
    for level in (0..r.len()).rev() {
        suffix *= r[level];
        contributions[level] = problem.cost(plan.sigma[level]) * suffix;
    }

    Ok(LatencyReport {
        plan: plan.clone(),
        latency_per_token: latency,
        speedup: problem.cost(problem.target()) / latency,
        r_factors: r,
        contributions,
    })
}
