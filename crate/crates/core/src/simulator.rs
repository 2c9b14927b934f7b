//! Monte Carlo validation of the latency model: IID coin acceptance versus
//! real models, configured costs versus measured wall time.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{HierarchyPlan, Problem};
use crate::engine::{hsd_generate_with, EngineOptions, LanguageModel, OvershootPolicy, SessionStats, VerifyRule};
use crate::error::{Error, Result};
use crate::latency::expected_latency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptanceMode {
    /// Rejection sampling against the actual model distributions.
    ModelBased,
    /// Each draft is accepted by a coin with the matrix's acceptance rate.
    IidCoin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// Nominal per-call costs.
    Configured,
    /// Host wall time of the model calls, in seconds.
    Wallclock,
}

impl fmt::Display for AcceptanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcceptanceMode::ModelBased => "model-based",
            AcceptanceMode::IidCoin => "iid-coin",
        })
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::Configured => "configured",
            CostMode::Wallclock => "wallclock",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub acceptance: AcceptanceMode,
    pub cost: CostMode,
    /// Tokens generated per trial.
    pub n_tokens: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip)]
    pub overshoot: OvershootPolicy,
}

impl SimConfig {
    pub fn new(acceptance: AcceptanceMode, cost: CostMode, n_tokens: usize, trials: usize, seed: u64) -> Self {
        Self { acceptance, cost, n_tokens, trials, seed, overshoot: OvershootPolicy::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.trials == 0 {
            return Err(Error::Input("n_tokens and trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the simulation runs on. Coin mode with configured costs needs only
/// the problem; every other mode needs the models, indexed like the
/// problem's (model `i` of the plan is `models[i]`).
#[derive(Clone, Copy, Default)]
pub struct SimInput<'a> {
    pub problem: Option<&'a Problem>,
    pub models: Option<&'a [&'a dyn LanguageModel]>,
}

impl<'a> SimInput<'a> {
    pub fn problem(problem: &'a Problem) -> Self {
        Self { problem: Some(problem), models: None }
    }

    pub fn models(models: &'a [&'a dyn LanguageModel]) -> Self {
        Self { problem: None, models: Some(models) }
    }

    pub fn both(problem: &'a Problem, models: &'a [&'a dyn LanguageModel]) -> Self {
        Self { problem: Some(problem), models: Some(models) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub acceptance: AcceptanceMode,
    pub cost: CostMode,
    pub plan: HierarchyPlan,
    pub trials: usize,
    pub n_tokens: usize,
    /// Mean over trials of cost per emitted token.
    pub mean_latency: f64,
    /// Standard error across trials; absent for a single trial.
    pub std_error: Option<f64>,
    /// Analytical latency when a problem is available and costs are nominal.
    pub analytical: Option<f64>,
    pub tokens_emitted: u64,
    /// Verification rounds per level, base first (level 0 never verifies).
    pub rounds: Vec<u64>,
    /// Per level, rounds by number of accepted drafts.
    pub accepted_hist: Vec<Vec<u64>>,
}

impl SimReport {
    pub fn rel_err(&self) -> Option<f64> {
        self.analytical.map(|l| (self.mean_latency - l).abs() / l)
    }
}

pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-level coin rates and costs of a plan on a problem.
fn plan_rates(problem: &Problem, plan: &HierarchyPlan) -> (Vec<f64>, Vec<f64>) {
    let alphas = plan.sigma.windows(2).map(|w| problem.alpha(w[0], w[1])).collect();
    let costs = plan.sigma.iter().map(|&m| problem.cost(m)).collect();
    (alphas, costs)
}

/// The engine's recursion with a coin per draft and no distributions.
struct CoinTwin<'a, R: Rng> {
    t: &'a [u32],
    alphas: &'a [f64],
    costs: &'a [f64],
    overshoot: OvershootPolicy,
    stats: SessionStats,
    rng: R,
}

impl<R: Rng> CoinTwin<'_, R> {
    fn draft(&mut self, level: usize) -> usize {
        let quota = self.t[level] as usize;
        if level == 0 {
            let l = &mut self.stats.levels[0];
            l.generate_calls += quota as u64;
            l.cost += quota as f64 * self.costs[0];
            self.stats.total_cost += quota as f64 * self.costs[0];
            return quota;
        }
        let mut count = 0;
        while count < quota {
            let drafted = self.draft(level - 1);
            count += self.verify(level, drafted);
        }
        match self.overshoot {
            OvershootPolicy::Truncate => quota,
            OvershootPolicy::ReturnAll => count,
        }
    }

    fn verify(&mut self, level: usize, drafted: usize) -> usize {
        let alpha = self.alphas[level - 1];
        let accepted = (0..drafted).take_while(|_| self.rng.random_bool(alpha)).count();
        let l = &mut self.stats.levels[level];
        l.verify_calls += 1;
        l.cost += self.costs[level];
        l.record_round(drafted, accepted);
        self.stats.total_cost += self.costs[level];
        accepted + 1
    }

    fn run(mut self, n_tokens: usize) -> SessionStats {
        let top = self.costs.len() - 1;
        let mut emitted = 0;
        while emitted < n_tokens {
            let drafted = self.draft(top - 1);
            emitted += self.verify(top, drafted);
            self.stats.outer_rounds += 1;
        }
        self.stats.tokens_emitted = emitted as u64;
        self.stats
    }
}

/// Runs one coin-twin session.
pub fn coin_session<R: Rng>(
    plan: &HierarchyPlan,
    alphas: &[f64],
    costs: &[f64],
    n_tokens: usize,
    overshoot: OvershootPolicy,
    rng: R,
) -> SessionStats {
    CoinTwin { t: &plan.t_params, alphas, costs, overshoot, stats: SessionStats::new(costs.len()), rng }
        .run(n_tokens)
}

fn mean_and_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Simulates `config.trials` independent sessions of `plan` and reports
/// the per-token latency.
pub fn simulate(input: SimInput<'_>, plan: &HierarchyPlan, config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let levels = plan.sigma.len();

    let sessions: Vec<(SessionStats, f64)> = match (config.acceptance, config.cost) {
        (AcceptanceMode::IidCoin, CostMode::Configured) => {
            let problem = input
                .problem
                .ok_or_else(|| Error::ModeMismatch("iid-coin mode needs a problem (costs and matrix)".into()))?;
            plan.validate_for(problem)?;
            let (alphas, costs) = plan_rates(problem, plan);
            (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    let rng = stream(config.seed, trial as u64);
                    let s = coin_session(plan, &alphas, &costs, config.n_tokens, config.overshoot, rng);
                    let lat = s.latency_per_token();
                    (s, lat)
                })
                .collect()
        }
        (acceptance, cost) => {
            let models = input.models.ok_or_else(|| {
                Error::ModeMismatch(format!("{acceptance} acceptance with {cost} costs needs models"))
            })?;
            if let Some(&m) = plan.sigma.iter().find(|&&m| m >= models.len()) {
                return Err(Error::Plan(format!("plan uses model {m} but only {} models given", models.len())));
            }
            let chosen: Vec<&dyn LanguageModel> = plan.sigma.iter().map(|&m| models[m]).collect();
            let rule = match acceptance {
                AcceptanceMode::ModelBased => VerifyRule::Rejection,
                AcceptanceMode::IidCoin => {
                    let problem = input
                        .problem
                        .ok_or_else(|| Error::ModeMismatch("iid-coin mode needs the acceptance matrix".into()))?;
                    plan.validate_for(problem)?;
                    VerifyRule::Coin(plan_rates(problem, plan).0)
                }
            };
            let options = EngineOptions { overshoot: config.overshoot, rule, record_trace: false };
            // wall time is only meaningful when calls are not competing for cores
            let run = |trial: usize| -> Result<(SessionStats, f64)> {
                let mut rng = stream(config.seed, trial as u64);
                let g = hsd_generate_with(&chosen, plan, &[], config.n_tokens, &options, &mut rng)?;
                let lat = match cost {
                    CostMode::Configured => g.stats.latency_per_token(),
                    CostMode::Wallclock => g.stats.wall_time().as_secs_f64() / g.stats.tokens_emitted as f64,
                };
                Ok((g.stats, lat))
            };
            match cost {
                CostMode::Configured => (0..config.trials).into_par_iter().map(run).collect::<Result<_>>()?,
                CostMode::Wallclock => (0..config.trials).map(run).collect::<Result<_>>()?,
            }
        }
    };

    let mut total = SessionStats::new(levels);
    let mut latencies = Vec::with_capacity(sessions.len());
    for (s, lat) in &sessions {
        total.merge(s);
        latencies.push(*lat);
    }
    let (mean_latency, std_error) = mean_and_se(&latencies);
    let analytical = match (input.problem, config.cost) {
        (Some(p), CostMode::Configured) => Some(expected_latency(p, plan)?.latency_per_token),
        _ => None,
    };
    Ok(SimReport {
        acceptance: config.acceptance,
        cost: config.cost,
        plan: plan.clone(),
        trials: config.trials,
        n_tokens: config.n_tokens,
        mean_latency,
        std_error,
        analytical,
        tokens_emitted: total.tokens_emitted,
        rounds: total.levels.iter().map(|l| l.rounds).collect(),
        accepted_hist: total.levels.into_iter().map(|l| l.accepted_hist).collect(),
    })
}

/// The four acceptance × cost cells for one plan.
#[derive(Debug, Clone, Serialize)]
pub struct ModeComparison {
    pub cells: Vec<SimReport>,
    /// `(max - min) / min` of the mean latency over the configured-cost
    /// cells; wall-clock cells are in different units.
    pub configured_spread: f64,
}

/// Runs every acceptance × cost combination with the same seed and sizes.
pub fn compare_modes(
    problem: &Problem,
    models: &[&dyn LanguageModel],
    plan: &HierarchyPlan,
    config: &SimConfig,
) -> Result<ModeComparison> {
    let input = SimInput::both(problem, models);
    let mut cells = Vec::with_capacity(4);
    for acceptance in [AcceptanceMode::ModelBased, AcceptanceMode::IidCoin] {
        for cost in [CostMode::Configured, CostMode::Wallclock] {
            let cfg = SimConfig { acceptance, cost, ..*config };
            cells.push(simulate(input, plan, &cfg)?);
        }
    }
    let configured: Vec<f64> =
        cells.iter().filter(|c| c.cost == CostMode::Configured).map(|c| c.mean_latency).collect();
    let max = configured.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = configured.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ModeComparison { cells, configured_spread: (max - min) / min })
}

impl fmt::Display for ModeComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<11} {:>14} {:>12}", "acceptance", "cost", "latency", "std-err")?;
        for c in &self.cells {
            let se = c.std_error.map(|s| format!("{s:.4e}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<12} {:<11} {:>14.6e} {:>12}", c.acceptance.to_string(), c.cost.to_string(), c.mean_latency, se)?;
        }
        write!(f, "spread (configured cells): {:.3}%", 100.0 * self.configured_spread)
    }
}

/// Monte Carlo estimate of `gamma(alpha, ti, tj)`: rounds of `ti` coin
/// drafts until at least `tj` tokens are collected. Returns the mean and
/// its standard error.
pub fn gamma_monte_carlo(alpha: f64, ti: u32, tj: u32, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha {alpha} outside [0, 1]")));
    }
    if ti == 0 || tj == 0 || trials == 0 {
        return Err(Error::Input("ti, tj and trials must be positive".into()));
    }
    const CHUNKS: usize = 64;
    let per = trials.div_ceil(CHUNKS);
    let sums: Vec<(u64, u64)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let n = per.min(trials.saturating_sub(c * per));
            let mut rng = stream(seed, c as u64);
            let (mut s, mut s2) = (0u64, 0u64);
            for _ in 0..n {
                let mut count = 0;
                let mut rounds = 0u64;
                while count < tj {
                    let accepted = (0..ti).take_while(|_| rng.random_bool(alpha)).count() as u32;
                    count += accepted + 1;
                    rounds += 1;
                }
                s += rounds;
                s2 += rounds * rounds;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s as f64 / n;
    let var = if trials > 1 { ((s2 as f64) - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
    Ok((mean, (var / n).sqrt()))
}
