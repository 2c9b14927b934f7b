use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde_json::{json, Value};

use hsd_core::domain::{load_problem, validate_matrix, HierarchyPlan, ModelSpec, Problem};
use hsd_core::engine::LanguageModel;
use hsd_core::latency::{expected_latency, gamma};
use hsd_core::optimizer::{brute_force, build_graph, export_dot, optimize, GridLayout, OptimizationResult};
use hsd_core::reproduce::{example_problem, reproduce, speedup_ladder, Case};
use hsd_core::simulator::{
    compare_modes, gamma_monte_carlo, simulate, AcceptanceMode, CostMode, SimConfig, SimInput, SimReport,
};
use hsd_core::synthetic::synthetic_problem;
use hsd_core::toy::{as_dyn, estimate_acceptance_matrix, load_family, make_family, FamilySpec, MarkovModel};

use crate::output::{Report, Status};
use crate::{CaseArg, Cli, Command, CostModeArg, Example, ModeArg, ProblemSource};

const DEFAULT_T_MAX: u32 = 15;

pub fn run(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Optimize { source, t_max, brute_force, ladder, synthetic } => {
            cmd_optimize(source, *t_max, *brute_force, *ladder, *synthetic)
        }
        Command::Latency { source, sigma, t } => cmd_latency(source, sigma, t),
        Command::Gamma { alpha, ti, tj, mc } => cmd_gamma(*alpha, *ti, *tj, *mc, cli.seed),
        Command::Simulate { source, family, sigma, t, tokens, mode, cost_mode, trials, compare, contexts } => {
            let opts = SimulateArgs {
                sigma,
                t,
                tokens: *tokens,
                mode: *mode,
                cost_mode: *cost_mode,
                trials: *trials,
                compare: *compare,
                contexts: *contexts,
                seed: cli.seed,
            };
            cmd_simulate(source, family.as_deref(), &opts)
        }
        Command::EstimateAlpha { family, contexts } => cmd_estimate_alpha(family, *contexts, cli.seed),
        Command::Graph { source, dot, t_max } => cmd_graph(source, dot.as_deref(), *t_max),
        Command::Reproduce { case } => cmd_reproduce(*case),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_source(source: &ProblemSource) -> Result<Option<Problem>> {
    let problem = match (&source.config, source.example) {
        (Some(path), _) => load_problem(&read(path)?).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(Example::Example1)) => example_problem(Case::Example1)?,
        (None, Some(Example::Example2)) => example_problem(Case::Example2)?,
        (None, None) => return Ok(None),
    };
    for d in problem.diagnostics() {
        eprintln!("{d}");
    }
    Ok(Some(problem))
}

fn require_source(source: &ProblemSource) -> Result<Problem> {
    load_source(source)?.context("a problem is required: pass --config FILE or --example NAME")
}

/// Resolves each entry as a model name, falling back to a 0-based index.
fn parse_sigma(entries: &[String], problem: &Problem) -> Result<Vec<usize>> {
    entries
        .iter()
        .map(|e| {
            let e = e.trim();
            if let Some(i) = problem.models().iter().position(|m| m.name == e) {
                return Ok(i);
            }
            let i: usize = e.parse().with_context(|| format!("{e:?} is neither a model name nor an index"))?;
            ensure!(i < problem.num_models(), "model index {i} out of range (0..{})", problem.num_models());
            Ok(i)
        })
        .collect()
}

fn names(problem: &Problem, sigma: &[usize]) -> Vec<String> {
    sigma.iter().map(|&i| problem.models()[i].name.clone()).collect()
}

fn result_json(problem: &Problem, r: &OptimizationResult) -> Value {
    let mut v = serde_json::to_value(r.to_json()).expect("result serializes");
    v["models"] = json!(names(problem, &r.plan.sigma));
    v["solver"] = json!(r.solver.to_string());
    v
}

fn result_text(problem: &Problem, r: &OptimizationResult) -> String {
    format!(
        "hierarchy: {} (sigma={:?})\nT: {:?}\nlatency: {:.6}\nspeedup: {:.4}\nsolver: {}",
        names(problem, &r.plan.sigma).join(" -> "),
        r.plan.sigma,
        r.plan.t_params,
        r.optimal_latency,
        r.speedup,
        r.solver
    )
}

fn cmd_optimize(
    source: &ProblemSource,
    t_max: Option<u32>,
    exhaustive: bool,
    ladder: bool,
    synthetic: Option<usize>,
) -> Result<Report> {
    let mut problem = match synthetic {
        Some(n) => {
            ensure!(n >= 1, "--synthetic needs at least one drafter");
            synthetic_problem(n, t_max.unwrap_or(DEFAULT_T_MAX))?
        }
        None => require_source(source)?,
    };
    if let Some(t) = t_max {
        problem = problem.with_t_max(t)?;
    }
    let solve = |p: &Problem| if exhaustive { brute_force(p) } else { optimize(p) };
    let start = Instant::now();

    if ladder {
        ensure!(!exhaustive, "--ladder uses the graph solver; drop --brute-force");
        let rungs = speedup_ladder(&problem)?;
        let elapsed = start.elapsed().as_secs_f64();
        let mut text = format!("{:>6} {:>10} {:>12}  hierarchy\n", "models", "speedup", "latency");
        let mut rows = Vec::new();
        for rung in &rungs {
            let sub = problem.last_models(rung.models).unwrap_or_else(|_| problem.clone());
            let (sigma, t, hierarchy) = match &rung.result {
                Some(r) => {
                    // indices relative to the full model list
                    let offset = problem.num_models() - rung.models;
                    let sigma: Vec<usize> = r.plan.sigma.iter().map(|i| i + offset).collect();
                    let h = format!("{} T={:?}", names(&sub, &r.plan.sigma).join(" -> "), r.plan.t_params);
                    (sigma, r.plan.t_params.clone(), h)
                }
                None => (vec![problem.target()], vec![], names(&problem, &[problem.target()]).join("")),
            };
            writeln!(text, "{:>6} {:>10.4} {:>12.4}  {}", rung.models, rung.speedup, rung.latency, hierarchy)?;
            rows.push(json!({
                "models": rung.models,
                "sigma": sigma,
                "t_params": t,
                "latency": rung.latency,
                "speedup": rung.speedup,
            }));
        }
        write!(text, "elapsed: {elapsed:.3}s")?;
        return Ok(Report::ok(json!({ "ladder": rows, "elapsed_s": elapsed }), text));
    }

    let r = solve(&problem)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut v = result_json(&problem, &r);
    v["elapsed_s"] = json!(elapsed);
    let text = format!("{}\nelapsed: {elapsed:.3}s", result_text(&problem, &r));
    Ok(Report::ok(v, text))
}

fn build_plan(problem: &Problem, sigma: &[String], t: &[u32]) -> Result<HierarchyPlan> {
    let plan = HierarchyPlan::new(parse_sigma(sigma, problem)?, t.to_vec())?;
    plan.validate_for(problem)?;
    Ok(plan)
}

fn cmd_latency(source: &ProblemSource, sigma: &[String], t: &[u32]) -> Result<Report> {
    let problem = require_source(source)?;
    let plan = build_plan(&problem, sigma, t)?;
    let report = expected_latency(&problem, &plan)?;
    let mut v = serde_json::to_value(&report)?;
    v["models"] = json!(names(&problem, &plan.sigma));
    let text = format!(
        "hierarchy: {}\nT: {:?}\nlatency: {:.6}\nspeedup: {:.4}\nR factors: {:?}\ncontributions: {:?}",
        names(&problem, &plan.sigma).join(" -> "),
        plan.t_params,
        report.latency_per_token,
        report.speedup,
        report.r_factors,
        report.contributions
    );
    Ok(Report::ok(v, text))
}

fn cmd_gamma(alpha: f64, ti: u32, tj: u32, mc: Option<usize>, seed: u64) -> Result<Report> {
    ensure!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1], got {alpha}");
    ensure!(ti >= 1 && tj >= 1, "ti and tj must be at least 1");
    let value = gamma(alpha, ti, tj);
    let mut v = json!({ "alpha": alpha, "ti": ti, "tj": tj, "gamma": value });
    let mut text = format!("gamma({alpha}, {ti}, {tj}) = {value:.6}");
    if let Some(trials) = mc {
        ensure!(trials >= 1, "--mc needs at least one trial");
        let (mean, se) = gamma_monte_carlo(alpha, ti, tj, trials, seed)?;
        v["monte_carlo"] = json!({ "trials": trials, "mean": mean, "std_error": se });
        write!(text, "\nmonte carlo ({trials} trials): {mean:.6} ± {se:.6}")?;
    }
    Ok(Report::ok(v, text))
}

struct SimulateArgs<'a> {
    sigma: &'a [String],
    t: &'a [u32],
    tokens: usize,
    mode: ModeArg,
    cost_mode: CostModeArg,
    trials: usize,
    compare: bool,
    contexts: usize,
    seed: u64,
}

fn family_problem(spec: &FamilySpec, models: &[MarkovModel], contexts: usize, seed: u64) -> Result<Problem> {
    ensure!(contexts >= 1, "--contexts must be at least 1");
    let alpha = estimate_acceptance_matrix(&as_dyn(models), contexts, seed)?;
    let specs = spec
        .costs
        .iter()
        .enumerate()
        .map(|(i, &cost)| ModelSpec { name: format!("M{}", i + 1), cost })
        .collect();
    Ok(Problem::new(specs, alpha, DEFAULT_T_MAX)?.with_vocab_size(Some(spec.vocab_size)))
}

fn sim_text(r: &SimReport) -> String {
    let mut s = format!(
        "acceptance: {}\ncost: {}\nplan: {}\ntrials: {} x {} tokens\nmean latency: {:.6e}",
        r.acceptance, r.cost, r.plan, r.trials, r.n_tokens, r.mean_latency
    );
    if let Some(se) = r.std_error {
        write!(s, " ± {se:.3e}").unwrap();
    }
    if let Some(l) = r.analytical {
        write!(s, "\nanalytical: {l:.6e} (rel err {:.3}%)", 100.0 * (r.mean_latency - l).abs() / l).unwrap();
    }
    for (level, (rounds, hist)) in r.rounds.iter().zip(&r.accepted_hist).enumerate().skip(1) {
        write!(s, "\nlevel {level}: {rounds} rounds, accepted histogram {hist:?}").unwrap();
    }
    s
}

fn cmd_simulate(source: &ProblemSource, family: Option<&Path>, a: &SimulateArgs<'_>) -> Result<Report> {
    let spec = family.map(|p| load_family(&read(p)?).with_context(|| format!("loading {}", p.display()))).transpose()?;
    let models = spec.as_ref().map(make_family).transpose()?;
    let problem = match (load_source(source)?, &spec, &models) {
        (Some(p), Some(s), _) => {
            ensure!(p.num_models() == s.costs.len(), "config has {} models but the family has {}", p.num_models(), s.costs.len());
            p
        }
        (Some(p), None, _) => p,
        (None, Some(s), Some(m)) => family_problem(s, m, a.contexts, a.seed)?,
        _ => bail!("pass --config/--example, --family, or both"),
    };
    let problem = match a.t.iter().max() {
        Some(&t) if t > problem.t_max() => problem.with_t_max(t)?,
        _ => problem,
    };
    let plan = build_plan(&problem, a.sigma, a.t)?;
    let dyn_models: Option<Vec<&dyn LanguageModel>> = models.as_deref().map(as_dyn);
    let acceptance = match a.mode {
        ModeArg::IidCoin => AcceptanceMode::IidCoin,
        ModeArg::ModelBased => AcceptanceMode::ModelBased,
    };
    let cost = match a.cost_mode {
        CostModeArg::Configured => CostMode::Configured,
        CostModeArg::Wallclock => CostMode::Wallclock,
    };
    let config = SimConfig::new(acceptance, cost, a.tokens, a.trials, a.seed);

    if a.compare {
        let m = dyn_models.as_deref().context("--compare needs --family")?;
        let cmp = compare_modes(&problem, m, &plan, &config)?;
        return Ok(Report::ok(serde_json::to_value(&cmp)?, cmp.to_string()));
    }
    let input = SimInput { problem: Some(&problem), models: dyn_models.as_deref() };
    let report = simulate(input, &plan, &config)?;
    Ok(Report::ok(serde_json::to_value(&report)?, sim_text(&report)))
}

fn cmd_estimate_alpha(family: &Path, contexts: usize, seed: u64) -> Result<Report> {
    ensure!(contexts >= 1, "--contexts must be at least 1");
    let spec = load_family(&read(family)?).with_context(|| format!("loading {}", family.display()))?;
    let models = make_family(&spec)?;
    let alpha = estimate_acceptance_matrix(&as_dyn(&models), contexts, seed)?;
    let diags = validate_matrix(&alpha);
    let rows = alpha.to_rows();
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> =
            row.iter().enumerate().map(|(j, x)| if j > i { format!("{x:.4}") } else { format!("{:>6}", "-") }).collect();
        writeln!(text, "M{:<3} {}", i + 1, cells.join(" "))?;
    }
    if diags.is_empty() {
        write!(text, "triangle check: ok")?;
    } else {
        for d in &diags {
            writeln!(text, "{d}")?;
        }
    }
    let v = json!({ "alpha": rows, "contexts": contexts, "diagnostics": diags });
    Ok(Report::ok(v, text.trim_end().to_string()))
}

fn cmd_graph(source: &ProblemSource, dot: Option<&Path>, t_max: Option<u32>) -> Result<Report> {
    let mut problem = require_source(source)?;
    if let Some(t) = t_max {
        problem = problem.with_t_max(t)?;
    }
    let graph = build_graph(&problem);
    let layout = GridLayout { drafters: problem.target(), t_max: problem.t_max() };
    let text_dot = export_dot(&graph);
    let v = json!({
        "vertices": graph.num_vertices(),
        "edges": graph.num_edges(),
        "expected_vertices": layout.num_vertices(),
        "expected_edges": layout.num_edges(),
    });
    let mut text = format!(
        "vertices: {} (formula {})\nedges: {} (formula {})",
        graph.num_vertices(),
        layout.num_vertices(),
        graph.num_edges(),
        layout.num_edges()
    );
    match dot {
        Some(path) => {
            fs::write(path, &text_dot).with_context(|| format!("writing {}", path.display()))?;
            write!(text, "\ndot: {}", path.display())?;
        }
        None => {
            text.push('\n');
            text.push_str(&text_dot);
        }
    }
    Ok(Report::ok(v, text))
}

fn cmd_reproduce(case: CaseArg) -> Result<Report> {
    let case = match case {
        CaseArg::Example1 => Case::Example1,
        CaseArg::Example2 => Case::Example2,
        CaseArg::Grid => Case::Grid,
    };
    let report = reproduce(case)?;
    let status = if report.all_pass() { Status::Ok } else { Status::ReproductionFailed };
    Ok(Report { json: serde_json::to_value(&report)?, text: report.to_string(), status })
}
