//! Published configurations and their speedup tables, with the comparison
//! harness used by `hsd reproduce`.

use std::fmt;

use serde::Serialize;

use crate::domain::{load_problem, AcceptanceMatrix, Problem};
use crate::error::{Error, Result};
use crate::optimizer::{optimize, OptimizationResult};

pub const EXAMPLE1_JSON: &str = include_str!("../data/example1.json");
pub const EXAMPLE2_JSON: &str = include_str!("../data/example2.json");

/// Speedups for 1..=6 available models, first worked example.
pub const EXAMPLE1_SPEEDUPS: [f64; 6] = [1.0000, 2.2971, 3.0211, 3.0620, 3.0829, 3.0839];
/// Speedups for 1..=6 available models, second worked example.
pub const EXAMPLE2_SPEEDUPS: [f64; 6] = [1.0000, 1.7090, 2.1366, 2.2587, 2.2817, 2.2910];
/// Relative tolerance on ladder speedups.
pub const LADDER_TOL: f64 = 0.03;

/// Three-model grid: target A (cost 1024), drafter B (cost 256) with
/// acceptance 0.5 to A, and a third model C whose cost and acceptance to B
/// vary.
pub const GRID_COST_A: f64 = 1024.0;
pub const GRID_COST_B: f64 = 256.0;
pub const GRID_ALPHA_BA: f64 = 0.5;
pub const GRID_T_MAX: u32 = 15;
pub const GRID_ALPHAS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const GRID_COSTS: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
/// Absolute tolerance on grid speedups (the table has two decimals).
pub const GRID_TOL: f64 = 0.01;

/// Published grid speedups, rows by acceptance C to B, columns by cost of C.
pub const GRID_SPEEDUPS: [[f64; 8]; 10] = [
    [1.20, 1.20, 1.20, 1.20, 1.20, 1.20, 1.20, 1.20],
    [1.20, 1.20, 1.20, 1.20, 1.20, 1.20, 1.20, 1.20],
    [1.21, 1.21, 1.20, 1.20, 1.20, 1.20, 1.20, 1.20],
    [1.23, 1.23, 1.22, 1.22, 1.21, 1.20, 1.20, 1.20],
    [1.25, 1.25, 1.24, 1.24, 1.23, 1.21, 1.20, 1.20],
    [1.27, 1.27, 1.27, 1.26, 1.25, 1.23, 1.20, 1.20],
    [1.30, 1.29, 1.29, 1.28, 1.27, 1.25, 1.22, 1.20],
    [1.34, 1.33, 1.33, 1.32, 1.30, 1.28, 1.24, 1.20],
    [1.42, 1.41, 1.40, 1.38, 1.35, 1.31, 1.27, 1.21],
    [1.65, 1.64, 1.63, 1.60, 1.55, 1.48, 1.39, 1.25],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridLabel {
    #[serde(rename = "A-B")]
    AB,
    #[serde(rename = "A-C")]
    AC,
    #[serde(rename = "A-B-C")]
    ABC,
}

impl fmt::Display for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridLabel::AB => "A-B",
            GridLabel::AC => "A-C",
            GridLabel::ABC => "A-B-C",
        })
    }
}

use GridLabel::{AB, ABC, AC};

/// Published optimal hierarchy per grid cell (the table's colour coding).
pub const GRID_LABELS: [[GridLabel; 8]; 10] = [
    [AB, AB, AB, AB, AB, AB, AB, AB],
    [AB, AB, AB, AB, AB, AB, AB, AB],
    [ABC, ABC, ABC, AB, AB, AB, AB, AB],
    [ABC, ABC, ABC, ABC, ABC, AB, AB, AB],
    [ABC, ABC, ABC, ABC, ABC, ABC, AB, AB],
    [ABC, ABC, ABC, ABC, ABC, ABC, AB, AB],
    [ABC, ABC, ABC, ABC, ABC, ABC, ABC, AB],
    [ABC, ABC, ABC, ABC, ABC, ABC, ABC, AB],
    [AC, AC, AC, AC, AC, AC, ABC, ABC],
    [AC, AC, AC, AC, AC, AC, AC, AC],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Example1,
    Example2,
    Grid,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Example1 => "example1",
            Case::Example2 => "example2",
            Case::Grid => "grid",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Case::Example1),
            "example2" => Ok(Case::Example2),
            "grid" => Ok(Case::Grid),
            other => Err(Error::Input(format!("unknown case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub id: String,
    pub published: f64,
    pub computed: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published_label: Option<GridLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub computed_label: Option<GridLabel>,
    /// The chosen plan, for display.
    pub plan: String,
    pub latency: f64,
}

impl Cell {
    pub fn label_matches(&self) -> bool {
        self.published_label == self.computed_label
    }

    pub fn passes(&self) -> bool {
        self.within_tolerance && self.label_matches()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproReport {
    pub case: Case,
    pub cells: Vec<Cell>,
}

impl ReproReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(Cell::passes)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| !c.passes())
    }
}

impl fmt::Display for ReproReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "case: {}", self.case.name())?;
        writeln!(
            f,
            "{:<22} {:>10} {:>10} {:>9} {:>6} {:<14} plan",
            "cell", "published", "computed", "rel-err", "ok", "label"
        )?;
        for c in &self.cells {
            let label = match (c.published_label, c.computed_label) {
                (Some(p), Some(q)) if p == q => p.to_string(),
                (Some(p), Some(q)) => format!("{p} / {q}"),
                _ => String::new(),
            };
            writeln!(
                f,
                "{:<22} {:>10.4} {:>10.4} {:>8.3}% {:>6} {:<14} {}",
                c.id,
                c.published,
                c.computed,
                100.0 * c.rel_err,
                if c.passes() { "yes" } else { "NO" },
                label,
                c.plan
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} of {} cells within tolerance", self.cells.len() - failed, self.cells.len())
    }
}

pub fn example_problem(case: Case) -> Result<Problem> {
    match case {
        Case::Example1 => load_problem(EXAMPLE1_JSON),
        Case::Example2 => load_problem(EXAMPLE2_JSON),
        Case::Grid => Err(Error::Input("the grid is a family of problems".into())),
    }
}

/// One rung of a ladder: the optimum when only the `k` largest models
/// (counting the target) are available.
#[derive(Debug, Clone, PartialEq)]
pub struct Rung {
    pub models: usize,
    /// `None` for `k = 1`, where the target runs alone.
    pub result: Option<OptimizationResult>,
    pub latency: f64,
    pub speedup: f64,
}

/// Optimizes every prefix of the model list, adding the smallest remaining
/// model at each step.
pub fn speedup_ladder(problem: &Problem) -> Result<Vec<Rung>> {
    let target_cost = problem.cost(problem.target());
    let mut out = vec![Rung { models: 1, result: None, latency: target_cost, speedup: 1.0 }];
    for k in 2..=problem.num_models() {
        let sub = problem.last_models(k)?;
        let r = optimize(&sub)?;
        out.push(Rung { models: k, latency: r.optimal_latency, speedup: r.speedup, result: Some(r) });
    }
    Ok(out)
}

/// The grid problem for one cell, models ordered C, B, A. The acceptance
/// from C to A is the smallest value the triangle inequality allows.
pub fn grid_problem(alpha_cb: f64, cost_c: f64) -> Result<Problem> {
    let alpha_ca = (alpha_cb + GRID_ALPHA_BA - 1.0).max(0.0);
    let alpha = AcceptanceMatrix::from_upper(&[&[alpha_cb, alpha_ca], &[GRID_ALPHA_BA]])?;
    Problem::from_costs(&[cost_c, GRID_COST_B, GRID_COST_A], alpha, GRID_T_MAX)
}

pub fn grid_label(sigma: &[usize]) -> Result<GridLabel> {
    match sigma {
        [1, 2] => Ok(AB),
        [0, 2] => Ok(AC),
        [0, 1, 2] => Ok(ABC),
        other => Err(Error::Internal(format!("unexpected grid hierarchy {other:?}"))),
    }
}

fn describe(problem: &Problem, result: Option<&OptimizationResult>) -> String {
    match result {
        None => problem.models()[problem.target()].name.clone(),
        Some(r) => {
            let names: Vec<&str> = r.plan.sigma.iter().map(|&i| problem.models()[i].name.as_str()).collect();
            format!("[{}] T={:?}", names.join(","), r.plan.t_params)
        }
    }
}

fn ladder_report(case: Case, published: &[f64; 6]) -> Result<ReproReport> {
    let problem = example_problem(case)?;
    let rungs = speedup_ladder(&problem)?;
    let cells = rungs
        .iter()
        .zip(published)
        .map(|(rung, &pubd)| {
            let sub = problem.last_models(rung.models).unwrap_or_else(|_| problem.clone());
            let rel_err = (rung.speedup - pubd).abs() / pubd;
            Cell {
                id: format!("k={}", rung.models),
                published: pubd,
                computed: rung.speedup,
                rel_err,
                tolerance: LADDER_TOL,
                within_tolerance: rel_err <= LADDER_TOL,
                published_label: None,
                computed_label: None,
                plan: describe(&sub, rung.result.as_ref()),
                latency: rung.latency,
            }
        })
        .collect();
    Ok(ReproReport { case, cells })
}

fn grid_report() -> Result<ReproReport> {
    let mut cells = Vec::with_capacity(GRID_ALPHAS.len() * GRID_COSTS.len());
    for (row, &a) in GRID_ALPHAS.iter().enumerate() {
        for (col, &c) in GRID_COSTS.iter().enumerate() {
            let problem = grid_problem(a, c)?;
            let r = optimize(&problem)?;
            let published = GRID_SPEEDUPS[row][col];
            let err = (r.speedup - published).abs();
            let names: Vec<&str> = r.plan.sigma.iter().rev().map(|&i| ["C", "B", "A"][i]).collect();
            cells.push(Cell {
                id: format!("alpha={a:.1},cost={c}"),
                published,
                computed: r.speedup,
                rel_err: err / published,
                tolerance: GRID_TOL,
                // half an ulp of slack for values printed to two decimals
                within_tolerance: err <= GRID_TOL + 1e-9,
                published_label: Some(GRID_LABELS[row][col]),
                computed_label: Some(grid_label(&r.plan.sigma)?),
                plan: format!("{} T={:?}", names.join("-"), r.plan.t_params),
                latency: r.optimal_latency,
            });
        }
    }
    Ok(ReproReport { case: Case::Grid, cells })
}

pub fn reproduce(case: Case) -> Result<ReproReport> {
    match case {
        Case::Example1 => ladder_report(case, &EXAMPLE1_SPEEDUPS),
        Case::Example2 => ladder_report(case, &EXAMPLE2_SPEEDUPS),
        Case::Grid => grid_report(),
    }
}
