//! Hierarchy selection. The search space is encoded as a generalized
//! shortest path instance ([`build_graph`]); because every lossy cycle in it
//! is a zero-cost self-loop and the rest is acyclic, the optimum is a simple
//! path and [`solve`] finds it with a suffix DP in reverse topological order.
//! [`brute_force`] enumerates plans directly and serves as the oracle.

mod brute;
mod dot;
mod graph;
mod solve;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{HierarchyPlan, Problem};
use crate::error::Result;

pub use brute::{brute_force, brute_force_with, BruteForceOptions, BRUTE_FORCE_MAX_K, BRUTE_FORCE_MAX_T};
pub use dot::export_dot;
pub use graph::{build_graph, Edge, EdgeKind, GridLayout, GspGraph, Vertex, VertexId};
pub use solve::solve;

/// Latencies within this relative distance are treated as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    DagDp,
    BruteForce,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::DagDp => "dag-dp",
            Solver::BruteForce => "brute-force",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub plan: HierarchyPlan,
    pub optimal_latency: f64,
    pub speedup: f64,
    pub solver: Solver,
}

impl OptimizationResult {
    pub fn to_json(&self) -> ResultJson {
        ResultJson {
            sigma: self.plan.sigma.clone(),
            t_params: self.plan.t_params.clone(),
            latency: self.optimal_latency,
            speedup: self.speedup,
        }
    }
}

/// Machine-readable optimizer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultJson {
    pub sigma: Vec<usize>,
    pub t_params: Vec<u32>,
    pub latency: f64,
    pub speedup: f64,
}

impl ResultJson {
    pub fn into_plan(self) -> Result<HierarchyPlan> {
        HierarchyPlan::new_unordered(self.sigma, self.t_params)
    }
}

/// Builds the reduction for `problem` and solves it.
pub fn optimize(problem: &Problem) -> Result<OptimizationResult> {
    solve(&build_graph(problem))
}

pub(crate) fn values_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs())
}

/// Tie-break among equal-latency plans: fewer models, then the
/// lexicographically smaller T vector, then the smaller sigma.
pub(crate) fn tie_break(a: &HierarchyPlan, b: &HierarchyPlan) -> Ordering {
    a.sigma
        .len()
        .cmp(&b.sigma.len())
        .then_with(|| a.t_params.cmp(&b.t_params))
        .then_with(|| a.sigma.cmp(&b.sigma))
}

/// Whether `(value, plan)` should replace the incumbent.
pub(crate) fn improves(value: f64, plan: &HierarchyPlan, best_value: f64, best_plan: &HierarchyPlan) -> bool {
    if values_tied(value, best_value) {
        tie_break(plan, best_plan) == Ordering::Less
    } else {
        value < best_value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AcceptanceMatrix;
    use crate::latency::expected_latency;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, k: usize, t_max: u32) -> Problem {
        let n = k + 1;
        let mut costs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
        costs.sort_by(f64::total_cmp);
        let mut alpha = AcceptanceMatrix::ones(n);
        for i in 0..n {
            for j in i + 1..n {
                alpha.set(i, j, rng.random_range(0.0..1.0));
            }
        }
        Problem::from_costs(&costs, alpha, t_max).unwrap()
    }

    /// Random simple source-to-loop path through the reduction.
    fn random_path(rng: &mut ChaCha8Rng, k: usize, t_max: u32) -> Vec<VertexId> {
        let layout = GridLayout { drafters: k, t_max };
        let mut model = rng.random_range(0..k);
        let mut t = rng.random_range(1..=t_max);
        let mut path = vec![0, layout.grid(model, t)];
        while model > 0 && rng.random_bool(0.6) {
            model = rng.random_range(0..model);
            t = rng.random_range(1..=t);
            path.push(layout.grid(model, t));
        }
        path.push(layout.lp(model));
        path
    }

    proptest! {
        #[test]
        fn path_cost_equals_plan_latency(seed in any::<u64>(), k in 1usize..6, t_max in 1u32..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, k, t_max);
            let g = build_graph(&p);
            for _ in 0..8 {
                let path = random_path(&mut rng, k, t_max);
                let plan = g.decode_path(&path).unwrap();
                let cost = g.path_cost(&path).unwrap();
                let lat = expected_latency(&p, &plan).unwrap().latency_per_token;
                prop_assert!((cost - lat).abs() <= 1e-9 * lat, "{plan}: {cost} vs {lat}");
            }
        }

        #[test]
        fn solve_matches_brute_force(seed in any::<u64>(), k in 1usize..5, t_max in 1u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, k, t_max);
            let dp = optimize(&p).unwrap();
            let bf = brute_force(&p).unwrap();
            prop_assert_eq!(&dp.plan, &bf.plan);
            prop_assert!((dp.optimal_latency - bf.optimal_latency).abs() <= 1e-9 * bf.optimal_latency);
        }

        #[test]
        fn enlarging_choices_never_hurts(seed in any::<u64>(), k in 2usize..5, t_max in 1u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, k, t_max);
            let full = optimize(&p).unwrap().optimal_latency;
            let fewer = optimize(&p.last_models(k).unwrap()).unwrap().optimal_latency;
            prop_assert!(full <= fewer * (1.0 + 1e-12));
            let wider = optimize(&p.clone().with_t_max(t_max + 2).unwrap()).unwrap().optimal_latency;
            prop_assert!(wider <= full * (1.0 + 1e-12));
        }

        #[test]
        fn cost_scaling_keeps_argmin(seed in any::<u64>(), k in 1usize..5, lambda in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, k, 4);
            let scaled_costs: Vec<f64> = p.costs().iter().map(|c| c * lambda).collect();
            let ps = Problem::from_costs(&scaled_costs, p.acceptance().clone(), 4).unwrap();
            let a = optimize(&p).unwrap();
            let b = optimize(&ps).unwrap();
            prop_assert_eq!(&a.plan, &b.plan);
            prop_assert!((b.optimal_latency - lambda * a.optimal_latency).abs() <= 1e-9 * b.optimal_latency);
        }
    }

    #[test]
    fn optimal_latency_matches_expected_latency() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 4, 6);
            let r = optimize(&p).unwrap();
            let lat = expected_latency(&p, &r.plan).unwrap().latency_per_token;
            assert!((r.optimal_latency - lat).abs() <= 1e-9 * lat);
            assert_eq!(r.solver, Solver::DagDp);
            assert!((r.speedup * r.optimal_latency - p.cost(p.target())).abs() < 1e-9);
        }
    }

    #[test]
    fn result_json_roundtrip() {
        let alpha = AcceptanceMatrix::from_upper(&[&[0.8]]).unwrap();
        let p = Problem::from_costs(&[4.0, 33.0], alpha, 15).unwrap();
        let r = optimize(&p).unwrap();
        let text = serde_json::to_string(&r.to_json()).unwrap();
        let back: ResultJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.clone().into_plan().unwrap(), r.plan);
        assert_eq!(back.latency, r.optimal_latency);
    }

    #[test]
    fn tie_break_prefers_fewer_models_then_smaller_t() {
        let short = HierarchyPlan::new(vec![1, 2], vec![3]).unwrap();
        let long = HierarchyPlan::new(vec![0, 1, 2], vec![1, 1]).unwrap();
        assert_eq!(tie_break(&short, &long), Ordering::Less);
        let a = HierarchyPlan::new(vec![0, 2], vec![2]).unwrap();
        let b = HierarchyPlan::new(vec![1, 2], vec![1]).unwrap();
        assert_eq!(tie_break(&b, &a), Ordering::Less);
        let c = HierarchyPlan::new(vec![0, 2], vec![1]).unwrap();
        assert_eq!(tie_break(&c, &b), Ordering::Less);
        assert!(improves(1.0, &short, 1.0 + 1e-14, &long));
        assert!(!improves(1.0 + 1e-14, &long, 1.0, &short));
        assert!(improves(0.9, &long, 1.0, &short));
    }
}
