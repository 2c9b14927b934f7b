use super::{improves, OptimizationResult, Solver};
use crate::domain::{HierarchyPlan, Problem};
use crate::error::{Error, Result};
use crate::latency::{latency_with, GammaTable};

/// Largest target index the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_K: usize = 6;
/// Largest `t_max` the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_T: u32 = 6;

#[derive(Debug, Clone, Copy)]
pub struct BruteForceOptions {
    /// Restrict to batch sizes nondecreasing up the hierarchy, the plans the
    /// reduction can express. Turning this off explores every T vector.
    pub monotone_t: bool,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self { monotone_t: true }
    }
}

/// Exhaustive search over every drafter subset and every T vector, scored
/// with the latency formula.
pub fn brute_force(problem: &Problem) -> Result<OptimizationResult> {
    brute_force_with(problem, BruteForceOptions::default())
}

pub fn brute_force_with(problem: &Problem, options: BruteForceOptions) -> Result<OptimizationResult> {
    let k = problem.target();
    let t_max = problem.t_max();
    if k > BRUTE_FORCE_MAX_K || t_max > BRUTE_FORCE_MAX_T {
        return Err(Error::TooLarge(format!(
            "K = {k}, t_max = {t_max} (limits K <= {BRUTE_FORCE_MAX_K}, t_max <= {BRUTE_FORCE_MAX_T})"
        )));
    }

    let mut gammas = GammaTable::new(t_max);
    let mut best: Option<(f64, HierarchyPlan)> = None;
    for mask in 1u32..(1 << k) {
        let mut sigma: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        sigma.push(k);
        let levels = sigma.len() - 1;
        let mut t = vec![1u32; levels];
        loop {
            let ordered = t.windows(2).all(|w| w[0] <= w[1]);
            if ordered || !options.monotone_t {
                let plan = HierarchyPlan { sigma: sigma.clone(), t_params: t.clone() };
                let value = latency_with(problem, &plan, &mut gammas);
                let better = match &best {
                    None => true,
                    Some((bv, bp)) => improves(value, &plan, *bv, bp),
                };
                if better {
                    best = Some((value, plan));
                }
            }
            if !advance(&mut t, t_max) {
                break;
            }
        }
    }

    let (latency, plan) = best.expect("at least one drafter subset");
    Ok(OptimizationResult {
        speedup: problem.cost(k) / latency,
        plan,
        optimal_latency: latency,
        solver: Solver::BruteForce,
    })
}

/// Odometer increment over `1..=t_max` in every position.
fn advance(t: &mut [u32], t_max: u32) -> bool {
    for slot in t.iter_mut() {
        if *slot < t_max {
            *slot += 1;
            return true;
        }
        *slot = 1;
    }
    false
}
