//! Large synthetic instances for scaling tests.

use crate::domain::{AcceptanceMatrix, Problem};
use crate::error::Result;

/// `drafters + 1` models at positions `x_i = (i + 1) / (drafters + 1)` on
/// the unit interval, the target at 1. Acceptance is `1 - |x_i - x_j|` (a
/// metric, so the triangle property holds) and cost grows as `x^3`, with
/// every model at least 1% of the target.
pub fn synthetic_problem(drafters: usize, t_max: u32) -> Result<Problem> {
    let n = drafters + 1;
    let x: Vec<f64> = (0..n).map(|i| (i + 1) as f64 / n as f64).collect();
    let costs: Vec<f64> = x.iter().map(|xi| 0.01 + xi.powi(3)).collect();
    let mut alpha = AcceptanceMatrix::ones(n);
    for i in 0..n {
        for j in i + 1..n {
            alpha.set(i, j, 1.0 - (x[j] - x[i]));
        }
    }
    Problem::from_costs(&costs, alpha, t_max)
}
