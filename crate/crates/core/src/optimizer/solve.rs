use std::cmp::Ordering;
use std::collections::VecDeque;

use super::graph::{GspGraph, Vertex, VertexId};
use super::{values_tied, OptimizationResult, Solver};
use crate::error::{Error, Result};

/// Exact optimum of a reduction graph. Vertices carrying a zero-cost lossy
/// self-loop absorb flow at no cost; every other cycle must be absent. The
/// suffix value `S(v) = min_(v,w) c(v,w) + mu(v,w) S(w)` is filled in
/// reverse topological order and the argmin path is decoded into a plan.
pub fn solve(graph: &GspGraph) -> Result<OptimizationResult> {
    let n = graph.num_vertices();
    let edges = graph.edges();

    let absorbing: Vec<bool> = (0..n)
        .map(|v| {
            graph.outgoing(v).iter().map(|&e| &edges[e]).any(|e| {
                e.to == v && e.multiplier < 1.0 && e.cost == 0.0
            })
        })
        .collect();
    let order = topological_order(graph)?;

    let mut value = vec![f64::INFINITY; n];
    let mut next: Vec<Option<VertexId>> = vec![None; n];
    let mut depth = vec![0usize; n];
    for &v in order.iter().rev() {
        if absorbing[v] {
            value[v] = 0.0;
            continue;
        }
        for &eid in graph.outgoing(v) {
            let e = &edges[eid];
            let w = e.to;
            if w == v || !value[w].is_finite() {
                continue;
            }
            let cand = e.cost + e.multiplier * value[w];
            let replace = match next[v] {
                None => true,
                Some(cur) if values_tied(cand, value[v]) => {
                    compare_suffix(graph, &next, &depth, w, cur) == Ordering::Less
                }
                Some(_) => cand < value[v],
            };
            if replace {
                value[v] = cand;
                next[v] = Some(w);
                depth[v] = depth[w] + usize::from(matches!(graph.vertices()[v], Vertex::Grid { .. }));
            }
        }
    }

    let source = graph.source();
    if !value[source].is_finite() {
        return Err(Error::Internal("no path from the source reaches a lossy cycle".into()));
    }
    let mut path = vec![source];
    let mut v = source;
    while let Some(w) = next[v] {
        path.push(w);
        v = w;
    }
    let plan = graph.decode_path(&path)?;
    let latency = value[source];
    Ok(OptimizationResult {
        plan,
        optimal_latency: latency,
        speedup: graph.target_cost() / latency,
        solver: Solver::DagDp,
    })
}

/// Kahn's algorithm over the graph without its self-loops.
fn topological_order(graph: &GspGraph) -> Result<Vec<VertexId>> {
    let n = graph.num_vertices();
    let mut indegree = vec![0usize; n];
    for e in graph.edges().iter().filter(|e| e.from != e.to) {
        indegree[e.to] += 1;
    }
    let mut queue: VecDeque<VertexId> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &eid in graph.outgoing(v) {
            let e = &graph.edges()[eid];
            if e.to != v {
                indegree[e.to] -= 1;
                if indegree[e.to] == 0 {
                    queue.push_back(e.to);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::Internal("graph has a cycle other than terminal self-loops".into()));
    }
    Ok(order)
}

/// Grid vertices on the chosen suffix starting at `v`, base of the
/// hierarchy first.
fn suffix_levels(graph: &GspGraph, next: &[Option<VertexId>], v: VertexId) -> (Vec<u32>, Vec<usize>) {
    let mut ts = Vec::new();
    let mut models = Vec::new();
    let mut cur = Some(v);
    while let Some(u) = cur {
        if let Vertex::Grid { model, t } = graph.vertices()[u] {
            ts.push(t);
            models.push(model);
        }
        cur = next[u];
    }
    ts.reverse();
    models.reverse();
    (ts, models)
}

/// Orders two suffixes by the plan tie-break (fewer levels, smaller T
/// vector, smaller model vector).
fn compare_suffix(
    graph: &GspGraph,
    next: &[Option<VertexId>],
    depth: &[usize],
    a: VertexId,
    b: VertexId,
) -> Ordering {
    depth[a].cmp(&depth[b]).then_with(|| {
        let (ta, ma) = suffix_levels(graph, next, a);
        let (tb, mb) = suffix_levels(graph, next, b);
        ta.cmp(&tb).then_with(|| ma.cmp(&mb))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AcceptanceMatrix, Problem};
    use crate::optimizer::graph::{Edge, EdgeKind};
    use crate::optimizer::{build_graph, optimize};

    #[test]
    fn two_model_picks_best_t() {
        let alpha = AcceptanceMatrix::from_upper(&[&[0.8]]).unwrap();
        let p = Problem::from_costs(&[4.0, 33.0], alpha, 15).unwrap();
        let r = optimize(&p).unwrap();
        assert_eq!(r.plan.sigma, vec![0, 1]);
        assert_eq!(r.plan.t_params, vec![5]);
        assert!((r.optimal_latency - 14.366).abs() < 5e-4);
    }

    #[test]
    fn grid_row_zero_single_drafter() {
        let alpha = AcceptanceMatrix::from_upper(&[&[0.5]]).unwrap();
        let p = Problem::from_costs(&[256.0, 1024.0], alpha, 15).unwrap();
        let r = optimize(&p).unwrap();
        assert_eq!(r.plan.t_params, vec![1]);
        assert!((r.speedup - 1.2).abs() < 1e-12);
    }

    #[test]
    fn equal_drafters_tie_breaks_to_smaller_sigma() {
        // two identical drafters: plans [0,2] and [1,2] tie exactly
        let alpha = AcceptanceMatrix::from_upper(&[&[0.0, 0.7], &[0.7]]).unwrap();
        let p = Problem::from_costs(&[1.0, 1.0, 10.0], alpha, 4).unwrap();
        let r = solve(&build_graph(&p)).unwrap();
        assert_eq!(r.plan.sigma, vec![0, 2]);
    }

    #[test]
    fn cycles_are_rejected() {
        let vertices = vec![
            Vertex::Source { model: 1 },
            Vertex::Grid { model: 0, t: 1 },
            Vertex::Grid { model: 0, t: 2 },
            Vertex::Loop { model: 0 },
        ];
        let e = |from, to| Edge { from, to, multiplier: 1.0, cost: 1.0, kind: EdgeKind::Internal };
        let edges = vec![e(0, 1), e(1, 2), e(2, 1), e(2, 3)];
        let g = GspGraph::from_parts(vertices, edges, 0, 1.0).unwrap();
        assert!(matches!(solve(&g), Err(Error::Internal(_))));
    }

    #[test]
    fn unreachable_loop_is_internal_error() {
        let vertices = vec![Vertex::Source { model: 1 }, Vertex::Grid { model: 0, t: 1 }];
        let edges = vec![Edge { from: 0, to: 1, multiplier: 1.0, cost: 1.0, kind: EdgeKind::Source }];
        let g = GspGraph::from_parts(vertices, edges, 0, 1.0).unwrap();
        assert!(matches!(solve(&g), Err(Error::Internal(_))));
    }
}
