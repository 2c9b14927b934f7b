//! The generalized-shortest-path instance whose augmented paths are exactly
//! the candidate hierarchies.

use crate::domain::{HierarchyPlan, Problem};
use crate::error::{Error, Result};
use crate::latency::{top_rate, GammaTable};

pub type VertexId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vertex {
    /// The target model; all flow starts here.
    Source { model: usize },
    /// Drafter `model` accumulating `t` tokens per call.
    Grid { model: usize, t: u32 },
    /// Terminal vertex: `model` is the base of the hierarchy.
    Loop { model: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Source,
    Internal,
    ToLoop,
    SelfLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: VertexId,
    pub to: VertexId,
    pub multiplier: f64,
    pub cost: f64,
    pub kind: EdgeKind,
}

/// Multiplier/cost-weighted directed graph with a designated source.
#[derive(Debug, Clone)]
pub struct GspGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
    source: VertexId,
    target_cost: f64,
}

impl GspGraph {
    /// Assembles a graph from explicit parts. `source` must index a vertex;
    /// `target_cost` is the cost of the source's model, used for speedups.
    pub fn from_parts(
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
        source: VertexId,
        target_cost: f64,
    ) -> Result<Self> {
        if source >= vertices.len() {
            return Err(Error::Input(format!("source {source} is not a vertex")));
        }
        let mut outgoing = vec![Vec::new(); vertices.len()];
        for (id, e) in edges.iter().enumerate() {
            if e.from >= vertices.len() || e.to >= vertices.len() {
                return Err(Error::Input(format!("edge {id} references a missing vertex")));
            }
            if e.multiplier.is_nan() || e.multiplier <= 0.0 {
                return Err(Error::Input(format!("edge {id} has non-positive multiplier")));
            }
            outgoing[e.from].push(id);
        }
        Ok(Self { vertices, edges, outgoing, source, target_cost })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> VertexId {
        self.source
    }

    pub fn target_cost(&self) -> f64 {
        self.target_cost
    }

    /// Edge ids leaving `v`.
    pub fn outgoing(&self, v: VertexId) -> &[usize] {
        &self.outgoing[v]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Looks up the edge `from -> to`, if present.
    pub fn edge_between(&self, from: VertexId, to: VertexId) -> Option<&Edge> {
        self.outgoing[from].iter().map(|&e| &self.edges[e]).find(|e| e.to == to)
    }

    /// Cost of pushing one unit of flow along `path`: each edge's cost is
    /// weighted by the product of the multipliers before it. The path must
    /// start at the source and end at a loop vertex (the zero-cost self-loop
    /// contributes nothing).
    pub fn path_cost(&self, path: &[VertexId]) -> Result<f64> {
        let mut flow = 1.0;
        let mut total = 0.0;
        for w in path.windows(2) {
            let e = self
                .edge_between(w[0], w[1])
                .ok_or_else(|| Error::Input(format!("no edge {} -> {}", w[0], w[1])))?;
            total += flow * e.cost;
            flow *= e.multiplier;
        }
        Ok(total)
    }

    /// Reads the hierarchy encoded by a source-to-loop path.
    pub fn decode_path(&self, path: &[VertexId]) -> Result<HierarchyPlan> {
        let target = match path.first().map(|&v| self.vertices[v]) {
            Some(Vertex::Source { model }) => model,
            _ => return Err(Error::Input("path must start at the source".into())),
        };
        let base = match path.last().map(|&v| self.vertices[v]) {
            Some(Vertex::Loop { model }) => model,
            _ => return Err(Error::Input("path must end at a loop vertex".into())),
        };
        let mut sigma = vec![target];
        let mut t_params = Vec::new();
        for &v in &path[1..path.len() - 1] {
            match self.vertices[v] {
                Vertex::Grid { model, t } => {
                    sigma.push(model);
                    t_params.push(t);
                }
                other => return Err(Error::Input(format!("unexpected vertex {other:?} inside path"))),
            }
        }
        if sigma.last() != Some(&base) {
            return Err(Error::Input("loop vertex does not match the last drafter".into()));
        }
        sigma.reverse();
        t_params.reverse();
        HierarchyPlan::new_unordered(sigma, t_params)
    }
}

/// Vertex numbering used by [`build_graph`]: source, then the grid in
/// model-major order, then the loop vertices.
#[derive(Debug, Clone, Copy)]
pub struct GridLayout {
    pub drafters: usize,
    pub t_max: u32,
}

impl GridLayout {
    pub fn grid(&self, model: usize, t: u32) -> VertexId {
        1 + model * self.t_max as usize + (t as usize - 1)
    }

    pub fn lp(&self, model: usize) -> VertexId {
        1 + self.drafters * self.t_max as usize + model
    }

    pub fn num_vertices(&self) -> usize {
        1 + self.drafters * self.t_max as usize + self.drafters
    }

    /// Closed-form edge count: source edges, internal edges over pairs
    /// `i > k` with `j >= l`, to-loop edges and self-loops.
    pub fn num_edges(&self) -> usize {
        let k = self.drafters;
        let t = self.t_max as usize;
        let pairs = k * k.saturating_sub(1) / 2;
        k * t + pairs * t * (t + 1) / 2 + k * t + k
    }
}

/// Builds the reduction for `problem`: one grid vertex per (drafter, T)
/// choice, edges weighted so that a path's flow cost equals the latency of
/// the hierarchy it encodes.
pub fn build_graph(problem: &Problem) -> GspGraph {
    let target = problem.target();
    let layout = GridLayout { drafters: target, t_max: problem.t_max() };
    let t_max = problem.t_max();
    let c_target = problem.cost(target);
    let mut gammas = GammaTable::new(t_max);

    let mut vertices = Vec::with_capacity(layout.num_vertices());
    vertices.push(Vertex::Source { model: target });
    for model in 0..target {
        vertices.extend((1..=t_max).map(|t| Vertex::Grid { model, t }));
    }
    vertices.extend((0..target).map(|model| Vertex::Loop { model }));

    let mut edges = Vec::with_capacity(layout.num_edges());
    for i in 0..target {
        let alpha = problem.alpha(i, target);
        for j in 1..=t_max {
            let mu = top_rate(alpha, j);
            edges.push(Edge {
                from: 0,
                to: layout.grid(i, j),
                multiplier: mu,
                cost: mu * c_target,
                kind: EdgeKind::Source,
            });
        }
    }
    for i in 0..target {
        let c_i = problem.cost(i);
        for j in 1..=t_max {
            let from = layout.grid(i, j);
            for k in 0..i {
                let alpha = problem.alpha(k, i);
                for l in 1..=j {
                    let mu = gammas.get(alpha, l, j);
                    edges.push(Edge {
                        from,
                        to: layout.grid(k, l),
                        multiplier: mu,
                        cost: mu * c_i,
                        kind: EdgeKind::Internal,
                    });
                }
            }
            edges.push(Edge {
                from,
                to: layout.lp(i),
                multiplier: 1.0,
                cost: j as f64 * c_i,
                kind: EdgeKind::ToLoop,
            });
        }
    }
    for i in 0..target {
        let v = layout.lp(i);
        edges.push(Edge { from: v, to: v, multiplier: 0.5, cost: 0.0, kind: EdgeKind::SelfLoop });
    }

    GspGraph::from_parts(vertices, edges, 0, c_target).expect("reduction is well-formed")
}
