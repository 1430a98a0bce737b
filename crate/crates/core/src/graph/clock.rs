use super::{ActionEdge, ActionGraph};

/// Progress of `edge` at frame `t`: `clip((t - start) / (end - start), 0, 1)`.
pub fn progress(edge: &ActionEdge, t: usize) -> f64 {
    let span = (edge.end - edge.start) as f64;
    ((t as f64 - edge.start as f64) / span).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClockedEdge {
    pub edge: ActionEdge,
    pub progress: f64,
}

/// The graph as seen at one frame: every edge, each with its progress.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockedGraph {
    pub frame: usize,
    pub edges: Vec<ClockedEdge>,
}

impl ClockedGraph {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// The clocked graph at any frame `t >= 0`, including frames past the end.
pub fn clocked_at(graph: &ActionGraph, t: usize) -> ClockedGraph {
    ClockedGraph {
        frame: t,
        edges: graph
            .edges()
            .iter()
            .map(|e| ClockedEdge {
                edge: e.clone(),
                progress: progress(e, t),
            })
            .collect(),
    }
}

/// One clocked graph per frame `0..length`.
pub fn unroll(graph: &ActionGraph) -> Vec<ClockedGraph> {
    (0..graph.length()).map(|t| clocked_at(graph, t)).collect()
}
