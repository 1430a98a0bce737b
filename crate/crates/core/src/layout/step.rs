use std::sync::Arc;

use crate::bbox::BBox;
use crate::graph::{progress, ActionGraph, Vocabulary, CONTAIN};
use crate::tensor::Tensor;

use super::LayoutError;

/// Per-edge numeric features besides the action embedding:
/// `[r, box_i (4), box_j (4), destination (2), target - center_i (2),
/// anchor - box_i (4)]`.
pub const EDGE_EXTRA: usize = 17;

/// One edge of the clocked graph, with positions resolved against the
/// layout history.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeInput {
    pub subject: usize,
    pub object: usize,
    pub action: usize,
    pub start: usize,
    pub end: usize,
    pub progress: f64,
    /// The destination offset as written in the graph, if any.
    pub destination: Option<[f64; 2]>,
    /// The subject's box when the action starts (its current box if the
    /// action has not started yet).
    pub anchor: BBox,
    /// The center the action moves its subject to; the anchor center for
    /// actions that do not move.
    pub target: [f64; 2],
}

/// Everything a layout model sees when predicting frame `frame`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub frame: usize,
    pub vocab: Arc<Vocabulary>,
    pub categories: Vec<usize>,
    pub prev: Vec<BBox>,
    pub edges: Vec<EdgeInput>,
}

impl StepInput {
    /// Builds the input for frame `t >= 1` from `history[s]`, the layout at
    /// frame `s`, for every `s < t`.
    pub fn from_history(
        graph: &ActionGraph,
        t: usize,
        history: &[Vec<BBox>],
    ) -> Result<Self, LayoutError> {
        if t == 0 || history.len() < t {
            return Err(LayoutError::Input(format!(
                "frame {t} needs {t} frames of history, got {}",
                history.len()
            )));
        }
        let n = graph.num_objects();
        if let Some(bad) = history[..t].iter().position(|l| l.len() != n) {
            return Err(LayoutError::Input(format!(
                "history frame {bad} has {} boxes for {n} objects",
                history[bad].len()
            )));
        }
        let prev = history[t - 1].clone();
        let edges = graph
            .edges()
            .iter()
            .map(|e| {
                let started = e.start < t;
                let at = if started { &history[e.start] } else { &prev };
                let anchor = at[e.subject];
                let target = if let Some(d) = e.destination() {
                    [anchor.x + d[0], anchor.y + d[1]]
                } else if graph.action_name(e) == CONTAIN && e.subject != e.object {
                    at[e.object].center()
                } else {
                    anchor.center()
                };
                EdgeInput {
                    subject: e.subject,
                    object: e.object,
                    action: e.action,
                    start: e.start,
                    end: e.end,
                    progress: progress(e, t),
                    destination: e.destination(),
                    anchor,
                    target,
                }
            })
            .collect();
        Ok(StepInput {
            frame: t,
            vocab: graph.vocab().clone(),
            categories: graph.objects().iter().map(|o| o.category).collect(),
            prev,
            edges,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.categories.len()
    }

    fn validate(&self) -> Result<(), LayoutError> {
        let n = self.num_objects();
        if self.prev.len() != n {
            return Err(LayoutError::Input(format!(
                "{} previous boxes for {n} objects",
                self.prev.len()
            )));
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.subject >= n || e.object >= n {
                return Err(LayoutError::Input(format!(
                    "edge {k} refers to a missing object"
                )));
            }
            if e.action >= self.vocab.actions().len() {
                return Err(LayoutError::Input(format!(
                    "edge {k} has an unknown action"
                )));
            }
        }
        Ok(())
    }
}

/// The numeric part of an edge's initial feature vector (see [`EDGE_EXTRA`]).
pub fn raw_edge_features(input: &StepInput, edge: &EdgeInput) -> [f64; EDGE_EXTRA] {
    let bi = input.prev[edge.subject];
    let bj = input.prev[edge.object];
    let d = edge.destination.unwrap_or([0.0; 2]);
    let a = edge.anchor;
    [
        edge.progress,
        bi.x,
        bi.y,
        bi.w,
        bi.h,
        bj.x,
        bj.y,
        bj.w,
        bj.h,
        d[0],
        d[1],
        edge.target[0] - bi.x,
        edge.target[1] - bi.y,
        a.x - bi.x,
        a.y - bi.y,
        a.w - bi.w,
        a.h - bi.h,
    ]
}

/// Several step inputs flattened into one disjoint graph. Objects that no
/// edge touches get an idle self-edge whose action id is the number of
/// vocabulary actions.
#[derive(Clone, Debug)]
pub struct Batch {
    pub num_nodes: usize,
    pub categories: Vec<usize>,
    /// `[N, 4]` previous boxes.
    pub prev: Tensor,
    pub subjects: Vec<usize>,
    pub objects: Vec<usize>,
    pub actions: Vec<usize>,
    /// `[E, EDGE_EXTRA]`.
    pub edge_raw: Tensor,
    /// Node offset of each instance; `offsets[k]..offsets[k + 1]`.
    pub offsets: Vec<usize>,
    /// Edge range of each instance, in file order followed by idle edges.
    pub edge_offsets: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: &[StepInput]) -> Result<Self, LayoutError> {
        let mut b = Batch {
            num_nodes: 0,
            categories: vec![],
            prev: Tensor::scalar(0.0),
            subjects: vec![],
            objects: vec![],
            actions: vec![],
            edge_raw: Tensor::scalar(0.0),
            offsets: vec![0],
            edge_offsets: vec![0],
        };
        let mut prev = Vec::new();
        let mut raw = Vec::new();
        for input in inputs {
            input.validate()?;
            let base = b.num_nodes;
            let n = input.num_objects();
            let idle = input.vocab.actions().len();
            let mut touched = vec![false; n];
            for e in &input.edges {
                touched[e.subject] = true;
                touched[e.object] = true;
                b.subjects.push(base + e.subject);
                b.objects.push(base + e.object);
                b.actions.push(e.action);
                raw.extend_from_slice(&raw_edge_features(input, e));
            }
            for i in (0..n).filter(|&i| !touched[i]) {
                let bi = input.prev[i];
                b.subjects.push(base + i);
                b.objects.push(base + i);
                b.actions.push(idle);
                let mut f = [0.0; EDGE_EXTRA];
                f[1..5].copy_from_slice(&bi.to_array());
                f[5..9].copy_from_slice(&bi.to_array());
                raw.extend_from_slice(&f);
            }
            b.categories.extend_from_slice(&input.categories);
            prev.extend(input.prev.iter().flat_map(|p| p.to_array()));
            b.num_nodes += n;
            b.offsets.push(b.num_nodes);
            b.edge_offsets.push(b.subjects.len());
        }
        if b.num_nodes == 0 {
            return Err(LayoutError::Input("batch has no objects".into()));
        }
        b.prev = Tensor::new(&[b.num_nodes, 4], prev)?;
        b.edge_raw = Tensor::new(&[b.subjects.len(), EDGE_EXTRA], raw)?;
        Ok(b)
    }

    pub fn num_edges(&self) -> usize {
        self.subjects.len()
    }
}
