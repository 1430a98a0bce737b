//! Layout generating functions: given the clocked graph at frame `t` and
//! the boxes at `t - 1`, predict the boxes at `t`.
//!
//! [`GcnLgf`] is the graph network; [`RnnLgf`], [`RuleLgf`] and
//! [`RandomLgf`] are baselines. All of them implement [`Lgf`] and can be
//! driven autoregressively by [`rollout`].

mod baselines;
mod gcn;
mod model;
mod rnn;
mod step;

pub use baselines::{RandomLgf, RuleLgf, RULE_ALPHA};
pub use gcn::{GcnLayer, GcnLgf};
pub use model::{
    load_model, save_model, Aggregation, LayoutModel, LgfConfig, ModelKind, NeuralLgf,
};
pub use rnn::RnnLgf;
pub use step::{raw_edge_features, Batch, EdgeInput, StepInput, EDGE_EXTRA};

use crate::bbox::BBox;
use crate::graph::ActionGraph;
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model vocabulary {model} does not match graph vocabulary {graph}")]
    VocabularyMismatch { model: String, graph: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Boxes plus, for learned models, the final node descriptors `[n, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutState {
    pub boxes: Vec<BBox>,
    pub descriptors: Option<Tensor>,
}

/// One step of layout prediction.
pub trait Lgf {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState, LayoutError>;
}

/// Autoregressive rollout from `first` (frame 0): every later frame is
/// predicted from the model's own previous predictions. Returns
/// `graph.length()` layouts with `first` at index 0.
pub fn rollout(
    lgf: &mut dyn Lgf,
    graph: &ActionGraph,
    first: &[BBox],
) -> Result<Vec<LayoutState>, LayoutError> {
    let mut states = vec![LayoutState {
        boxes: first.to_vec(),
        descriptors: None,
    }];
    let mut history = vec![first.to_vec()];
    for t in 1..graph.length() {
        let input = StepInput::from_history(graph, t, &history)?;
        let state = lgf.predict(&input)?;
        history.push(state.boxes.clone());
        states.push(state);
    }
    Ok(states)
}

/// Boxes of a rollout, frame by frame.
pub fn rollout_boxes(
    lgf: &mut dyn Lgf,
    graph: &ActionGraph,
    first: &[BBox],
) -> Result<Vec<Vec<BBox>>, LayoutError> {
    Ok(rollout(lgf, graph, first)?
        .into_iter()
        .map(|s| s.boxes)
        .collect())
}
