//! Losses, training loops, metrics and the automated experiment suite.

mod config;
mod experiments;
mod fgf;
mod lgf;
mod losses;
mod metrics;

pub use config::{ModelChoice, TrainConfig};
pub use experiments::{
    composite_success, eval_timing, huddle_episodes, motion_onset, run_experiments, success_rate,
    swap_episodes, timing_pairs, Composite, CompositeEpisode, GroundTruth, LayoutPredictor,
    Rollout, TimingPair, COMPOSITION_TOLERANCE, HUDDLE_SUCCESS, ONSET_THRESHOLD, SWAP_SUCCESS,
    TIMING_ACCURACY,
};
pub use fgf::{eval_fgf, prepare_frames, train_fgf, FrameEpisode, COPY_L1, PIXEL_L1, WARP_L1};
pub use lgf::{eval_learned, eval_predictor, rollout_many, split_heldout, train_lgf};
pub use losses::{flow_loss, layout_loss};
pub use metrics::{eval_layout, IouStats, MetricReport, BOXES, MIOU, RECALL_03, RECALL_05};

use std::path::Path;

use crate::frame::FrameError;
use crate::layout::LayoutError;
use crate::tensor::TensorError;
use crate::world::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One optimizer step's loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub terms: Vec<(String, f64)>,
}

/// Result of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub report: MetricReport,
    pub log: Vec<LossRecord>,
    pub best_step: usize,
}

/// Writes the loss log as CSV with a `step,epoch,<terms..>` header.
pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Io {
        path: path.display().to_string(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["step".to_string(), "epoch".to_string()];
    if let Some(first) = log.first() {
        header.extend(first.terms.iter().map(|(k, _)| k.clone()));
    }
    w.write_record(&header).map_err(io)?;
    for r in log {
        let mut row = vec![r.step.to_string(), r.epoch.to_string()];
        row.extend(r.terms.iter().map(|(_, v)| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
