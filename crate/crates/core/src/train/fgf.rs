use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::frame::{Fgf, FramePair};
use crate::layout::{NeuralLgf, StepInput};
use crate::tensor::{nn, Adam, Graph, ParamStore, Tensor};
use crate::world::Episode;

use super::losses::flow_loss;
use super::metrics::MetricReport;
use super::{LossRecord, TrainConfig, TrainError, TrainOutcome};

pub const PIXEL_L1: &str = "pixel_l1";
pub const WARP_L1: &str = "warp_l1";
pub const COPY_L1: &str = "copy_l1";

/// An episode prepared for frame training: the layout model's descriptors
/// for every frame `t >= 1`, computed from the ground-truth previous
/// layout. Frames are converted to tensors only when a batch needs them.
pub struct FrameEpisode<'a> {
    pub episode: &'a Episode,
    /// `descriptors[t - 1]` belongs to frame `t`.
    pub descriptors: Vec<Tensor>,
}

impl<'a> FrameEpisode<'a> {
    pub fn new(episode: &'a Episode, lgf: &dyn NeuralLgf) -> Result<Self, TrainError> {
        let descriptors = if episode.num_objects() == 0 || episode.length() < 2 {
            vec![Tensor::zeros(&[1, lgf.config().dim]); episode.length().saturating_sub(1)]
        } else {
            let inputs = (1..episode.length())
                .map(|t| StepInput::from_history(&episode.graph, t, &episode.layouts))
                .collect::<Result<Vec<_>, _>>()?;
            lgf.predict_batch(&inputs)?
                .into_iter()
                .map(|s| s.descriptors.expect("learned models return descriptors"))
                .collect()
        };
        Ok(FrameEpisode {
            episode,
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.episode.length()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame `t` as an `[H, W, 3]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        self.episode.frames[t].to_tensor()
    }

    /// The step that predicts frame `t` from ground truth at `t - 1`, with
    /// `prev` being frame `t - 1` as a tensor.
    pub fn pair<'b>(&'b self, t: usize, prev: &'b Tensor) -> FramePair<'b> {
        FramePair {
            prev,
            prev_boxes: &self.episode.layouts[t - 1],
            cur_boxes: &self.episode.layouts[t],
            descriptors: &self.descriptors[t - 1],
        }
    }
}

/// Previous and target frames of a batch of `(episode, t)` steps.
fn batch_frames(episodes: &[FrameEpisode], steps: &[(usize, usize)]) -> (Vec<Tensor>, Vec<Tensor>) {
    steps
        .iter()
        .map(|&(k, t)| (episodes[k].frame(t - 1), episodes[k].frame(t)))
        .unzip()
}

pub fn prepare_frames<'a>(
    episodes: &[&'a Episode],
    lgf: &dyn NeuralLgf,
) -> Result<Vec<FrameEpisode<'a>>, TrainError> {
    episodes.iter().map(|e| FrameEpisode::new(e, lgf)).collect()
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// One-step frame metrics from ground-truth conditioning: mean per-pixel
/// L1 of the refined frame, of the warped frame, and of copying the last
/// frame.
pub fn eval_fgf(
    fgf: &Fgf,
    episodes: &[FrameEpisode],
    chunk: usize,
) -> Result<MetricReport, TrainError> {
    let steps: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(k, e)| (1..e.len()).map(move |t| (k, t)))
        .collect();
    let (mut refined, mut warped, mut copy) = (0.0, 0.0, 0.0);
    for batch in steps.chunks(chunk.max(1)) {
        let (prev, next) = batch_frames(episodes, batch);
        let pairs: Vec<FramePair> = batch
            .iter()
            .zip(&prev)
            .map(|(&(k, t), p)| episodes[k].pair(t, p))
            .collect();
        let mut g = Graph::new();
        let out = fgf.forward(&mut g, &pairs)?;
        let size = prev[0].numel();
        let (f, w) = (g.value(out.frame).data(), g.value(out.warped).data());
        for (i, (p, gt)) in prev.iter().zip(&next).enumerate() {
            let gt = gt.data();
            refined += mean_abs_diff(&f[i * size..(i + 1) * size], gt);
            warped += mean_abs_diff(&w[i * size..(i + 1) * size], gt);
            copy += mean_abs_diff(p.data(), gt);
        }
    }
    let n = steps.len().max(1) as f64;
    let mut report = MetricReport::new();
    report.set(PIXEL_L1, refined / n);
    report.set(WARP_L1, warped / n);
    report.set(COPY_L1, copy / n);
    Ok(report)
}

/// Trains the frame model on ground-truth layouts and frames with
/// `lambda_flow * L_flow + lambda_rec * L1(frame, gt)`. With held-out
/// episodes and `eval_every > 0`, the parameters with the lowest held-out
/// pixel L1 are kept.
pub fn train_fgf(
    fgf: &mut Fgf,
    train: &[FrameEpisode],
    heldout: &[FrameEpisode],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let mut instances: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(k, e)| (1..e.len()).map(move |t| (k, t)))
        .collect();
    if instances.is_empty() {
        return Err(TrainError::Config("no training frame pairs".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam());
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;
    let mut evaluate = |fgf: &Fgf, step: usize| -> Result<(), TrainError> {
        if heldout.is_empty() {
            return Ok(());
        }
        let l1 = eval_fgf(fgf, heldout, cfg.frame_batch)?
            .get(PIXEL_L1)
            .unwrap_or(f64::INFINITY);
        log::info!("step {step}: held-out pixel L1 {l1:.5}");
        if best.as_ref().is_none_or(|(b, _, _)| l1 < *b) {
            best = Some((l1, step, fgf.store().clone()));
        }
        Ok(())
    };
    'epochs: for epoch in 0..cfg.epochs {
        instances.shuffle(&mut rng);
        for chunk in instances.chunks(cfg.frame_batch) {
            let (prev, next) = batch_frames(train, chunk);
            let pairs: Vec<FramePair> = chunk
                .iter()
                .zip(&prev)
                .map(|(&(k, t), p)| train[k].pair(t, p))
                .collect();
            let target: Vec<f64> = next.iter().flat_map(|f| f.data().iter().copied()).collect();
            let mut g = Graph::new();
            let out = fgf.forward(&mut g, &pairs)?;
            let gt = g.input(Tensor::new(g.shape(out.frame), target)?);
            let lf = flow_loss(&mut g, out.warped, gt)?;
            let lr = nn::l1_mean(&mut g, out.frame, gt)?;
            let a = nn::scale(&mut g, lf, cfg.lambda_flow)?;
            let b = nn::scale(&mut g, lr, cfg.lambda_rec)?;
            let loss = g.add(a, b)?;
            g.backward(loss)?;
            let store = fgf.store_mut();
            store.zero_grad();
            g.accumulate_param_grads(store);
            adam.step(store)?;
            step += 1;
            log.push(LossRecord {
                step,
                epoch,
                terms: vec![
                    ("flow".into(), g.value(lf).item()),
                    ("reconstruction".into(), g.value(lr).item()),
                    ("total".into(), g.value(loss).item()),
                ],
            });
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                evaluate(fgf, step)?;
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }
    if cfg.eval_every == 0 || step % cfg.eval_every != 0 {
        evaluate(fgf, step)?;
    }
    let best_step = match best {
        Some((_, s, store)) => {
            *fgf.store_mut() = store;
            s
        }
        None => step,
    };
    let mut report = if heldout.is_empty() {
        MetricReport::new()
    } else {
        eval_fgf(fgf, heldout, cfg.frame_batch)?
    };
    report.set("steps", step as f64);
    report.set("best_step", best_step as f64);
    log::info!(
        "trained frame model for {step} steps in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    Ok(TrainOutcome {
        report,
        log,
        best_step,
    })
}
