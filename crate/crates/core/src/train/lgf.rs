use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::graph::ActionGraph;
use crate::layout::{Batch, LayoutState, Lgf, NeuralLgf, StepInput};
use crate::tensor::{nn, Adam, Graph, Tensor};
use crate::world::Episode;

use super::losses::layout_loss;
use super::metrics::{eval_layout, MetricReport, MIOU};
use super::{LossRecord, TrainConfig, TrainError, TrainOutcome};

/// Splits `n` episodes into training and held-out index sets. The last
/// `round(n * fraction)` episodes are held out.
pub fn split_heldout(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let held = ((n as f64) * fraction).round() as usize;
    let cut = n - held.min(n);
    ((0..cut).collect(), (cut..n).collect())
}

/// Rolls out many graphs in lockstep, batching each frame's predictions
/// into one forward pass.
pub fn rollout_many(
    model: &dyn NeuralLgf,
    episodes: &[(&ActionGraph, &[BBox])],
) -> Result<Vec<Vec<LayoutState>>, TrainError> {
    let mut out: Vec<Vec<LayoutState>> = episodes
        .iter()
        .map(|(_, first)| {
            vec![LayoutState {
                boxes: first.to_vec(),
                descriptors: None,
            }]
        })
        .collect();
    let longest = episodes.iter().map(|(g, _)| g.length()).max().unwrap_or(0);
    for t in 1..longest {
        let active: Vec<usize> = (0..episodes.len())
            .filter(|&k| t < episodes[k].0.length() && episodes[k].0.num_objects() > 0)
            .collect();
        let inputs = active
            .iter()
            .map(|&k| {
                let history: Vec<Vec<BBox>> = out[k].iter().map(|s| s.boxes.clone()).collect();
                StepInput::from_history(episodes[k].0, t, &history)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !inputs.is_empty() {
            for (k, state) in active.iter().zip(model.predict_batch(&inputs)?) {
                out[*k].push(state);
            }
        }
        for (k, (g, _)) in episodes.iter().enumerate() {
            if t < g.length() && g.num_objects() == 0 {
                out[k].push(LayoutState {
                    boxes: vec![],
                    descriptors: None,
                });
            }
        }
    }
    Ok(out)
}

/// Held-out layout metrics of a learned model: autoregressive rollouts from
/// each episode's first ground-truth layout.
pub fn eval_learned(
    model: &dyn NeuralLgf,
    episodes: &[&Episode],
) -> Result<MetricReport, TrainError> {
    let jobs: Vec<(&ActionGraph, &[BBox])> = episodes
        .iter()
        .map(|e| (&e.graph, &e.layouts[0][..]))
        .collect();
    let pred: Vec<Vec<Vec<BBox>>> = rollout_many(model, &jobs)?
        .into_iter()
        .map(|states| states.into_iter().map(|s| s.boxes).collect())
        .collect();
    score(episodes, &pred)
}

/// Held-out layout metrics of any predictor, one episode at a time.
pub fn eval_predictor(
    lgf: &mut dyn Lgf,
    episodes: &[&Episode],
) -> Result<MetricReport, TrainError> {
    let pred = episodes
        .iter()
        .map(|e| crate::layout::rollout_boxes(lgf, &e.graph, &e.layouts[0]))
        .collect::<Result<Vec<_>, _>>()?;
    score(episodes, &pred)
}

fn score(episodes: &[&Episode], pred: &[Vec<Vec<BBox>>]) -> Result<MetricReport, TrainError> {
    let graphs: Vec<&ActionGraph> = episodes.iter().map(|e| &e.graph).collect();
    let gt: Vec<Vec<Vec<BBox>>> = episodes.iter().map(|e| e.layouts.clone()).collect();
    eval_layout(&graphs, pred, &gt)
}

/// Teacher-forced training: every instance is one `(episode, frame)` step
/// conditioned on the ground-truth previous layout. With held-out episodes
/// and `eval_every > 0`, the parameters with the best held-out mIOU are
/// kept.
pub fn train_lgf(
    model: &mut dyn NeuralLgf,
    train: &[&Episode],
    heldout: &[&Episode],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if train.is_empty() {
        return Err(TrainError::Config("no training episodes".into()));
    }
    let started = Instant::now();
    let mut instances: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .filter(|(_, e)| e.num_objects() > 0)
        .flat_map(|(k, e)| (1..e.length()).map(move |t| (k, t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam());
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;
    let mut step = 0;
    let mut evaluate = |model: &mut dyn NeuralLgf, step: usize| -> Result<(), TrainError> {
        if heldout.is_empty() {
            return Ok(());
        }
        let miou = eval_learned(model, heldout)?.get(MIOU).unwrap_or(0.0);
        log::info!("step {step}: held-out mIOU {miou:.4}");
        if best.as_ref().is_none_or(|(b, _, _)| miou > *b) {
            best = Some((miou, step, model.store().clone()));
        }
        Ok(())
    };
    'epochs: for epoch in 0..cfg.epochs {
        instances.shuffle(&mut rng);
        for chunk in instances.chunks(cfg.batch_size) {
            let inputs = chunk
                .iter()
                .map(|&(k, t)| StepInput::from_history(&train[k].graph, t, &train[k].layouts))
                .collect::<Result<Vec<_>, _>>()?;
            let target: Vec<f64> = chunk
                .iter()
                .flat_map(|&(k, t)| train[k].layouts[t].iter().flat_map(|b| b.to_array()))
                .collect();
            let batch = Batch::new(&inputs)?;
            let mut g = Graph::new();
            let (boxes, _) = model.forward(&mut g, &batch)?;
            let gt = g.input(Tensor::new(&[batch.num_nodes, 4], target)?);
            let l1 = layout_loss(&mut g, boxes, gt)?;
            let loss = nn::scale(&mut g, l1, cfg.lambda_layout)?;
            g.backward(loss)?;
            let store = model.store_mut();
            store.zero_grad();
            g.accumulate_param_grads(store);
            adam.step(store)?;
            step += 1;
            log.push(LossRecord {
                step,
                epoch,
                terms: vec![
                    ("layout".into(), g.value(l1).item()),
                    ("total".into(), g.value(loss).item()),
                ],
            });
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                evaluate(model, step)?;
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }
    if cfg.eval_every == 0 || step % cfg.eval_every != 0 {
        evaluate(model, step)?;
    }
    let best_step = match best {
        Some((_, s, store)) => {
            *model.store_mut() = store;
            s
        }
        None => step,
    };
    let mut report = if heldout.is_empty() {
        MetricReport::new()
    } else {
        eval_learned(model, heldout)?
    };
    report.set("steps", step as f64);
    report.set("best_step", best_step as f64);
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        report.set("train_loss_first", first.terms[0].1);
        report.set("train_loss_last", last.terms[0].1);
    }
    log::info!(
        "trained {} for {step} steps in {:.1}s",
        model.config().kind,
        started.elapsed().as_secs_f64()
    );
    Ok(TrainOutcome {
        report,
        log,
        best_step,
    })
}
