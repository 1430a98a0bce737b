//! Timing-control and zero-shot composition experiments with automated
//! geometric judges.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::graph::{
    compose, ActionEdge, ActionGraph, Vocabulary, CONTAIN, DESTINATION, PICK_PLACE, ROTATE, SLIDE,
};
use crate::layout::{rollout_boxes, Lgf};
use crate::world::{
    check_motion, execute_semantics, forms_composite, place_objects, sample_episode, Shape, Size,
    WorldObject, DURATION_RANGE, MIN_TRAVEL, PALETTE,
};

use super::metrics::MetricReport;
use super::TrainError;

/// Cumulative center displacement that marks the onset of motion.
pub const ONSET_THRESHOLD: f64 = 0.03;
/// Distance within which a composite's final position counts as reached.
pub const COMPOSITION_TOLERANCE: f64 = 0.05;
const EPISODE_LENGTH: usize = 16;
const MAX_TRIES: usize = 100_000;

pub const TIMING_ACCURACY: &str = "timing_accuracy";
pub const SWAP_SUCCESS: &str = "swap_success";
pub const HUDDLE_SUCCESS: &str = "huddle_success";

/// Anything that turns a graph and its first layout into a layout for every
/// frame.
pub trait LayoutPredictor {
    fn layouts(
        &mut self,
        graph: &ActionGraph,
        first: &[BBox],
    ) -> Result<Vec<Vec<BBox>>, TrainError>;
}

/// The ground-truth world, as an oracle predictor.
pub struct GroundTruth;

impl LayoutPredictor for GroundTruth {
    fn layouts(
        &mut self,
        graph: &ActionGraph,
        first: &[BBox],
    ) -> Result<Vec<Vec<BBox>>, TrainError> {
        Ok(execute_semantics(graph, first)?)
    }
}

/// Autoregressive rollouts of a layout model.
pub struct Rollout<'a>(pub &'a mut dyn Lgf);

impl LayoutPredictor for Rollout<'_> {
    fn layouts(
        &mut self,
        graph: &ActionGraph,
        first: &[BBox],
    ) -> Result<Vec<Vec<BBox>>, TrainError> {
        Ok(rollout_boxes(self.0, graph, first)?)
    }
}

/// Two graphs that differ only in when one action runs: `early` has the
/// action `shift` frames before `late`.
#[derive(Clone, Debug)]
pub struct TimingPair {
    pub early: ActionGraph,
    pub late: ActionGraph,
    pub initial: Vec<BBox>,
    pub subject: usize,
    pub shift: usize,
}

/// First frame at which `object` is more than [`ONSET_THRESHOLD`] away from
/// where it started.
pub fn motion_onset(layouts: &[Vec<BBox>], object: usize) -> Option<usize> {
    let start = layouts.first()?.get(object)?.center();
    layouts.iter().position(|l| {
        let c = l[object].center();
        (c[0] - start[0]).hypot(c[1] - start[1]) > ONSET_THRESHOLD
    })
}

fn moves(graph: &ActionGraph, e: &ActionEdge) -> bool {
    graph.action_name(e) != ROTATE
}

/// A shiftable edge: it moves its subject, is the subject's first motion,
/// the subject is never carried by a container, and a contain target is at
/// rest until the action starts.
fn shiftable(graph: &ActionGraph, k: usize) -> bool {
    let e = &graph.edges()[k];
    if !moves(graph, e) {
        return false;
    }
    graph.edges().iter().enumerate().all(|(m, o)| {
        let earlier_motion =
            m != k && o.subject == e.subject && moves(graph, o) && o.start < e.start;
        let carried =
            graph.action_name(o) == CONTAIN && o.object == e.subject && o.subject != o.object;
        let target_moves = graph.action_name(e) == CONTAIN
            && o.subject == e.object
            && m != k
            && moves(graph, o)
            && o.start < e.start;
        !(earlier_motion || carried || target_moves)
    })
}

/// `n` timing pairs drawn from the training distribution; deterministic in
/// `seed`. Rotations are never shifted (they do not displace anything).
pub fn timing_pairs(n: usize, seed: u64) -> Result<Vec<TimingPair>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..MAX_TRIES {
        if pairs.len() == n {
            break;
        }
        let ep = match sample_episode(
            rng.next_u64(),
            rng.random_range(2..=5),
            rng.random_range(1..=4),
            EPISODE_LENGTH,
        ) {
            Ok(ep) => ep,
            Err(_) => continue,
        };
        let late = ep.graph;
        let candidates: Vec<usize> = (0..late.edges().len())
            .filter(|&k| shiftable(&late, k))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let k = candidates[rng.random_range(0..candidates.len())];
        let shift = rng.random_range(2..=4);
        let e = &late.edges()[k];
        if e.start < shift {
            continue;
        }
        let mut edges = late.edges().to_vec();
        edges[k].start -= shift;
        edges[k].end -= shift;
        let Ok(early) = late.with_edges(edges) else {
            continue;
        };
        if check_motion(&early).is_err() || forms_composite(&early) {
            continue;
        }
        pairs.push(TimingPair {
            subject: e.subject,
            early,
            late,
            initial: ep.layouts[0].clone(),
            shift,
        });
    }
    if pairs.len() < n {
        return Err(TrainError::Config(format!(
            "only {} of {n} timing pairs found",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Fraction of pairs whose early video starts moving strictly before the
/// late one.
pub fn eval_timing(
    predictor: &mut dyn LayoutPredictor,
    pairs: &[TimingPair],
) -> Result<f64, TrainError> {
    let mut correct = 0;
    for p in pairs {
        let early = motion_onset(&predictor.layouts(&p.early, &p.initial)?, p.subject);
        let late = motion_onset(&predictor.layouts(&p.late, &p.initial)?, p.subject);
        correct += usize::from(
            matches!((early, late), (Some(a), Some(b)) if a < b)
                || (early.is_some() && late.is_none()),
        );
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Which composite an episode demonstrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composite {
    /// Object `a` is picked and placed where `b` is while `b` slides to
    /// where `a` was.
    Swap { a: usize, b: usize },
    /// Every cone covers its own target at the same time.
    Huddle,
}

#[derive(Clone, Debug)]
pub struct CompositeEpisode {
    pub graph: ActionGraph,
    pub initial: Vec<BBox>,
    pub kind: Composite,
    /// `(container, target)` pairs of a huddle.
    pub pairs: Vec<(usize, usize)>,
}

fn random_object(rng: &mut impl Rng, shapes: &[Shape], depth: usize) -> WorldObject {
    WorldObject {
        shape: shapes[rng.random_range(0..shapes.len())],
        color: rng.random_range(0..PALETTE.len()),
        size: Size::ALL[rng.random_range(0..Size::ALL.len())],
        depth,
    }
}

fn window(rng: &mut impl Rng) -> (usize, usize) {
    let d = rng.random_range(DURATION_RANGE);
    let s = rng.random_range(0..EPISODE_LENGTH - d);
    (s, s + d)
}

fn single_edge_graph(objects: &[WorldObject], edge: ActionEdge) -> Result<ActionGraph, TrainError> {
    let nodes = objects
        .iter()
        .enumerate()
        .map(|(i, o)| o.to_node(i))
        .collect();
    ActionGraph::new(
        Arc::new(Vocabulary::cater()),
        nodes,
        vec![edge],
        EPISODE_LENGTH,
    )
    .map_err(|e| TrainError::Config(e.to_string()))
}

fn inside_with_margin(o: &WorldObject, c: [f64; 2]) -> bool {
    let m = 1.2 * o.radius() + 0.01;
    (m..=1.0 - m).contains(&c[0]) && (m..=1.0 - m).contains(&c[1])
}

const NON_CONES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

/// `n` swap episodes built by composing a pick-place graph with a slide
/// graph over the same window. Pairs closer than the minimum travel are
/// skipped as degenerate.
pub fn swap_episodes(n: usize, seed: u64) -> Result<Vec<CompositeEpisode>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..MAX_TRIES {
        if out.len() == n {
            break;
        }
        let count = rng.random_range(2..=5);
        let objects: Vec<WorldObject> = (0..count)
            .map(|i| {
                let shapes: &[Shape] = if i < 2 { &NON_CONES } else { &Shape::ALL };
                random_object(&mut rng, shapes, i)
            })
            .collect();
        let Ok(initial) = place_objects(&mut rng, &objects) else {
            continue;
        };
        let (a, b) = (0, 1);
        let (ca, cb) = (initial[a].center(), initial[b].center());
        if initial[a].center_distance(initial[b]) < MIN_TRAVEL
            || !inside_with_margin(&objects[a], cb)
            || !inside_with_margin(&objects[b], ca)
        {
            continue;
        }
        let (s, e) = window(&mut rng);
        let pick =
            ActionEdge::new(a, 2, a, s, e).with_attr(DESTINATION, [cb[0] - ca[0], cb[1] - ca[1]]);
        let slide =
            ActionEdge::new(b, 3, b, s, e).with_attr(DESTINATION, [ca[0] - cb[0], ca[1] - cb[1]]);
        let graph = compose(&[
            single_edge_graph(&objects, pick)?,
            single_edge_graph(&objects, slide)?,
        ])
        .map_err(|e| TrainError::Config(e.to_string()))?;
        debug_assert_eq!(graph.action_name(&graph.edges()[0]), PICK_PLACE);
        debug_assert_eq!(graph.action_name(&graph.edges()[1]), SLIDE);
        if check_motion(&graph).is_err() {
            continue;
        }
        out.push(CompositeEpisode {
            graph,
            initial,
            kind: Composite::Swap { a, b },
            pairs: vec![],
        });
    }
    if out.len() < n {
        return Err(TrainError::Config(format!(
            "only {} of {n} swap episodes found",
            out.len()
        )));
    }
    Ok(out)
}

/// `n` huddle episodes: two or three cones each contain their own target
/// over one shared window, composed from single-contain graphs.
pub fn huddle_episodes(n: usize, seed: u64) -> Result<Vec<CompositeEpisode>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..MAX_TRIES {
        if out.len() == n {
            break;
        }
        let k = rng.random_range(2..=3);
        let extra = rng.random_range(0..=6 - 2 * k);
        let mut objects = Vec::new();
        for i in 0..k {
            objects.push(random_object(&mut rng, &[Shape::Cone], i));
        }
        for i in 0..k + extra {
            let shapes: &[Shape] = if i < k { &NON_CONES } else { &Shape::ALL };
            objects.push(random_object(&mut rng, shapes, k + i));
        }
        let Ok(initial) = place_objects(&mut rng, &objects) else {
            continue;
        };
        let pairs: Vec<(usize, usize)> = (0..k).map(|m| (m, k + m)).collect();
        if pairs
            .iter()
            .any(|&(c, t)| initial[c].center_distance(initial[t]) < MIN_TRAVEL)
        {
            continue;
        }
        let (s, e) = window(&mut rng);
        let parts = pairs
            .iter()
            .map(|&(c, t)| single_edge_graph(&objects, ActionEdge::new(c, 1, t, s, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = compose(&parts).map_err(|e| TrainError::Config(e.to_string()))?;
        if check_motion(&graph).is_err() {
            continue;
        }
        out.push(CompositeEpisode {
            graph,
            initial,
            kind: Composite::Huddle,
            pairs,
        });
    }
    if out.len() < n {
        return Err(TrainError::Config(format!(
            "only {} of {n} huddle episodes found",
            out.len()
        )));
    }
    Ok(out)
}

fn near(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).hypot(a[1] - b[1]) <= COMPOSITION_TOLERANCE
}

/// Whether the final predicted layout completes the composite.
pub fn composite_success(ep: &CompositeEpisode, layouts: &[Vec<BBox>]) -> bool {
    let Some(last) = layouts.last() else {
        return false;
    };
    match ep.kind {
        Composite::Swap { a, b } => {
            near(last[a].center(), ep.initial[b].center())
                && near(last[b].center(), ep.initial[a].center())
        }
        Composite::Huddle => ep
            .pairs
            .iter()
            .all(|&(c, t)| near(last[c].center(), ep.initial[t].center())),
    }
}

pub fn success_rate(
    predictor: &mut dyn LayoutPredictor,
    episodes: &[CompositeEpisode],
) -> Result<f64, TrainError> {
    let mut ok = 0;
    for ep in episodes {
        ok += usize::from(composite_success(
            ep,
            &predictor.layouts(&ep.graph, &ep.initial)?,
        ));
    }
    Ok(ok as f64 / episodes.len().max(1) as f64)
}

/// Timing accuracy over `pairs` timing pairs and swap/huddle success over
/// `episodes` episodes each.
pub fn run_experiments(
    predictor: &mut dyn LayoutPredictor,
    pairs: usize,
    episodes: usize,
    seed: u64,
) -> Result<MetricReport, TrainError> {
    let mut report = MetricReport::new();
    report.set(
        TIMING_ACCURACY,
        eval_timing(predictor, &timing_pairs(pairs, seed)?)?,
    );
    report.set(
        SWAP_SUCCESS,
        success_rate(predictor, &swap_episodes(episodes, seed)?)?,
    );
    report.set(
        HUDDLE_SUCCESS,
        success_rate(predictor, &huddle_episodes(episodes, seed)?)?,
    );
    Ok(report)
}
