use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::graph::{ActionEdge, ActionGraph, Vocabulary, CONTAIN, DESTINATION, PICK_PLACE, SLIDE};

use super::semantics::{check_motion, execute_semantics};
use super::{Episode, Shape, Size, WorldError, WorldObject, PALETTE};

/// Frames an action lasts, `end - start`.
pub const DURATION_RANGE: RangeInclusive<usize> = 4..=8;
/// Shortest distance a sampled slide or pick-place moves its subject.
pub const MIN_TRAVEL: f64 = 0.15;

const PLACEMENT_ATTEMPTS: usize = 1000;
const DRAWS_PER_OBJECT: usize = 20;
const PROPOSALS_PER_ACTION: usize = 50;
const ACTION_ATTEMPTS: usize = 200;

/// Parameters for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub n_objects: usize,
    pub n_actions: usize,
    pub length: usize,
    pub resolution: usize,
    /// Never sample a pick-place and a slide sharing a time window, nor two
    /// overlapping contains. Keeps the swap and huddle composites out of
    /// training data.
    pub exclude_composites: bool,
}

impl SampleConfig {
    pub fn new(n_objects: usize, n_actions: usize) -> Self {
        SampleConfig {
            n_objects,
            n_actions,
            length: 16,
            resolution: 64,
            exclude_composites: true,
        }
    }

    fn validate(&self) -> Result<(), WorldError> {
        let range = |msg: String| Err(WorldError::Range(msg));
        if !(2..=6).contains(&self.n_objects) {
            return range(format!(
                "n_objects must be in 2..=6, got {}",
                self.n_objects
            ));
        }
        if self.n_actions > 4 {
            return range(format!(
                "n_actions must be in 0..=4, got {}",
                self.n_actions
            ));
        }
        if self.length < 2 || (self.n_actions > 0 && self.length <= *DURATION_RANGE.start()) {
            return range(format!("length {} is too short", self.length));
        }
        if self.resolution < 8 {
            return range(format!(
                "resolution must be at least 8, got {}",
                self.resolution
            ));
        }
        Ok(())
    }
}

/// Samples one episode: placement, then actions, then ground truth.
/// Deterministic in `seed`.
pub fn sample_episode(
    seed: u64,
    n_objects: usize,
    n_actions: usize,
    length: usize,
) -> Result<Episode, WorldError> {
    let cfg = SampleConfig {
        length,
        ..SampleConfig::new(n_objects, n_actions)
    };
    sample_episode_with(&cfg, seed)
}

pub fn sample_episode_with(cfg: &SampleConfig, seed: u64) -> Result<Episode, WorldError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects: Vec<WorldObject> = (0..cfg.n_objects)
        .map(|id| WorldObject {
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: rng.random_range(0..PALETTE.len()),
            size: Size::ALL[rng.random_range(0..Size::ALL.len())],
            depth: id,
        })
        .collect();
    let initial = place_objects(&mut rng, &objects)?;
    let nodes = objects
        .iter()
        .enumerate()
        .map(|(i, o)| o.to_node(i))
        .collect();
    let empty = ActionGraph::new(Arc::new(Vocabulary::cater()), nodes, vec![], cfg.length)?;
    let graph = sample_actions(&mut rng, cfg, &empty, &objects, &initial)?;
    Episode::from_graph(graph, &initial, cfg.resolution, seed)
}

/// Rejection-samples centers so that every pair is at least 1.5 times the
/// sum of their radii apart and every box stays inside the frame even when
/// lifted. One attempt places the objects in order, drawing each center a
/// few times; the whole attempt is rejected if some object does not fit.
pub fn place_objects(rng: &mut impl Rng, objects: &[WorldObject]) -> Result<Vec<BBox>, WorldError> {
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let mut boxes: Vec<BBox> = Vec::with_capacity(objects.len());
        for o in objects {
            let r = o.radius();
            let m = 1.2 * r + 0.01;
            let fits = (0..DRAWS_PER_OBJECT).find_map(|_| {
                let b = o.box_at(rng.random_range(m..1.0 - m), rng.random_range(m..1.0 - m));
                boxes
                    .iter()
                    .zip(objects)
                    .all(|(other, p)| b.center_distance(*other) >= 1.5 * (r + p.radius()))
                    .then_some(b)
            });
            match fits {
                Some(b) => boxes.push(b),
                None => continue 'attempt,
            }
        }
        return Ok(boxes);
    }
    Err(WorldError::Placement(PLACEMENT_ATTEMPTS))
}

fn sample_actions(
    rng: &mut impl Rng,
    cfg: &SampleConfig,
    empty: &ActionGraph,
    objects: &[WorldObject],
    initial: &[BBox],
) -> Result<ActionGraph, WorldError> {
    'attempt: for _ in 0..ACTION_ATTEMPTS {
        let mut graph = empty.clone();
        for _ in 0..cfg.n_actions {
            let mut placed = false;
            for _ in 0..PROPOSALS_PER_ACTION {
                let Some(edge) = propose(rng, cfg, &graph, objects, initial) else {
                    continue;
                };
                let mut edges = graph.edges().to_vec();
                edges.push(edge);
                if let Some(next) = accept(cfg, &graph, edges, initial) {
                    graph = next;
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return Ok(graph);
    }
    Err(WorldError::Contradiction(format!(
        "could not sample {} compatible actions for {} objects",
        cfg.n_actions, cfg.n_objects
    )))
}

fn propose(
    rng: &mut impl Rng,
    cfg: &SampleConfig,
    graph: &ActionGraph,
    objects: &[WorldObject],
    initial: &[BBox],
) -> Option<ActionEdge> {
    let vocab = graph.vocab();
    let action = rng.random_range(0..vocab.actions().len());
    let name = vocab.action_name(action);
    let max_dur = (*DURATION_RANGE.end()).min(cfg.length - 1);
    let dur = rng.random_range(*DURATION_RANGE.start()..=max_dur);
    let start = rng.random_range(0..=cfg.length - 1 - dur);
    let end = start + dur;
    let n = objects.len();
    if name == CONTAIN {
        let cones: Vec<usize> = (0..n)
            .filter(|&i| objects[i].shape == Shape::Cone)
            .collect();
        let targets: Vec<usize> = (0..n)
            .filter(|&i| objects[i].shape != Shape::Cone)
            .collect();
        if cones.is_empty() || targets.is_empty() {
            return None;
        }
        let subject = cones[rng.random_range(0..cones.len())];
        let object = targets[rng.random_range(0..targets.len())];
        return Some(ActionEdge::new(subject, action, object, start, end));
    }
    let subject = rng.random_range(0..n);
    let edge = ActionEdge::new(subject, action, subject, start, end);
    if !vocab
        .required_attrs(action)
        .iter()
        .any(|a| a == DESTINATION)
    {
        return Some(edge);
    }
    let layouts = execute_semantics(graph, initial).ok()?;
    let anchor = layouts[start][subject];
    let m = 1.2 * objects[subject].radius() + 0.01;
    let to = [rng.random_range(m..1.0 - m), rng.random_range(m..1.0 - m)];
    let offset = [to[0] - anchor.x, to[1] - anchor.y];
    if offset[0].hypot(offset[1]) < MIN_TRAVEL {
        return None;
    }
    Some(edge.with_attr(DESTINATION, offset))
}

fn accept(
    cfg: &SampleConfig,
    graph: &ActionGraph,
    edges: Vec<ActionEdge>,
    initial: &[BBox],
) -> Option<ActionGraph> {
    let next = graph.with_edges(edges).ok()?;
    check_motion(&next).ok()?;
    if cfg.exclude_composites && forms_composite(&next) {
        return None;
    }
    let layouts = execute_semantics(&next, initial).ok()?;
    layouts
        .iter()
        .flatten()
        .all(|b| b.inside_unit())
        .then_some(next)
}

/// Whether the graph contains a simultaneous pick-place and slide on
/// different objects, or two contains with overlapping windows.
pub(crate) fn forms_composite(graph: &ActionGraph) -> bool {
    let edges = graph.edges();
    edges.iter().enumerate().any(|(k, a)| {
        edges[k + 1..].iter().any(|b| {
            let (na, nb) = (graph.action_name(a), graph.action_name(b));
            let swap = (na == PICK_PLACE && nb == SLIDE) || (na == SLIDE && nb == PICK_PLACE);
            (swap && a.subject != b.subject && (a.start, a.end) == (b.start, b.end))
                || (na == CONTAIN && nb == CONTAIN && a.overlaps(b))
        })
    })
}

/// Parameters for a whole corpus. Object and action counts are drawn
/// uniformly per episode.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub episodes: usize,
    pub objects: RangeInclusive<usize>,
    pub actions: RangeInclusive<usize>,
    pub length: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            episodes: 500,
            objects: 2..=6,
            actions: 1..=4,
            length: 16,
            resolution: 64,
            seed: 0,
        }
    }
}

fn corpus_episode(cfg: &CorpusConfig, index: usize) -> Result<Episode, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n_objects = rng.random_range(cfg.objects.clone());
    let n_actions = rng.random_range(cfg.actions.clone());
    let sample = SampleConfig {
        length: cfg.length,
        resolution: cfg.resolution,
        ..SampleConfig::new(n_objects, n_actions)
    };
    let mut last = None;
    for _ in 0..16 {
        match sample_episode_with(&sample, rng.next_u64()) {
            Ok(ep) => return Ok(ep),
            Err(e @ WorldError::Range(_)) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Generates `cfg.episodes` episodes on `workers` threads. Each episode
/// draws from its own RNG stream, so the result does not depend on the
/// number of workers.
pub fn generate_corpus(cfg: &CorpusConfig, workers: usize) -> Result<Vec<Episode>, WorldError> {
    let workers = workers.clamp(1, cfg.episodes.max(1));
    let mut slots: Vec<Option<Result<Episode, WorldError>>> =
        (0..cfg.episodes).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots
            .chunks_mut(cfg.episodes.div_ceil(workers).max(1))
            .enumerate()
        {
            let base = w * cfg.episodes.div_ceil(workers).max(1);
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(corpus_episode(cfg, base + j));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}
