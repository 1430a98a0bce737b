//! A procedural 2D world with analytic action semantics.
//!
//! Episodes are sampled action graphs together with the box trajectories
//! their actions imply and the frames rendered from those boxes. They are the
//! ground truth every model in the crate is trained and judged against.

mod dataset;
mod render;
mod sample;
mod semantics;

pub use dataset::{export_dataset, import_dataset, DatasetMeta};
pub use render::{rasterize, render_states, Frame, RenderState, BACKGROUND};
pub(crate) use sample::forms_composite;
pub use sample::{
    generate_corpus, place_objects, sample_episode, sample_episode_with, CorpusConfig,
    SampleConfig, DURATION_RANGE, MIN_TRAVEL,
};
pub use semantics::{check_motion, execute_semantics, ActionKind};

use std::collections::BTreeMap;

use crate::bbox::BBox;
use crate::graph::{ActionGraph, GraphError, ObjectNode};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("could not place objects without overlap after {0} attempts")]
    Placement(usize),
    #[error("contradictory motion: {0}")]
    Contradiction(String),
    #[error("parameter out of range: {0}")]
    Range(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}: {msg}")]
    Corrupt { file: String, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "cone"];

pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [220, 40, 40]),
    ("green", [40, 180, 60]),
    ("blue", [40, 80, 220]),
    ("yellow", [240, 220, 40]),
    ("purple", [150, 60, 200]),
    ("cyan", [40, 210, 220]),
    ("orange", [250, 140, 20]),
    ("white", [245, 245, 245]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cone,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cone];

    pub fn name(self) -> &'static str {
        SHAPES[self as usize]
    }

    pub fn from_name(name: &str) -> Option<Shape> {
        SHAPES
            .iter()
            .position(|s| *s == name)
            .map(|i| Shape::ALL[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Size {
    Small,
    Medium,
    Large,
}

impl Size {
    pub const ALL: [Size; 3] = [Size::Small, Size::Medium, Size::Large];

    pub fn radius(self) -> f64 {
        match self {
            Size::Small => 0.05,
            Size::Medium => 0.08,
            Size::Large => 0.12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Medium => "medium",
            Size::Large => "large",
        }
    }

    pub fn from_name(name: &str) -> Option<Size> {
        Size::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Appearance of one object. Draw order follows `depth` (higher on top).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorldObject {
    pub shape: Shape,
    pub color: usize,
    pub size: Size,
    pub depth: usize,
}

impl WorldObject {
    pub fn rgb(&self) -> [u8; 3] {
        PALETTE[self.color].1
    }

    pub fn radius(&self) -> f64 {
        self.size.radius()
    }

    /// Square box of side `2 * radius` centered at `(x, y)`.
    pub fn box_at(&self, x: f64, y: f64) -> BBox {
        let d = 2.0 * self.radius();
        BBox::new(x, y, d, d)
    }

    pub fn to_node(&self, id: usize) -> ObjectNode {
        let mut attributes = BTreeMap::new();
        attributes.insert("color".to_string(), PALETTE[self.color].0.to_string());
        attributes.insert("size".to_string(), self.size.name().to_string());
        ObjectNode {
            id,
            category: self.shape as usize,
            attributes,
        }
    }

    /// Recovers appearance from a graph node of the built-in vocabulary.
    pub fn from_node(graph: &ActionGraph, node: &ObjectNode) -> Result<Self, WorldError> {
        let bad = |what: &str| WorldError::Range(format!("object {}: {what}", node.id));
        let shape = Shape::from_name(graph.vocab().object_name(node.category))
            .ok_or_else(|| bad("category is not a world shape"))?;
        let color = node
            .attributes
            .get("color")
            .and_then(|c| PALETTE.iter().position(|(n, _)| n == c))
            .ok_or_else(|| bad("missing or unknown color"))?;
        let size = node
            .attributes
            .get("size")
            .and_then(|s| Size::from_name(s))
            .ok_or_else(|| bad("missing or unknown size"))?;
        Ok(WorldObject {
            shape,
            color,
            size,
            depth: node.id,
        })
    }
}

pub fn world_objects(graph: &ActionGraph) -> Result<Vec<WorldObject>, WorldError> {
    graph
        .objects()
        .iter()
        .map(|n| WorldObject::from_node(graph, n))
        .collect()
}

/// A ground-truth record: the graph, per-frame boxes (`layouts[t][object]`),
/// and the rendered frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub graph: ActionGraph,
    pub layouts: Vec<Vec<BBox>>,
    pub frames: Vec<Frame>,
    pub seed: u64,
}

impl Episode {
    pub fn length(&self) -> usize {
        self.graph.length()
    }

    pub fn num_objects(&self) -> usize {
        self.graph.num_objects()
    }

    /// Recomputes layouts and frames from `graph` and an initial layout.
    pub fn from_graph(
        graph: ActionGraph,
        initial: &[BBox],
        resolution: usize,
        seed: u64,
    ) -> Result<Self, WorldError> {
        let layouts = execute_semantics(&graph, initial)?;
        let objects = world_objects(&graph)?;
        let states = render_states(&graph);
        let frames = layouts
            .iter()
            .zip(&states)
            .map(|(l, s)| rasterize(l, &objects, s, resolution, resolution))
            .collect();
        Ok(Episode {
            graph,
            layouts,
            frames,
            seed,
        })
    }
}
