//! Action graphs: objects, timed action edges, and their per-frame clocks.
//!
//! An edge `(subject, action, object, start, end)` says that `subject`
//! performs `action` on `object` during frames `start..=end`. Self-loops
//! (`subject == object`) model single-object actions such as rotating.
//! Times are frame indices; a graph of length `T` has frames `0..T`.

mod clock;
mod file;

pub use clock::{clocked_at, progress, unroll, ClockedEdge, ClockedGraph};
pub use file::{parse_graph, serialize_graph};

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

pub const ROTATE: &str = "rotate";
pub const CONTAIN: &str = "contain";
pub const PICK_PLACE: &str = "pick_place";
pub const SLIDE: &str = "slide";
pub const DESTINATION: &str = "destination";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown object category `{0}`")]
    UnknownCategory(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateName(String),
    #[error("objects: ids must be contiguous 0..n, found id {found} at position {position}")]
    NonContiguousIds { position: usize, found: usize },
    #[error("edges[{edge}]: object id {id} does not exist")]
    BadObjectId { edge: usize, id: usize },
    #[error("edges[{edge}]: action `{action}` requires attribute `{attr}`")]
    MissingAttr {
        edge: usize,
        action: String,
        attr: String,
    },
    #[error("edges[{edge}]: attribute `{attr}` is not part of the `{action}` schema")]
    UnexpectedAttr {
        edge: usize,
        action: String,
        attr: String,
    },
    #[error("edges[{edge}]: attribute `{attr}` must be two numbers in [-1, 1]")]
    BadAttrValue { edge: usize, attr: String },
    #[error("edges[{edge}]: time window [{start}, {end}] must satisfy 0 <= start < end <= length ({length})")]
    TimeBounds {
        edge: usize,
        start: usize,
        end: usize,
        length: usize,
    },
    #[error("length must be at least 2, got {0}")]
    TooShort(usize),
    #[error("cannot compose graphs over different vocabularies")]
    VocabularyMismatch,
    #[error("object {id} has category `{a}` in one graph and `{b}` in another")]
    CategoryConflict { id: usize, a: String, b: String },
    #[error("nothing to compose")]
    EmptyComposition,
}

/// Object categories, actions and the per-action attribute schema.
/// Positions in the name lists are the embedding ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    objects: Vec<String>,
    actions: Vec<String>,
    attrs: BTreeMap<String, Vec<String>>,
}

impl Vocabulary {
    pub fn new(
        objects: Vec<String>,
        actions: Vec<String>,
        attrs: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, GraphError> {
        for list in [&objects, &actions] {
            let mut seen = std::collections::BTreeSet::new();
            for name in list {
                if !seen.insert(name) {
                    return Err(GraphError::DuplicateName(name.clone()));
                }
            }
        }
        if let Some(a) = attrs.keys().find(|a| !actions.contains(a)) {
            return Err(GraphError::UnknownAction(a.clone()));
        }
        Ok(Vocabulary {
            objects,
            actions,
            attrs,
        })
    }

    /// The built-in world: four shapes and the four CATER-style actions.
    /// Slides and pick-places carry a destination offset.
    pub fn cater() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let mut attrs = BTreeMap::new();
        attrs.insert(SLIDE.to_string(), s(&[DESTINATION]));
        attrs.insert(PICK_PLACE.to_string(), s(&[DESTINATION]));
        Vocabulary::new(
            s(&["circle", "square", "triangle", "cone"]),
            s(&[ROTATE, CONTAIN, PICK_PLACE, SLIDE]),
            attrs,
        )
        .expect("built-in vocabulary is valid")
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn object_name(&self, idx: usize) -> &str {
        &self.objects[idx]
    }

    pub fn action_name(&self, idx: usize) -> &str {
        &self.actions[idx]
    }

    pub fn required_attrs(&self, action: usize) -> &[String] {
        self.attrs
            .get(&self.actions[action])
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn attr_schema(&self) -> &BTreeMap<String, Vec<String>> {
        &self.attrs
    }

    /// Short content hash, recorded in model configs so a checkpoint is
    /// never paired with embeddings indexed by a different vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.objects {
            h.update(b"o:");
            h.update(o.as_bytes());
            h.update(b"\n");
        }
        for a in &self.actions {
            h.update(b"a:");
            h.update(a.as_bytes());
            h.update(b"\n");
        }
        for (a, names) in &self.attrs {
            h.update(format!("s:{a}={}\n", names.join(",")).as_bytes());
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectNode {
    pub id: usize,
    pub category: usize,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionEdge {
    pub subject: usize,
    pub action: usize,
    pub object: usize,
    pub start: usize,
    pub end: usize,
    pub attrs: BTreeMap<String, [f64; 2]>,
}

impl ActionEdge {
    pub fn new(subject: usize, action: usize, object: usize, start: usize, end: usize) -> Self {
        ActionEdge {
            subject,
            action,
            object,
            start,
            end,
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: &str, value: [f64; 2]) -> Self {
        self.attrs.insert(name.to_string(), value);
        self
    }

    pub fn destination(&self) -> Option<[f64; 2]> {
        self.attrs.get(DESTINATION).copied()
    }

    pub fn is_self_loop(&self) -> bool {
        self.subject == self.object
    }

    /// Whether the windows `[start, end]` of two edges share a frame
    /// interval of positive length.
    pub fn overlaps(&self, other: &ActionEdge) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A validated action graph. Immutable after construction.
#[derive(Clone, Debug)]
pub struct ActionGraph {
    vocab: Arc<Vocabulary>,
    objects: Vec<ObjectNode>,
    edges: Vec<ActionEdge>,
    length: usize,
}

impl PartialEq for ActionGraph {
    fn eq(&self, other: &Self) -> bool {
        *self.vocab == *other.vocab
            && self.objects == other.objects
            && self.edges == other.edges
            && self.length == other.length
    }
}

impl ActionGraph {
    pub fn new(
        vocab: Arc<Vocabulary>,
        objects: Vec<ObjectNode>,
        edges: Vec<ActionEdge>,
        length: usize,
    ) -> Result<Self, GraphError> {
        if length < 2 {
            return Err(GraphError::TooShort(length));
        }
        for (position, o) in objects.iter().enumerate() {
            if o.id != position {
                return Err(GraphError::NonContiguousIds {
                    position,
                    found: o.id,
                });
            }
            if o.category >= vocab.objects.len() {
                return Err(GraphError::UnknownCategory(format!("#{}", o.category)));
            }
        }
        for (k, e) in edges.iter().enumerate() {
            for id in [e.subject, e.object] {
                if id >= objects.len() {
                    return Err(GraphError::BadObjectId { edge: k, id });
                }
            }
            if e.action >= vocab.actions.len() {
                return Err(GraphError::UnknownAction(format!("#{}", e.action)));
            }
            if e.start >= e.end || e.end > length {
                return Err(GraphError::TimeBounds {
                    edge: k,
                    start: e.start,
                    end: e.end,
                    length,
                });
            }
            let action = vocab.action_name(e.action).to_string();
            let required = vocab.required_attrs(e.action);
            if let Some(attr) = required.iter().find(|a| !e.attrs.contains_key(*a)) {
                return Err(GraphError::MissingAttr {
                    edge: k,
                    action,
                    attr: attr.clone(),
                });
            }
            for (name, v) in &e.attrs {
                if !required.contains(name) {
                    return Err(GraphError::UnexpectedAttr {
                        edge: k,
                        action,
                        attr: name.clone(),
                    });
                }
                if !v.iter().all(|c| c.is_finite() && (-1.0..=1.0).contains(c)) {
                    return Err(GraphError::BadAttrValue {
                        edge: k,
                        attr: name.clone(),
                    });
                }
            }
        }
        Ok(ActionGraph {
            vocab,
            objects,
            edges,
            length,
        })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn edges(&self) -> &[ActionEdge] {
        &self.edges
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn action_name(&self, edge: &ActionEdge) -> &str {
        self.vocab.action_name(edge.action)
    }

    pub fn category_name(&self, object: usize) -> &str {
        self.vocab.object_name(self.objects[object].category)
    }

    /// Same objects and vocabulary, different edges (re-validated).
    pub fn with_edges(&self, edges: Vec<ActionEdge>) -> Result<Self, GraphError> {
        ActionGraph::new(self.vocab.clone(), self.objects.clone(), edges, self.length)
    }
}

/// Union of the edges of several graphs over one vocabulary. Objects are
/// matched by id and must agree on category; the result spans the longest
/// input.
pub fn compose(graphs: &[ActionGraph]) -> Result<ActionGraph, GraphError> {
    let first = graphs.first().ok_or(GraphError::EmptyComposition)?;
    let mut objects: Vec<ObjectNode> = first.objects.clone();
    let mut edges = Vec::new();
    let mut length = 0;
    for g in graphs {
        if *g.vocab != *first.vocab {
            return Err(GraphError::VocabularyMismatch);
        }
        for o in &g.objects {
            match objects.get(o.id) {
                Some(existing) if existing.category != o.category => {
                    return Err(GraphError::CategoryConflict {
                        id: o.id,
                        a: first.vocab.object_name(existing.category).to_string(),
                        b: first.vocab.object_name(o.category).to_string(),
                    })
                }
                Some(_) => {}
                None => objects.push(o.clone()),
            }
        }
        edges.extend(g.edges.iter().cloned());
        length = length.max(g.length);
    }
    objects.sort_by_key(|o| o.id);
    ActionGraph::new(first.vocab.clone(), objects, edges, length)
}
