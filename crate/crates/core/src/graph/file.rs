//! The AG file: a TOML document.
//!
//! ```toml
//! length = 16
//!
//! [vocab]
//! objects = ["circle", "square", "triangle", "cone"]
//! actions = ["rotate", "contain", "pick_place", "slide"]
//! attrs = { slide = ["destination"], pick_place = ["destination"] }
//!
//! [[objects]]
//! id = 0
//! category = "cone"
//! attributes = { color = "red", size = "large" }
//!
//! [[edges]]
//! subject = 0
//! action = "slide"
//! object = 0
//! start = 0
//! end = 9
//! attrs = { destination = [0.2, -0.1] }
//! ```
//!
//! Unknown keys anywhere are rejected. `destination` is an `(x, y)` offset
//! in normalized scene units relative to the subject's position at `start`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActionEdge, ActionGraph, GraphError, ObjectNode, Vocabulary};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGraph {
    length: usize,
    vocab: FileVocab,
    #[serde(default)]
    objects: Vec<FileObject>,
    #[serde(default)]
    edges: Vec<FileEdge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileVocab {
    objects: Vec<String>,
    actions: Vec<String>,
    #[serde(default)]
    attrs: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileObject {
    id: usize,
    category: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEdge {
    subject: usize,
    action: String,
    object: usize,
    start: usize,
    end: usize,
    #[serde(default)]
    attrs: BTreeMap<String, Vec<f64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_graph(text: &str) -> Result<ActionGraph, GraphError> {
    let doc: FileGraph = toml::from_str(text).map_err(|e| GraphError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })?;
    let vocab = Arc::new(Vocabulary::new(
        doc.vocab.objects,
        doc.vocab.actions,
        doc.vocab.attrs,
    )?);
    let objects = doc
        .objects
        .into_iter()
        .map(|o| {
            let category = vocab
                .object_index(&o.category)
                .ok_or_else(|| GraphError::UnknownCategory(o.category.clone()))?;
            Ok(ObjectNode {
                id: o.id,
                category,
                attributes: o.attributes,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    let edges = doc
        .edges
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            let action = vocab
                .action_index(&e.action)
                .ok_or_else(|| GraphError::UnknownAction(e.action.clone()))?;
            let attrs = e
                .attrs
                .into_iter()
                .map(|(name, v)| match v.as_slice() {
                    &[x, y] => Ok((name, [x, y])),
                    _ => Err(GraphError::BadAttrValue {
                        edge: k,
                        attr: name,
                    }),
                })
                .collect::<Result<_, _>>()?;
            Ok(ActionEdge {
                subject: e.subject,
                action,
                object: e.object,
                start: e.start,
                end: e.end,
                attrs,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    ActionGraph::new(vocab, objects, edges, doc.length)
}

pub fn serialize_graph(graph: &ActionGraph) -> String {
    let vocab = graph.vocab();
    let doc = FileGraph {
        length: graph.length(),
        vocab: FileVocab {
            objects: vocab.objects().to_vec(),
            actions: vocab.actions().to_vec(),
            attrs: vocab.attr_schema().clone(),
        },
        objects: graph
            .objects()
            .iter()
            .map(|o| FileObject {
                id: o.id,
                category: vocab.object_name(o.category).to_string(),
                attributes: o.attributes.clone(),
            })
            .collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| FileEdge {
                subject: e.subject,
                action: vocab.action_name(e.action).to_string(),
                object: e.object,
                start: e.start,
                end: e.end,
                attrs: e
                    .attrs
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_vec()))
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("graph documents always serialize")
}
