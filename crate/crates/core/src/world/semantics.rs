use crate::bbox::BBox;
use crate::graph::{progress, ActionEdge, ActionGraph, CONTAIN, PICK_PLACE, ROTATE, SLIDE};

use super::WorldError;

/// The actions the world knows how to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    Rotate,
    Contain,
    PickPlace,
    Slide,
}

impl ActionKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            ROTATE => Some(ActionKind::Rotate),
            CONTAIN => Some(ActionKind::Contain),
            PICK_PLACE => Some(ActionKind::PickPlace),
            SLIDE => Some(ActionKind::Slide),
            _ => None,
        }
    }

    pub fn of(graph: &ActionGraph, edge: &ActionEdge) -> Result<Self, WorldError> {
        let name = graph.action_name(edge);
        ActionKind::from_name(name)
            .ok_or_else(|| WorldError::Contradiction(format!("no semantics for action `{name}`")))
    }

    /// Whether the action moves its subject's box.
    pub fn moves(self) -> bool {
        self != ActionKind::Rotate
    }
}

/// Fraction of the pick-place translation done at progress `r`.
pub(crate) fn pick_place_travel(r: f64) -> f64 {
    ((r - 0.25) / 0.5).clamp(0.0, 1.0)
}

/// Relative size increase of a lifted object at progress `r`.
pub(crate) fn pick_place_lift(r: f64) -> f64 {
    let pulse = (r / 0.25).min(1.0).min((1.0 - r) / 0.25).max(0.0);
    0.2 * pulse
}

/// Frame from which `object` is inside a cone, with the containing edge.
pub(crate) fn containment(graph: &ActionGraph, object: usize) -> Option<&ActionEdge> {
    graph
        .edges()
        .iter()
        .find(|e| e.object == object && e.subject != object && graph.action_name(e) == CONTAIN)
}

/// Rejects graphs whose motion cannot be executed unambiguously.
pub fn check_motion(graph: &ActionGraph) -> Result<(), WorldError> {
    let edges = graph.edges();
    let fail = |msg: String| Err(WorldError::Contradiction(msg));
    let kinds = edges
        .iter()
        .map(|e| ActionKind::of(graph, e))
        .collect::<Result<Vec<_>, _>>()?;
    for (a, ea) in edges.iter().enumerate() {
        for eb in &edges[a + 1..] {
            if ea.subject == eb.subject && ea.overlaps(eb) {
                return fail(format!(
                    "object {} has overlapping actions in [{}, {}] and [{}, {}]",
                    ea.subject, ea.start, ea.end, eb.start, eb.end
                ));
            }
        }
    }
    let mut contained = vec![false; graph.num_objects()];
    for (k, c) in edges.iter().enumerate() {
        if kinds[k] != ActionKind::Contain {
            continue;
        }
        let target = c.object;
        if c.subject == target {
            return fail(format!("edges[{k}]: object {target} cannot contain itself"));
        }
        if graph.category_name(c.subject) != "cone" {
            return fail(format!("edges[{k}]: only cones can contain"));
        }
        if contained[target] {
            return fail(format!("object {target} is contained twice"));
        }
        contained[target] = true;
        for (j, e) in edges.iter().enumerate() {
            if j == k {
                continue;
            }
            if e.subject == target && kinds[j].moves() && e.end > c.start {
                return fail(format!(
                    "edges[{j}]: object {target} moves while or after being contained"
                ));
            }
            if e.subject == target && e.start >= c.end {
                return fail(format!(
                    "edges[{j}]: object {target} acts after being contained"
                ));
            }
            if kinds[j] == ActionKind::Contain && e.subject == target {
                return fail(format!("edges[{j}]: nested containment"));
            }
            if kinds[j] == ActionKind::Contain && e.object == c.subject {
                return fail(format!("edges[{j}]: nested containment"));
            }
        }
    }
    Ok(())
}

/// Ground-truth boxes for every frame, starting from `initial`.
///
/// Each moving action is anchored at its subject's box at `start` and
/// evaluated in closed form from the edge's progress. A contained object
/// follows its cone from the frame the containment completes.
pub fn execute_semantics(
    graph: &ActionGraph,
    initial: &[BBox],
) -> Result<Vec<Vec<BBox>>, WorldError> {
    let n = graph.num_objects();
    if initial.len() != n {
        return Err(WorldError::Range(format!(
            "initial layout has {} boxes for {} objects",
            initial.len(),
            n
        )));
    }
    check_motion(graph)?;
    let edges = graph.edges();
    let kinds = edges
        .iter()
        .map(|e| ActionKind::of(graph, e))
        .collect::<Result<Vec<_>, _>>()?;

    let mut anchors: Vec<BBox> = vec![BBox::default(); edges.len()];
    let mut targets: Vec<[f64; 2]> = vec![[0.0; 2]; edges.len()];
    // (cone, offset from the cone's center) for contained objects
    let mut carried: Vec<Option<(usize, [f64; 2])>> = vec![None; n];
    let mut layouts = Vec::with_capacity(graph.length());
    let mut cur = initial.to_vec();

    for t in 0..graph.length() {
        for (k, e) in edges.iter().enumerate() {
            if !(e.start < t && t <= e.end) {
                continue;
            }
            let r = progress(e, t);
            let a = anchors[k];
            let b = &mut cur[e.subject];
            match kinds[k] {
                ActionKind::Rotate => {}
                ActionKind::Slide => {
                    let d = e.destination().unwrap_or_default();
                    b.x = a.x + d[0] * r;
                    b.y = a.y + d[1] * r;
                }
                ActionKind::PickPlace => {
                    let d = e.destination().unwrap_or_default();
                    let s = pick_place_travel(r);
                    let lift = 1.0 + pick_place_lift(r);
                    *b = BBox::new(a.x + d[0] * s, a.y + d[1] * s, a.w * lift, a.h * lift);
                }
                ActionKind::Contain => {
                    let c = targets[k];
                    b.x = a.x + (c[0] - a.x) * r;
                    b.y = a.y + (c[1] - a.y) * r;
                }
            }
        }
        for (i, slot) in carried.iter().enumerate() {
            if let Some((cone, off)) = *slot {
                cur[i].x = cur[cone].x + off[0];
                cur[i].y = cur[cone].y + off[1];
            }
        }
        for (k, e) in edges.iter().enumerate() {
            if e.start == t {
                anchors[k] = cur[e.subject];
                targets[k] = cur[e.object].center();
            }
            if kinds[k] == ActionKind::Contain && e.end == t {
                let (c, o) = (cur[e.subject], cur[e.object]);
                carried[e.object] = Some((e.subject, [o.x - c.x, o.y - c.y]));
            }
        }
        layouts.push(cur.clone());
    }
    Ok(layouts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ActionEdge, ActionGraph, ObjectNode, Vocabulary, DESTINATION};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn graph(
        categories: &[usize],
        edges: Vec<ActionEdge>,
    ) -> Result<ActionGraph, crate::graph::GraphError> {
        let objects = categories
            .iter()
            .enumerate()
            .map(|(id, &category)| ObjectNode {
                id,
                category,
                attributes: BTreeMap::new(),
            })
            .collect();
        ActionGraph::new(Arc::new(Vocabulary::cater()), objects, edges, 16)
    }

    const ROT: usize = 0;
    const CONT: usize = 1;
    const PP: usize = 2;
    const SL: usize = 3;
    const CONE: usize = 3;

    #[test]
    fn pick_place_phases() {
        assert_eq!(pick_place_travel(0.25), 0.0);
        assert_eq!(pick_place_travel(0.5), 0.5);
        assert_eq!(pick_place_lift(0.25), 0.2);
        assert_eq!(pick_place_lift(0.0), 0.0);
        assert_eq!(pick_place_lift(1.0), 0.0);
        let g = graph(
            &[0],
            vec![ActionEdge::new(0, PP, 0, 0, 8).with_attr(DESTINATION, [0.4, 0.0])],
        )
        .unwrap();
        let l = execute_semantics(&g, &[BBox::new(0.2, 0.5, 0.1, 0.1)]).unwrap();
        assert!((l[2][0].w - 0.12).abs() < 1e-15);
        assert_eq!(l[2][0].x, 0.2);
        assert!((l[8][0].x - 0.6).abs() < 1e-15);
        assert_eq!(l[8][0].w, 0.1);
    }

    #[test]
    fn contained_object_follows_cone() {
        let g = graph(
            &[CONE, 0],
            vec![
                ActionEdge::new(0, CONT, 1, 0, 4),
                ActionEdge::new(0, SL, 0, 6, 10).with_attr(DESTINATION, [0.2, 0.0]),
            ],
        )
        .unwrap();
        let l = execute_semantics(
            &g,
            &[BBox::new(0.2, 0.2, 0.2, 0.2), BBox::new(0.5, 0.5, 0.1, 0.1)],
        )
        .unwrap();
        assert_eq!(l[4][0].center(), [0.5, 0.5]);
        assert!((l[15][1].x - 0.7).abs() < 1e-12);
        assert_eq!(l[15][1].x, l[15][0].x + (l[4][1].x - l[4][0].x));
    }

    #[test]
    fn rejects_contradictions() {
        let overlapping = vec![
            ActionEdge::new(0, SL, 0, 0, 6).with_attr(DESTINATION, [0.1, 0.0]),
            ActionEdge::new(0, ROT, 0, 5, 9),
        ];
        let bad = [
            graph(&[0, 0], overlapping).unwrap(),
            graph(&[0, 0], vec![ActionEdge::new(0, CONT, 1, 0, 4)]).unwrap(),
            graph(
                &[CONE, 0],
                vec![
                    ActionEdge::new(0, CONT, 1, 2, 6),
                    ActionEdge::new(1, SL, 1, 4, 8).with_attr(DESTINATION, [0.1, 0.0]),
                ],
            )
            .unwrap(),
            graph(
                &[CONE, CONE, 0],
                vec![
                    ActionEdge::new(0, CONT, 1, 0, 4),
                    ActionEdge::new(1, CONT, 2, 5, 9),
                ],
            )
            .unwrap(),
            graph(
                &[CONE, CONE, 0],
                vec![
                    ActionEdge::new(0, CONT, 2, 0, 4),
                    ActionEdge::new(1, CONT, 2, 5, 9),
                ],
            )
            .unwrap(),
        ];
        for g in bad {
            assert!(
                matches!(check_motion(&g), Err(WorldError::Contradiction(_))),
                "{:?}",
                g.edges()
            );
        }
        let fine = graph(
            &[0],
            vec![
                ActionEdge::new(0, SL, 0, 0, 5).with_attr(DESTINATION, [0.1, 0.0]),
                ActionEdge::new(0, ROT, 0, 5, 9),
            ],
        )
        .unwrap();
        check_motion(&fine).unwrap();
    }
}
