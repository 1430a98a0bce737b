use std::sync::Arc;

use agvid::bbox::BBox;
use agvid::graph::{ActionEdge, ActionGraph, Vocabulary, DESTINATION};
use agvid::layout::{
    load_model, raw_edge_features, rollout, save_model, Aggregation, Batch, EdgeInput, GcnLgf,
    LayoutModel, Lgf, LgfConfig, NeuralLgf, RandomLgf, RnnLgf, RuleLgf, StepInput, EDGE_EXTRA,
};
use agvid::tensor::{nn, Graph, ParamStore, Tensor};
use agvid::world::{Shape, Size, WorldObject};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROTATE: usize = 0;
const CONTAIN: usize = 1;
const PICK_PLACE: usize = 2;
const SLIDE: usize = 3;

fn vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::cater())
}

fn small(kind_rnn: bool, seed: u64) -> LgfConfig {
    let base = if kind_rnn {
        LgfConfig::rnn(vocab())
    } else {
        LgfConfig::gcn(vocab())
    };
    LgfConfig {
        dim: 16,
        seed,
        ..base
    }
}

/// Adds uniform noise to every parameter so that the (zero-initialised)
/// box head produces non-trivial output.
fn scramble(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn edge(subject: usize, object: usize, action: usize, progress: f64, prev: &[BBox]) -> EdgeInput {
    let destination = matches!(action, SLIDE | PICK_PLACE).then_some([0.2, -0.1]);
    let anchor = prev[subject];
    let target = match destination {
        Some(d) => [anchor.x + d[0], anchor.y + d[1]],
        None => prev[object].center(),
    };
    EdgeInput {
        subject,
        object,
        action,
        start: 2,
        end: 6,
        progress,
        destination,
        anchor,
        target,
    }
}

fn input(categories: Vec<usize>, prev: Vec<BBox>, edges: Vec<EdgeInput>) -> StepInput {
    StepInput {
        frame: 4,
        vocab: vocab(),
        categories,
        prev,
        edges,
    }
}

fn three_objects() -> StepInput {
    let prev = vec![
        BBox::new(0.2, 0.3, 0.1, 0.1),
        BBox::new(0.6, 0.5, 0.16, 0.16),
        BBox::new(0.7, 0.8, 0.24, 0.24),
    ];
    let edges = vec![
        edge(0, 0, SLIDE, 0.5, &prev),
        edge(1, 2, CONTAIN, 0.25, &prev),
        edge(2, 2, ROTATE, 0.75, &prev),
    ];
    input(vec![0, 3, 1], prev, edges)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn identical_objects_get_identical_initial_features() {
    let b = BBox::new(0.4, 0.4, 0.16, 0.16);
    let step = input(vec![2, 2], vec![b, b], vec![]);
    let batch = Batch::new(&[step]).unwrap();
    let model = GcnLgf::new(small(false, 3)).unwrap();
    let mut g = Graph::new();
    let (z, u) = model.init_features(&mut g, &batch).unwrap();
    let (z, u) = (rows(g.value(z)), rows(g.value(u)));
    assert_eq!(z[0], z[1]);
    // each gets its own idle self-edge
    assert_eq!(u.len(), 2);
    assert_eq!(u[0], u[1]);
}

#[test]
fn progress_only_changes_its_own_slot() {
    let step = three_objects();
    let mut early = step.edges[0].clone();
    early.progress = 0.0;
    let mut late = early.clone();
    late.progress = 1.0;
    let (a, b) = (
        raw_edge_features(&step, &early),
        raw_edge_features(&step, &late),
    );
    assert_eq!(a.len(), EDGE_EXTRA);
    assert_eq!((a[0], b[0]), (0.0, 1.0));
    assert_eq!(a[1..], b[1..]);
}

#[test]
fn destinations_enter_the_edge_features() {
    let step = three_objects();
    let slide = raw_edge_features(&step, &step.edges[0]);
    assert_eq!(&slide[9..11], &[0.2, -0.1]);
    let rotate = raw_edge_features(&step, &step.edges[2]);
    assert_eq!(&rotate[9..11], &[0.0, 0.0]);
    // previous boxes of subject and object follow the progress slot
    assert_eq!(&slide[1..5], &step.prev[0].to_array());
    let contain = raw_edge_features(&step, &step.edges[1]);
    assert_eq!(&contain[5..9], &step.prev[2].to_array());
}

#[test]
fn single_self_edge_unrolls_by_hand() {
    let b = BBox::new(0.5, 0.5, 0.16, 0.16);
    let step = input(vec![1], vec![b], vec![edge(0, 0, ROTATE, 0.5, &[b])]);
    let batch = Batch::new(&[step]).unwrap();
    let model = GcnLgf::new(small(false, 5)).unwrap();
    let mut g = Graph::new();
    let (z0, u0) = model.init_features(&mut g, &batch).unwrap();
    let (z1, u1) = model.gcn_step(&mut g, 0, &batch, z0, u0).unwrap();
    let x = g.concat(&[z0, u0, z0]).unwrap();
    let layer = &model.layers[0];
    let fs = layer.fs.forward(&mut g, model.store(), x).unwrap();
    let fo = layer.fo.forward(&mut g, model.store(), x).unwrap();
    let fa = layer.fa.forward(&mut g, model.store(), x).unwrap();
    let expected = g.add(fs, fo).unwrap();
    assert_close(g.value(z1).data(), g.value(expected).data(), 1e-12);
    assert_close(g.value(u1).data(), g.value(fa).data(), 1e-12);
}

#[test]
fn duplicated_edge_doubles_its_messages() {
    let prev = vec![
        BBox::new(0.3, 0.3, 0.1, 0.1),
        BBox::new(0.7, 0.7, 0.16, 0.16),
    ];
    let e = edge(0, 1, CONTAIN, 0.5, &prev);
    let model = GcnLgf::new(small(false, 9)).unwrap();
    let first_layer = |edges: Vec<EdgeInput>| {
        let batch = Batch::new(&[input(vec![3, 0], prev.clone(), edges)]).unwrap();
        let mut g = Graph::new();
        let (z0, u0) = model.init_features(&mut g, &batch).unwrap();
        let (z1, _) = model.gcn_step(&mut g, 0, &batch, z0, u0).unwrap();
        g.value(z1).clone()
    };
    let once = first_layer(vec![e.clone()]);
    let twice = first_layer(vec![e.clone(), e]);
    let doubled: Vec<f64> = once.data().iter().map(|v| 2.0 * v).collect();
    assert_close(twice.data(), &doubled, 1e-12);
}

#[test]
fn mean_aggregation_is_invariant_to_duplicates() {
    let prev = vec![
        BBox::new(0.3, 0.3, 0.1, 0.1),
        BBox::new(0.7, 0.7, 0.16, 0.16),
    ];
    let e = edge(0, 1, CONTAIN, 0.5, &prev);
    let mut cfg = small(false, 9);
    cfg.aggregation = Aggregation::Mean;
    let model = GcnLgf::new(cfg).unwrap();
    let first_layer = |edges: Vec<EdgeInput>| {
        let batch = Batch::new(&[input(vec![3, 0], prev.clone(), edges)]).unwrap();
        let mut g = Graph::new();
        let (z0, u0) = model.init_features(&mut g, &batch).unwrap();
        let (z1, _) = model.gcn_step(&mut g, 0, &batch, z0, u0).unwrap();
        g.value(z1).clone()
    };
    assert_close(
        first_layer(vec![e.clone(), e.clone()]).data(),
        first_layer(vec![e]).data(),
        1e-12,
    );
}

fn permuted(step: &StepInput, perm: &[usize]) -> StepInput {
    // object i moves to slot perm[i]
    let n = step.num_objects();
    let mut categories = vec![0; n];
    let mut prev = vec![BBox::new(0.0, 0.0, 0.0, 0.0); n];
    for i in 0..n {
        categories[perm[i]] = step.categories[i];
        prev[perm[i]] = step.prev[i];
    }
    let edges = step
        .edges
        .iter()
        .map(|e| EdgeInput {
            subject: perm[e.subject],
            object: perm[e.object],
            ..e.clone()
        })
        .collect();
    StepInput {
        categories,
        prev,
        edges,
        ..step.clone()
    }
}

#[test]
fn predictions_are_permutation_equivariant() {
    let mut model = GcnLgf::new(small(false, 11)).unwrap();
    scramble(model.store_mut(), 1);
    let step = three_objects();
    let base = model.predict(&step).unwrap().boxes;
    for perm in [[1, 2, 0], [2, 0, 1], [0, 2, 1]] {
        let out = model.predict(&permuted(&step, &perm)).unwrap().boxes;
        for i in 0..3 {
            assert_close(&out[perm[i]].to_array(), &base[i].to_array(), 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_parameters_give_legal_boxes(seed in 0u64..10_000, rnn in any::<bool>()) {
        let mut model = LayoutModel::new(small(rnn, seed)).unwrap();
        scramble(model.store_mut(), seed);
        // larger noise than the initialisation, to push boxes out of range
        scramble(model.store_mut(), seed + 1);
        let out = model.predict(&three_objects()).unwrap();
        for b in &out.boxes {
            for v in b.to_array() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        prop_assert!(out.descriptors.unwrap().data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn untrained_models_keep_boxes_in_place() {
    // the box head starts at zero: an untrained model predicts no motion
    let step = three_objects();
    for rnn in [false, true] {
        let mut model = LayoutModel::new(small(rnn, 2)).unwrap();
        assert_eq!(model.predict(&step).unwrap().boxes, step.prev);
    }
}

#[test]
fn every_present_action_receives_gradient() {
    let mut model = GcnLgf::new(small(false, 4)).unwrap();
    scramble(model.store_mut(), 4);
    let mut step = three_objects();
    step.edges
        .push(edge(0, 1, PICK_PLACE, 0.5, &step.prev.clone()));
    let batch = Batch::new(&[step]).unwrap();
    let mut g = Graph::new();
    let (boxes, _) = model.forward(&mut g, &batch).unwrap();
    let target = g.input(Tensor::full(&[3, 4], 0.5));
    let loss = nn::l1_mean(&mut g, boxes, target).unwrap();
    g.backward(loss).unwrap();
    let store = model.store_mut();
    store.zero_grad();
    g.accumulate_param_grads(store);
    let psi = store.id("embed.actions").unwrap();
    let grad = store.grad(psi).unwrap();
    for a in [ROTATE, CONTAIN, PICK_PLACE, SLIDE] {
        assert!(
            grad.row(a).iter().any(|v| *v != 0.0),
            "action {a} has no gradient"
        );
    }
}

#[test]
fn rnn_reads_a_single_edge() {
    let b = BBox::new(0.5, 0.5, 0.16, 0.16);
    let step = input(vec![0], vec![b], vec![edge(0, 0, ROTATE, 0.5, &[b])]);
    let mut model = RnnLgf::new(small(true, 1)).unwrap();
    scramble(model.store_mut(), 1);
    let out = model.predict(&step).unwrap();
    assert_eq!(out.boxes.len(), 1);
    assert_eq!(out.descriptors.unwrap().shape(), &[1, 16]);
}

#[test]
fn rnn_depends_on_edge_order() {
    let mut model = RnnLgf::new(small(true, 6)).unwrap();
    scramble(model.store_mut(), 6);
    let step = three_objects();
    let mut reversed = step.clone();
    reversed.edges.reverse();
    let a = model.predict(&step).unwrap().boxes;
    let b = model.predict(&reversed).unwrap().boxes;
    assert_ne!(a, b);
    // the graph network does not care
    let mut gcn = GcnLgf::new(small(false, 6)).unwrap();
    scramble(gcn.store_mut(), 6);
    let a = gcn.predict(&step).unwrap().boxes;
    let b = gcn.predict(&reversed).unwrap().boxes;
    for (x, y) in a.iter().zip(&b) {
        assert_close(&x.to_array(), &y.to_array(), 1e-12);
    }
}

fn slide_graph(length: usize) -> ActionGraph {
    let objects = [
        WorldObject {
            shape: Shape::Square,
            color: 0,
            size: Size::Medium,
            depth: 0,
        },
        WorldObject {
            shape: Shape::Cone,
            color: 1,
            size: Size::Large,
            depth: 1,
        },
    ];
    let nodes = objects
        .iter()
        .enumerate()
        .map(|(i, o)| o.to_node(i))
        .collect();
    let edges =
        vec![ActionEdge::new(0, SLIDE, 0, 0, length - 1).with_attr(DESTINATION, [0.2, 0.0])];
    ActionGraph::new(vocab(), nodes, edges, length).unwrap()
}

#[test]
fn rule_model_steps_by_alpha() {
    let g = slide_graph(16);
    let first = vec![
        BBox::new(0.3, 0.5, 0.16, 0.16),
        BBox::new(0.7, 0.2, 0.24, 0.24),
    ];
    let input = StepInput::from_history(&g, 1, std::slice::from_ref(&first)).unwrap();
    let out = RuleLgf::default().predict(&input).unwrap().boxes;
    assert_eq!(out[0].x, 0.3 + 0.1);
    assert!((out[0].x - 0.4).abs() < 1e-12);
    assert_eq!((out[0].y, out[0].w, out[0].h), (0.5, 0.16, 0.16));
    assert_eq!(out[1], first[1]);
}

#[test]
fn rule_model_ignores_rotation_and_unknown_actions() {
    let mut step = three_objects();
    step.edges.retain(|e| e.action == ROTATE);
    assert_eq!(RuleLgf::default().predict(&step).unwrap().boxes, step.prev);

    let mut actions: Vec<String> = Vocabulary::cater().actions().to_vec();
    actions.push("spin".into());
    let custom = Arc::new(
        Vocabulary::new(
            Vocabulary::cater().objects().to_vec(),
            actions,
            Default::default(),
        )
        .unwrap(),
    );
    let mut step = three_objects();
    step.vocab = custom;
    step.edges = vec![edge(0, 0, 4, 0.5, &step.prev.clone())];
    assert_eq!(RuleLgf::default().predict(&step).unwrap().boxes, step.prev);
}

#[test]
fn random_model_is_seeded_and_legal() {
    let step = three_objects();
    let a = RandomLgf::new(3).predict(&step).unwrap().boxes;
    assert_eq!(a, RandomLgf::new(3).predict(&step).unwrap().boxes);
    assert!(a
        .iter()
        .all(|b| b.inside_unit() && (0.1..=0.24).contains(&b.w)));
}

#[test]
fn short_rollout_is_one_step_and_deterministic() {
    let g = slide_graph(2);
    let first = vec![
        BBox::new(0.3, 0.5, 0.16, 0.16),
        BBox::new(0.7, 0.2, 0.24, 0.24),
    ];
    let mut model = LayoutModel::new(small(false, 8)).unwrap();
    scramble(model.store_mut(), 8);
    let a = rollout(&mut model, &g, &first).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a[0].boxes, first);
    let b = rollout(&mut model, &g, &first).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saved_models_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    for rnn in [false, true] {
        let mut model = LayoutModel::new(small(rnn, 12)).unwrap();
        scramble(model.store_mut(), 12);
        let path = dir.path().join(if rnn { "rnn" } else { "gcn" });
        save_model(&model, &path).unwrap();
        let mut loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config(), model.config());
        let step = three_objects();
        assert_eq!(
            loaded.predict(&step).unwrap(),
            model.predict(&step).unwrap()
        );
    }
}

#[test]
fn vocabulary_mismatch_is_reported() {
    let mut model = LayoutModel::new(small(false, 0)).unwrap();
    let mut step = three_objects();
    let mut actions: Vec<String> = Vocabulary::cater().actions().to_vec();
    actions.push("spin".into());
    step.vocab = Arc::new(
        Vocabulary::new(
            Vocabulary::cater().objects().to_vec(),
            actions,
            Default::default(),
        )
        .unwrap(),
    );
    assert!(matches!(
        model.predict(&step),
        Err(agvid::layout::LayoutError::VocabularyMismatch { .. })
    ));
}
