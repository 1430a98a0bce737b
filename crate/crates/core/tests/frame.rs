mod common;

use std::sync::Arc;

use agvid::bbox::BBox;
use agvid::frame::{
    box_pixels, build_feature_map, generate_frames, generate_video, load_fgf, read_raw_video,
    save_fgf, write_ppm_sequence, write_raw_video, Fgf, FgfConfig, FramePair,
};
use agvid::graph::{ActionGraph, Vocabulary};
use agvid::layout::{LayoutModel, LayoutState, LgfConfig};
use agvid::tensor::{Graph, Tensor};
use agvid::world::{Frame, Shape, Size, WorldObject};
use common::{composed_frame_inputs, composed_frame_model, gradcheck, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;

fn feature_rows(rows: &[&[f64]]) -> Tensor {
    let c = rows[0].len();
    Tensor::new(&[rows.len(), c], rows.concat()).unwrap()
}

#[test]
fn box_paints_exactly_its_quadrant() {
    // top-left quadrant of a 4x4 grid covers pixel centers 0.125 and 0.375
    let map = build_feature_map(
        &[BBox::new(0.25, 0.25, 0.5, 0.5)],
        &feature_rows(&[&[1.0, 2.0]]),
        4,
        4,
    )
    .unwrap();
    assert_eq!(map.shape(), &[4, 4, 2]);
    for y in 0..4 {
        for x in 0..4 {
            let inside = x < 2 && y < 2;
            let px = &map.data()[(y * 4 + x) * 2..(y * 4 + x) * 2 + 2];
            assert_eq!(
                px,
                if inside {
                    &[1.0, 2.0][..]
                } else {
                    &[0.0, 0.0][..]
                },
                "pixel ({x}, {y})"
            );
        }
    }
}

#[test]
fn far_edges_are_half_open() {
    // spans x in [0.125, 0.375): the center 0.125 is in, 0.375 is out
    assert_eq!(
        box_pixels(BBox::new(0.25, 0.125, 0.25, 0.25), 4, 4),
        vec![0]
    );
    assert!(box_pixels(BBox::new(0.5, 0.5, 0.0, 0.0), 4, 4).is_empty());
}

#[test]
fn empty_layout_gives_zero_map() {
    let map = build_feature_map(&[], &Tensor::zeros(&[1, 3]), 5, 4).unwrap();
    assert_eq!(map.shape(), &[4, 5, 3]);
    assert!(map.data().iter().all(|&v| v == 0.0));
    let fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    let m = fgf.feature_map(&[], &Tensor::zeros(&[1, 8]), 5, 4).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_feature_rows_are_rejected() {
    let boxes = [BBox::new(0.5, 0.5, 0.2, 0.2); 2];
    assert!(build_feature_map(&boxes, &feature_rows(&[&[1.0]]), 4, 4).is_err());
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..0.6f64, 0.0..0.6f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maps_add_over_objects(a in arb_box(), b in arb_box(), fa in prop::array::uniform3(-2.0..2.0f64), fb in prop::array::uniform3(-2.0..2.0f64)) {
        let both = build_feature_map(&[a, b], &feature_rows(&[&fa, &fb]), 9, 7).unwrap();
        let ma = build_feature_map(&[a], &feature_rows(&[&fa]), 9, 7).unwrap();
        let mb = build_feature_map(&[b], &feature_rows(&[&fb]), 9, 7).unwrap();
        for ((s, x), y) in both.data().iter().zip(ma.data()).zip(mb.data()) {
            prop_assert!((s - (x + y)).abs() < 1e-12);
        }
    }

    #[test]
    fn painted_pixel_count_matches_box_area(b in arb_box()) {
        // pixel centers strictly inside the clipped box, counted per axis
        let n = 12;
        let count = |lo: f64, hi: f64| (0..n).filter(|&i| { let c = (i as f64 + 0.5) / n as f64; c >= lo && c < hi }).count();
        let expected = count(b.x0(), b.x1()) * count(b.y0(), b.y1());
        prop_assert_eq!(box_pixels(b, n, n).len(), expected);
    }
}

fn scramble(fgf: &mut Fgf, seed: u64, amount: f64) {
    let mut r = rng(seed);
    let store = fgf.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += r.random_range(-amount..amount);
        }
    }
}

fn scene(seed: u64, n: usize, d: usize) -> (Tensor, Vec<BBox>, Vec<BBox>, Tensor) {
    let mut r = rng(seed);
    let prev = random_tensor(&mut r, &[16, 16, 3], 0.1, 0.9);
    let boxes = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<BBox> {
        (0..n)
            .map(|_| BBox::new(r.random_range(0.2..0.8), r.random_range(0.2..0.8), 0.3, 0.3))
            .collect()
    };
    let (a, b) = (boxes(&mut r), boxes(&mut r));
    let desc = random_tensor(&mut r, &[n, d], -1.0, 1.0);
    (prev, a, b, desc)
}

#[test]
fn untrained_model_copies_the_previous_frame() {
    let fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    let (prev, a, b, desc) = scene(1, 2, 8);
    let pair = FramePair {
        prev: &prev,
        prev_boxes: &a,
        cur_boxes: &b,
        descriptors: &desc,
    };
    let mut g = Graph::new();
    let out = fgf.forward(&mut g, &[pair]).unwrap();
    assert!(g.value(out.flow).data().iter().all(|&v| v == 0.0));
    assert_eq!(g.value(out.warped).data(), prev.data());
    assert_eq!(fgf.predict(&pair).unwrap(), prev);
}

#[test]
fn zero_refinement_returns_the_warp() {
    let mut fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    scramble(&mut fgf, 3, 0.2);
    for name in ["fgf.refine.2.k", "fgf.refine.2.b"] {
        let id = fgf.store().id(name).unwrap();
        fgf.store_mut().value_mut(id).data_mut().fill(0.0);
    }
    let (prev, a, b, desc) = scene(2, 3, 8);
    let pair = FramePair {
        prev: &prev,
        prev_boxes: &a,
        cur_boxes: &b,
        descriptors: &desc,
    };
    let mut g = Graph::new();
    let out = fgf.forward(&mut g, &[pair]).unwrap();
    assert!(
        g.value(out.flow).data().iter().any(|&v| v.abs() > 1e-3),
        "scrambled flow is non-zero"
    );
    assert_eq!(g.value(out.frame).data(), g.value(out.warped).data());
}

#[test]
fn batched_forward_matches_single_pairs() {
    let mut fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    scramble(&mut fgf, 4, 0.2);
    let scenes: Vec<_> = (0..3).map(|s| scene(10 + s, 1 + s as usize, 8)).collect();
    let pairs: Vec<FramePair> = scenes
        .iter()
        .map(|(p, a, b, d)| FramePair {
            prev: p,
            prev_boxes: a,
            cur_boxes: b,
            descriptors: d,
        })
        .collect();
    let mut g = Graph::new();
    let out = fgf.forward(&mut g, &pairs).unwrap();
    let all = g.value(out.frame).data().to_vec();
    for (k, p) in pairs.iter().enumerate() {
        let one = fgf.predict(p).unwrap();
        let size = one.numel();
        for (x, y) in all[k * size..(k + 1) * size].iter().zip(one.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn outputs_stay_in_unit_range() {
    let mut fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    scramble(&mut fgf, 5, 1.0);
    let (prev, a, b, desc) = scene(6, 4, 8);
    let out = fgf
        .predict(&FramePair {
            prev: &prev,
            prev_boxes: &a,
            cur_boxes: &b,
            descriptors: &desc,
        })
        .unwrap();
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn bad_inputs_are_rejected() {
    let fgf = Fgf::new(FgfConfig::new(8)).unwrap();
    let (prev, a, b, desc) = scene(7, 2, 8);
    let mut g = Graph::new();
    assert!(fgf.forward(&mut g, &[]).is_err());
    let short = &b[..1];
    let pair = FramePair {
        prev: &prev,
        prev_boxes: &a,
        cur_boxes: short,
        descriptors: &desc,
    };
    assert!(fgf.forward(&mut g, &[pair]).is_err());
    let wrong = Tensor::zeros(&[2, 5]);
    let pair = FramePair {
        prev: &prev,
        prev_boxes: &a,
        cur_boxes: &b,
        descriptors: &wrong,
    };
    assert!(fgf.forward(&mut g, &[pair]).is_err());
}

#[test]
fn composed_frame_model_gradcheck() {
    let err = gradcheck(composed_frame_model, &composed_frame_inputs(42), 1e-6);
    assert!(err <= 1e-3, "max relative error {err}");
}

fn one_object_graph(length: usize) -> (ActionGraph, Vec<BBox>) {
    let o = WorldObject {
        shape: Shape::Circle,
        color: 0,
        size: Size::Medium,
        depth: 0,
    };
    let graph = ActionGraph::new(
        Arc::new(Vocabulary::cater()),
        vec![o.to_node(0)],
        vec![],
        length,
    )
    .unwrap();
    (graph, vec![o.box_at(0.5, 0.5)])
}

#[test]
fn single_layout_gives_just_the_first_frame() {
    let fgf = Fgf::new(FgfConfig::new(16)).unwrap();
    let (_, first) = one_object_graph(2);
    let frame = Frame::filled(8, 8, [10, 20, 30]);
    let states = [LayoutState {
        boxes: first,
        descriptors: None,
    }];
    assert_eq!(generate_frames(&fgf, &states, &frame).unwrap(), vec![frame]);
}

#[test]
fn generated_video_has_one_frame_per_step() {
    let mut lgf = LayoutModel::new(LgfConfig {
        dim: 16,
        ..LgfConfig::gcn(Arc::new(Vocabulary::cater()))
    })
    .unwrap();
    let fgf = Fgf::new(FgfConfig::new(16)).unwrap();
    let (graph, first) = one_object_graph(4);
    let frame = Frame::filled(8, 8, [10, 20, 30]);
    let video = generate_video(&mut lgf, &fgf, &graph, &frame, &first).unwrap();
    assert_eq!(video.len(), 4);
    // untrained: no flow and no correction, so nothing changes
    assert!(video.iter().all(|f| *f == frame));
}

#[test]
fn raw_video_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut frames: Vec<Frame> = (0..3u8)
        .map(|t| Frame::filled(5, 4, [t, 2 * t, 3 * t]))
        .collect();
    frames[1].set_pixel(4, 3, [255, 0, 7]);
    let path = dir.path().join("v.raw");
    write_raw_video(&frames, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 16 + 3 * 5 * 4 * 3);
    assert_eq!(&bytes[..4], b"AGVR");
    assert_eq!(bytes[4..16], [3, 0, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0]);
    assert_eq!(read_raw_video(&path).unwrap(), frames);
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(read_raw_video(&path).is_err());
}

#[test]
fn ppm_sequence_writes_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Frame> = (0..2u8).map(|t| Frame::filled(3, 2, [t, t, t])).collect();
    write_ppm_sequence(&frames, dir.path()).unwrap();
    for (t, f) in frames.iter().enumerate() {
        let bytes = std::fs::read(dir.path().join(format!("{t:03}.ppm"))).unwrap();
        assert_eq!(&Frame::from_ppm(&bytes).unwrap(), f);
    }
}

#[test]
fn frame_model_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut fgf = Fgf::new(FgfConfig {
        channels: 4,
        ..FgfConfig::new(8)
    })
    .unwrap();
    scramble(&mut fgf, 9, 0.3);
    save_fgf(&fgf, dir.path()).unwrap();
    let back = load_fgf(dir.path()).unwrap();
    assert_eq!(back.config(), fgf.config());
    let (prev, a, b, desc) = scene(8, 2, 8);
    let pair = FramePair {
        prev: &prev,
        prev_boxes: &a,
        cur_boxes: &b,
        descriptors: &desc,
    };
    assert_eq!(back.predict(&pair).unwrap(), fgf.predict(&pair).unwrap());
}

#[test]
fn frame_config_text_round_trip() {
    let cfg = FgfConfig {
        channels: 7,
        seed: 3,
        ..FgfConfig::new(12)
    };
    assert_eq!(FgfConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(FgfConfig::parse("channels=x").is_err());
}
