mod common;

use agvid::tensor::nn;
use agvid::tensor::{Graph, Tensor, TensorError};
use common::{gradcheck, primitive_cases, random_tensor, rng, OpFn};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

#[test]
fn every_primitive_passes_finite_difference_check() {
    for (name, op, gen) in primitive_cases() {
        for seed in 0..INSTANCES {
            let err = gradcheck(op, &gen(seed), H);
            assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn composed_mlp_passes_finite_difference_check() {
    let f: OpFn = |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add(h, v[2])?;
        let h = g.tanh(h)?;
        let h = g.concat(&[h, v[0]])?;
        let s = g.sigmoid(h)?;
        nn::clamp01(g, s)
    };
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let ins = vec![
            random_tensor(&mut r, &[3, 4], -1.0, 1.0),
            random_tensor(&mut r, &[4, 5], -1.0, 1.0),
            random_tensor(&mut r, &[5], -1.0, 1.0),
        ];
        assert!(gradcheck(f, &ins, H) <= TOL);
    }
}

#[test]
fn matmul_shape_rule() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 4]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 4]);
    let err = g.matmul(b, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![3, 4],
            rhs: vec![3, 4]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn relu_definition() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn conv_of_zero_image_is_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[8, 8, 1]));
    let k = g.input(random_tensor(&mut rng(3), &[3, 3, 1, 1], -1.0, 1.0));
    let y = g.conv2d(x, k).unwrap();
    assert_eq!(g.shape(y), &[8, 8, 1]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[2], 1e200));
    assert_eq!(g.mul(x, x), Err(TensorError::NonFinite { op: "multiply" }));
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::new();
    let x = g.leaf(random_tensor(&mut rng(1), &[2, 3, 2], -1.0, 1.0));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn mean_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let m = g.mean(sq).unwrap();
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    assert_eq!(g.backward(x), Err(TensorError::NotScalar(vec![2])));
    let mut empty = Graph::new();
    assert!(matches!(empty.backward(x), Err(TensorError::UnknownVar(_))));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[3], 2.0));
    let unused = g.leaf(Tensor::full(&[2], 5.0));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn gradients_accumulate_linearly() {
    let x0 = random_tensor(&mut rng(9), &[4], -1.0, 1.0);
    let build = |g: &mut Graph| {
        let x = g.leaf(x0.clone());
        let t = g.tanh(x).unwrap();
        let l1 = g.sum(t).unwrap();
        let sq = g.mul(x, x).unwrap();
        let l2 = g.mean(sq).unwrap();
        (x, l1, l2)
    };
    let mut g = Graph::new();
    let (x, l1, l2) = build(&mut g);
    g.backward(l1).unwrap();
    g.backward(l2).unwrap();
    let separate = g.grad(x).unwrap();

    let mut h = Graph::new();
    let (y, m1, m2) = build(&mut h);
    let total = h.add(m1, m2).unwrap();
    h.backward(total).unwrap();
    assert!(separate.max_abs_diff(&h.grad(y).unwrap()) < 1e-14);

    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut r = rng(42);
        let mut g = Graph::new();
        let img = g.leaf(random_tensor(&mut r, &[1, 6, 6, 3], 0.0, 1.0));
        let k = g.leaf(random_tensor(&mut r, &[3, 3, 3, 2], -1.0, 1.0));
        let flow = g.conv2d(img, k).unwrap();
        let w = g.bilinear_sample(img, flow).unwrap();
        let l = g.mean(w).unwrap();
        g.backward(l).unwrap();
        (g.value(l).clone(), g.grad(img).unwrap(), g.grad(k).unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
    assert_eq!(a.2.data(), b.2.data());
}

fn sample(image: Tensor, flow: Tensor) -> Tensor {
    let mut g = Graph::new();
    let i = g.input(image);
    let f = g.input(flow);
    let o = g.bilinear_sample(i, f).unwrap();
    g.value(o).clone()
}

#[test]
fn zero_flow_warp_is_identity() {
    let img = random_tensor(&mut rng(5), &[7, 9, 3], 0.0, 1.0);
    let out = sample(img.clone(), Tensor::zeros(&[7, 9, 2]));
    assert_eq!(out, img);
}

#[test]
fn integer_flow_shifts_with_clamped_border() {
    let img = random_tensor(&mut rng(6), &[4, 5, 1], 0.0, 1.0);
    let mut flow = Tensor::zeros(&[4, 5, 2]);
    for p in 0..20 {
        flow.data_mut()[2 * p] = 1.0;
    }
    let out = sample(img.clone(), flow);
    for y in 0..4 {
        for x in 0..5 {
            let src = (x + 1).min(4);
            assert_eq!(out.get(&[y, x, 0]), img.get(&[y, src, 0]));
        }
    }
}

#[test]
fn half_pixel_flow_averages_columns() {
    let (a, b) = (0.2, 0.9);
    let img = Tensor::new(&[1, 2, 1], vec![a, b]).unwrap();
    let flow = Tensor::new(&[1, 2, 2], vec![0.5, 0.0, 0.5, 0.0]).unwrap();
    let out = sample(img, flow);
    assert!((out.get(&[0, 0, 0]) - (a + b) / 2.0).abs() < 1e-15);
}

#[test]
fn mismatched_warp_shapes_are_rejected() {
    let mut g = Graph::new();
    let i = g.input(Tensor::zeros(&[4, 4, 3]));
    let f = g.input(Tensor::zeros(&[4, 5, 2]));
    assert!(matches!(
        g.bilinear_sample(i, f),
        Err(TensorError::Shape {
            op: "bilinear_sample",
            ..
        })
    ));
}
