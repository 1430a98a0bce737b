//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use agvid::tensor::{nn, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Builds `sum(f(inputs) * weights)` so every output element gets a
/// distinct upstream gradient.
fn weighted_loss<F>(
    f: &F,
    inputs: &[Tensor],
    weights_seed: u64,
    leaves: bool,
) -> (Graph, Vec<Var>, Var)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if leaves {
                g.leaf(t.clone())
            } else {
                g.input(t.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars).unwrap();
    let mut wr = rng(weights_seed);
    let w = random_tensor(&mut wr, g.shape(out), -1.0, 1.0);
    let w = g.input(w);
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    (g, vars, loss)
}

/// Max relative error between autodiff and central finite differences
/// (step `h`) over every element of every input. Relative error uses
/// `max(|a|, |n|, 1e-3)` as denominator.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let seed = 0xfeed;
    let (mut g, vars, loss) = weighted_loss(&f, inputs, seed, true);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).unwrap()).collect();
    let eval = |ins: &[Tensor]| {
        let (g, _, loss) = weighted_loss(&f, ins, seed, false);
        g.value(loss).item()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

pub type OpFn = fn(&mut Graph, &[Var]) -> Result<Var, TensorError>;
pub type InputFn = fn(u64) -> Vec<Tensor>;

/// Every primitive op, with a generator for random inputs of compatible shape.
pub fn primitive_cases() -> Vec<(&'static str, OpFn, InputFn)> {
    vec![
        (
            "matmul",
            |g, v| g.matmul(v[0], v[1]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[3, 4], -1.0, 1.0),
                    random_tensor(&mut r, &[4, 2], -1.0, 1.0),
                ]
            },
        ),
        (
            "add_broadcast",
            |g, v| g.add(v[0], v[1]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[3, 4], -1.0, 1.0),
                    random_tensor(&mut r, &[4], -1.0, 1.0),
                ]
            },
        ),
        (
            "multiply_column_broadcast",
            |g, v| g.mul(v[0], v[1]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[3, 4], -1.0, 1.0),
                    random_tensor(&mut r, &[3, 1], -1.0, 1.0),
                ]
            },
        ),
        (
            "concat",
            |g, v| g.concat(&[v[0], v[1]]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[2, 3], -1.0, 1.0),
                    random_tensor(&mut r, &[2, 2], -1.0, 1.0),
                ]
            },
        ),
        (
            "relu",
            |g, v| g.relu(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[3, 5], -1.0, 1.0)],
        ),
        (
            "sigmoid",
            |g, v| g.sigmoid(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[3, 5], -3.0, 3.0)],
        ),
        (
            "tanh",
            |g, v| g.tanh(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[3, 5], -2.0, 2.0)],
        ),
        (
            "sum",
            |g, v| g.sum(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[2, 3], -1.0, 1.0)],
        ),
        (
            "mean",
            |g, v| g.mean(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[2, 3], -1.0, 1.0)],
        ),
        (
            "abs",
            |g, v| g.abs(v[0]),
            |s| vec![random_tensor(&mut rng(s), &[4, 3], -1.0, 1.0)],
        ),
        (
            "embedding_lookup",
            |g, v| g.gather_rows(v[0], &[2, 0, 2, 1]),
            |s| vec![random_tensor(&mut rng(s), &[3, 4], -1.0, 1.0)],
        ),
        (
            "scatter_add_rows",
            |g, v| g.scatter_add_rows(v[0], &[1, 0, 1, 3], 4),
            |s| vec![random_tensor(&mut rng(s), &[4, 3], -1.0, 1.0)],
        ),
        (
            "conv2d",
            |g, v| g.conv2d(v[0], v[1]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[2, 5, 4, 2], -1.0, 1.0),
                    random_tensor(&mut r, &[3, 3, 2, 3], -1.0, 1.0),
                ]
            },
        ),
        (
            "bilinear_sample",
            |g, v| g.bilinear_sample(v[0], v[1]),
            |s| {
                let mut r = rng(s);
                vec![
                    random_tensor(&mut r, &[5, 6, 2], -1.0, 1.0),
                    random_tensor(&mut r, &[5, 6, 2], -2.3, 2.3),
                ]
            },
        ),
        (
            "reshape",
            |g, v| g.reshape(v[0], &[6, 2]),
            |s| vec![random_tensor(&mut rng(s), &[3, 4], -1.0, 1.0)],
        ),
    ]
}

/// Flow net, warp, refinement and clamp composed by hand from primitive
/// ops, checked against finite differences in every input and kernel.
pub fn composed_frame_model(g: &mut Graph, v: &[Var]) -> Result<Var, TensorError> {
    let (prev, m_prev, m_cur) = (v[0], v[1], v[2]);
    let mut h = g.concat(&[prev, m_prev, m_cur])?;
    for (i, &k) in v[3..6].iter().enumerate() {
        h = g.conv2d(h, k)?;
        if i < 2 {
            h = g.relu(h)?;
        }
    }
    let warped = g.bilinear_sample(prev, h)?;
    let mut r = g.concat(&[m_cur, warped])?;
    for (i, &k) in v[6..9].iter().enumerate() {
        r = g.conv2d(r, k)?;
        if i < 2 {
            r = g.relu(r)?;
        }
    }
    let sum = g.add(warped, r)?;
    nn::clamp01(g, sum)
}

/// Inputs of [`composed_frame_model`] on a 16x16 frame: the previous frame,
/// both feature maps and six kernels.
pub fn composed_frame_inputs(seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let (dm, ch) = (2, 3);
    let mut inputs = vec![
        random_tensor(&mut r, &[16, 16, 3], 0.2, 0.8),
        random_tensor(&mut r, &[16, 16, dm], -1.0, 1.0),
        random_tensor(&mut r, &[16, 16, dm], -1.0, 1.0),
    ];
    for (c_in, c_out, scale) in [
        (3 + 2 * dm, ch, 0.5),
        (ch, ch, 0.5),
        (ch, 2, 1.5),
        (dm + 3, ch, 0.3),
        (ch, ch, 0.3),
        (ch, 3, 0.1),
    ] {
        inputs.push(random_tensor(&mut r, &[3, 3, c_in, c_out], -scale, scale));
    }
    inputs
}
