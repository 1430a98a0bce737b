//! Raw numeric kernels over flat row-major buffers. No graph bookkeeping here.

/// `c (m×n) (+)= a (m×k) · b (k×n)`. `a_t`/`b_t` mean the operand is stored
/// transposed (`k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // regions of the three slices, whose lengths are checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How an operand's elements map onto a broadcast output.
pub(crate) enum Bcast {
    Same,
    /// Operand shape is a suffix of the output shape: `in[i % len]`.
    Cycle(usize),
    Map(Vec<usize>),
}

impl Bcast {
    pub(crate) fn new(input: &[usize], out: &[usize]) -> Bcast {
        if input == out {
            return Bcast::Same;
        }
        let numel: usize = input.iter().product();
        let trimmed: Vec<usize> = {
            let first = input.iter().position(|&d| d != 1).unwrap_or(input.len());
            input[first..].to_vec()
        };
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return Bcast::Cycle(numel);
        }
        let rank = out.len();
        let padded: Vec<usize> = std::iter::repeat_n(1, rank - input.len())
            .chain(input.iter().copied())
            .collect();
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..rank).rev() {
            strides[i] = if padded[i] == 1 { 0 } else { acc };
            acc *= padded[i];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Cycle(n) => i % n,
            Bcast::Map(m) => m[i],
        }
    }
}

/// Geometry of a batch of `H×W×C` images; rank-3 inputs have `n == 1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ImageDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ImageDims {
    pub(crate) fn of(shape: &[usize]) -> Option<ImageDims> {
        match *shape {
            [h, w, c] => Some(ImageDims { n: 1, h, w, c }),
            [n, h, w, c] => Some(ImageDims { n, h, w, c }),
            _ => None,
        }
    }

    pub(crate) fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// 3×3 patches with zero padding, column order `(ky, kx, c)`.
pub(crate) fn im2col(input: &[f64], d: ImageDims) -> Vec<f64> {
    let k9 = 9 * d.c;
    let mut cols = vec![0.0; d.pixels() * k9];
    for b in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let row = ((b * d.h + y) * d.w + x) * k9;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let src = ((b * d.h + sy as usize) * d.w + sx as usize) * d.c;
                        let dst = row + (ky * 3 + kx) * d.c;
                        cols[dst..dst + d.c].copy_from_slice(&input[src..src + d.c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
pub(crate) fn col2im_add(cols: &[f64], d: ImageDims, out: &mut [f64]) {
    let k9 = 9 * d.c;
    for b in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let row = ((b * d.h + y) * d.w + x) * k9;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= d.w as isize {
                            continue;
                        }
                        let dst = ((b * d.h + sy as usize) * d.w + sx as usize) * d.c;
                        let src = row + (ky * 3 + kx) * d.c;
                        for c in 0..d.c {
                            out[dst + c] += cols[src + c];
                        }
                    }
                }
            }
        }
    }
}

/// Bilinear tap for one output pixel: the four source offsets (in pixels)
/// and their weights, plus whether each axis was clamped to the border.
struct Tap {
    idx: [usize; 4],
    wts: [f64; 4],
    ax: f64,
    ay: f64,
    x_clamped: bool,
    y_clamped: bool,
}

fn tap(d: ImageDims, b: usize, y: usize, x: usize, fx: f64, fy: f64) -> Tap {
    let max_x = (d.w - 1) as f64;
    let max_y = (d.h - 1) as f64;
    let sx_raw = x as f64 + fx;
    let sy_raw = y as f64 + fy;
    let sx = sx_raw.clamp(0.0, max_x);
    let sy = sy_raw.clamp(0.0, max_y);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let ax = sx - x0;
    let ay = sy - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(d.w - 1);
    let y1 = (y0 + 1).min(d.h - 1);
    let base = b * d.h * d.w;
    Tap {
        idx: [
            base + y0 * d.w + x0,
            base + y0 * d.w + x1,
            base + y1 * d.w + x0,
            base + y1 * d.w + x1,
        ],
        wts: [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ],
        ax,
        ay,
        x_clamped: !(0.0..=max_x).contains(&sx_raw),
        y_clamped: !(0.0..=max_y).contains(&sy_raw),
    }
}

pub(crate) fn grid_sample(image: &[f64], flow: &[f64], d: ImageDims) -> Vec<f64> {
    let mut out = vec![0.0; d.pixels() * d.c];
    for b in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let p = (b * d.h + y) * d.w + x;
                let t = tap(d, b, y, x, flow[2 * p], flow[2 * p + 1]);
                for c in 0..d.c {
                    out[p * d.c + c] = t
                        .idx
                        .iter()
                        .zip(&t.wts)
                        .map(|(&i, &w)| w * image[i * d.c + c])
                        .sum();
                }
            }
        }
    }
    out
}

/// Gradients of [`grid_sample`] w.r.t. image and flow, accumulated in place.
pub(crate) fn grid_sample_backward(
    image: &[f64],
    flow: &[f64],
    d: ImageDims,
    grad_out: &[f64],
    grad_image: Option<&mut [f64]>,
    grad_flow: Option<&mut [f64]>,
) {
    let mut gi = grad_image;
    let mut gf = grad_flow;
    for b in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let p = (b * d.h + y) * d.w + x;
                let t = tap(d, b, y, x, flow[2 * p], flow[2 * p + 1]);
                let go = &grad_out[p * d.c..(p + 1) * d.c];
                if let Some(gi) = gi.as_deref_mut() {
                    for (&i, &w) in t.idx.iter().zip(&t.wts) {
                        for c in 0..d.c {
                            gi[i * d.c + c] += w * go[c];
                        }
                    }
                }
                if let Some(gf) = gf.as_deref_mut() {
                    let [i00, i01, i10, i11] = t.idx;
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for c in 0..d.c {
                        let v00 = image[i00 * d.c + c];
                        let v01 = image[i01 * d.c + c];
                        let v10 = image[i10 * d.c + c];
                        let v11 = image[i11 * d.c + c];
                        dx += go[c] * ((1.0 - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
                        dy += go[c] * ((1.0 - t.ax) * (v10 - v00) + t.ax * (v11 - v01));
                    }
                    if !t.x_clamped {
                        gf[2 * p] += dx;
                    }
                    if !t.y_clamped {
                        gf[2 * p + 1] += dy;
                    }
                }
            }
        }
    }
}
