//! Layers and composite ops built only from the primitive [`Graph`] ops.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

pub fn scale(g: &mut Graph, x: Var, c: f64) -> Result<Var> {
    let c = g.input(Tensor::scalar(c));
    g.mul(x, c)
}

pub fn add_scalar(g: &mut Graph, x: Var, c: f64) -> Result<Var> {
    let c = g.input(Tensor::scalar(c));
    g.add(x, c)
}

pub fn sub(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let nb = scale(g, b, -1.0)?;
    g.add(a, nb)
}

/// `clamp(x, 0, 1) = relu(x) - relu(x - 1)`.
pub fn clamp01(g: &mut Graph, x: Var) -> Result<Var> {
    let lo = g.relu(x)?;
    let shifted = add_scalar(g, x, -1.0)?;
    let hi = g.relu(shifted)?;
    sub(g, lo, hi)
}

/// Mean absolute difference.
pub fn l1_mean(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = sub(g, pred, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Affine map `x W + b` over the last axis of a 2-D input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// He-uniform initialisation scaled by `gain`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        Ok(Linear {
            weight: store.add_uniform(&format!("{name}.w"), &[fan_in, fan_out], bound, rng)?,
            bias: store.add_zeros(&format!("{name}.b"), &[fan_out])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// Stack of [`Linear`] layers with ReLU between them (and optionally after
/// the last one).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_out: bool,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. `out_gain` scales the last layer init.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        relu_out: bool,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                Linear::new(
                    store,
                    &format!("{name}.{i}"),
                    sizes[i],
                    sizes[i + 1],
                    gain,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, relu_out })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() || self.relu_out {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// 3×3 convolution with bias over `[N,H,W,C]` images.
#[derive(Clone, Debug)]
pub struct Conv3 {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv3 {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = gain * (6.0 / (9 * c_in) as f64).sqrt();
        Ok(Conv3 {
            kernel: store.add_uniform(&format!("{name}.k"), &[3, 3, c_in, c_out], bound, rng)?,
            bias: store.add_zeros(&format!("{name}.b"), &[c_out])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        let y = g.conv2d(x, k)?;
        g.add(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp01_matches_clamp() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[5], vec![-0.5, 0.0, 0.3, 1.0, 1.7]).unwrap());
        let y = clamp01(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.3, 1.0, 1.0]);
    }

    #[test]
    fn l1_mean_of_constant_offset() {
        let mut g = Graph::new();
        let a = g.input(Tensor::full(&[2, 4], 0.5));
        let b = g.input(Tensor::full(&[2, 4], 0.25));
        let l = l1_mean(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), 0.25);
    }
}
