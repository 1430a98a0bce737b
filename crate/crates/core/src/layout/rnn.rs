use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::nn::{self, Linear, Mlp};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::gcn::{box_head, InputEncoder, HEAD_GAIN};
use super::model::{predict_one, LgfConfig, NeuralLgf};
use super::step::{Batch, StepInput};
use super::{LayoutError, LayoutState, Lgf};

type Result<T> = std::result::Result<T, LayoutError>;

/// One Elman layer: `h' = tanh(W x + b + U h)`.
#[derive(Clone, Debug)]
struct Cell {
    input: Linear,
    recurrent: ParamId,
}

impl Cell {
    fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Cell {
            input: Linear::new(store, &format!("{name}.in"), fan_in, d, 1.0, rng)?,
            recurrent: store.add_uniform(
                &format!("{name}.rec"),
                &[d, d],
                (1.0 / d as f64).sqrt(),
                rng,
            )?,
        })
    }

    fn step(&self, g: &mut Graph, s: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let a = self.input.forward(g, s, x)?;
        let u = g.param(s, self.recurrent);
        let b = g.matmul(h, u)?;
        let pre = g.add(a, b)?;
        Ok(g.tanh(pre)?)
    }
}

/// Recurrent baseline. For each object `m` it reads the sequence of rows
/// `(z_m, z_i, u_e, z_j)`, one per edge `e = (i, a, j)` of the graph in file
/// order followed by idle edges, through `K` stacked Elman layers and
/// decodes the final hidden state into a box.
pub struct RnnLgf {
    config: LgfConfig,
    store: ParamStore,
    encoder: InputEncoder,
    cells: Vec<Cell>,
    head: Mlp,
}

impl RnnLgf {
    pub fn new(config: LgfConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let encoder = InputEncoder::new(&mut store, &config, &mut rng)?;
        let cells = (0..config.layers)
            .map(|k| {
                let fan_in = if k == 0 { 4 * d } else { d };
                Cell::new(&mut store, &format!("rnn.{k}"), fan_in, d, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Mlp::new(&mut store, "head", &[d, d, 4], false, HEAD_GAIN, &mut rng)?;
        Ok(RnnLgf {
            config,
            store,
            encoder,
            cells,
            head,
        })
    }
}

impl NeuralLgf for RnnLgf {
    fn config(&self) -> &LgfConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var)> {
        let s = &self.store;
        let d = self.config.dim;
        let q = batch.num_nodes;
        let (z0, u0) = self.encoder.encode(g, s, batch)?;
        // sequence q belongs to node q; its edges are those of q's instance
        let mut ranges: Vec<Vec<usize>> = Vec::with_capacity(q);
        for k in 0..batch.offsets.len() - 1 {
            let edges = batch.edge_offsets[k]..batch.edge_offsets[k + 1];
            for _ in batch.offsets[k]..batch.offsets[k + 1] {
                ranges.push(edges.clone().collect());
            }
        }
        let steps = ranges.iter().map(|r| r.len()).max().unwrap_or(0);
        let zero = g.input(Tensor::zeros(&[q, d]));
        let mut h = vec![zero; self.cells.len()];
        for step in 0..steps {
            let edge: Vec<usize> = ranges
                .iter()
                .map(|r| if step < r.len() { r[step] } else { r[0] })
                .collect();
            let padded = ranges.iter().any(|r| step >= r.len());
            let subj: Vec<usize> = edge.iter().map(|&e| batch.subjects[e]).collect();
            let obj: Vec<usize> = edge.iter().map(|&e| batch.objects[e]).collect();
            let zi = g.gather_rows(z0, &subj)?;
            let ue = g.gather_rows(u0, &edge)?;
            let zj = g.gather_rows(z0, &obj)?;
            let mut x = g.concat(&[z0, zi, ue, zj])?;
            let mask = padded
                .then(|| {
                    let m = ranges
                        .iter()
                        .map(|r| f64::from(u8::from(step < r.len())))
                        .collect();
                    Tensor::new(&[q, 1], m).map(|t| g.input(t))
                })
                .transpose()?;
            for (l, cell) in self.cells.iter().enumerate() {
                let next = cell.step(g, s, x, h[l])?;
                h[l] = match mask {
                    Some(m) => {
                        let diff = nn::sub(g, next, h[l])?;
                        let kept = g.mul(diff, m)?;
                        g.add(h[l], kept)?
                    }
                    None => next,
                };
                x = h[l];
            }
        }
        let last = *h.last().expect("at least one layer");
        let boxes = box_head(g, s, &self.head, last, batch)?;
        Ok((boxes, last))
    }
}

impl Lgf for RnnLgf {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState> {
        predict_one(self, input)
    }
}
