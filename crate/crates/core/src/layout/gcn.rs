use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::nn::{self, Mlp};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use super::model::{predict_one, Aggregation, LgfConfig, NeuralLgf};
use super::step::{Batch, StepInput, EDGE_EXTRA};
use super::{LayoutError, LayoutState, Lgf};

type Result<T> = std::result::Result<T, LayoutError>;

/// Gain of the last box-head layer; zero so that an untrained model
/// starts at "nothing moves".
pub(crate) const HEAD_GAIN: f64 = 0.0;

/// Category and action embeddings plus the MLPs that project the initial
/// node and edge vectors to `D` dimensions. Shared by the graph network and
/// the recurrent baseline.
#[derive(Clone, Debug)]
pub(crate) struct InputEncoder {
    pub objects: ParamId,
    pub actions: ParamId,
    pub node: Mlp,
    pub edge: Mlp,
}

impl InputEncoder {
    pub fn new(store: &mut ParamStore, config: &LgfConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = config.dim;
        let v = &config.vocab;
        // unit-norm embedding rows, comparable in scale to the box inputs
        let bound = (3.0 / d as f64).sqrt();
        Ok(InputEncoder {
            objects: store.add_uniform(
                "embed.objects",
                &[v.objects().len().max(1), d],
                bound,
                rng,
            )?,
            // one extra row for the idle self-edge
            actions: store.add_uniform("embed.actions", &[v.actions().len() + 1, d], bound, rng)?,
            node: Mlp::new(store, "encode.node", &[d + 4, d, d], true, 1.0, rng)?,
            edge: Mlp::new(
                store,
                "encode.edge",
                &[d + EDGE_EXTRA, d, d],
                true,
                1.0,
                rng,
            )?,
        })
    }

    /// `z0 = MLP([phi(category), box])`, `u0 = MLP([psi(action), raw])`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<(Var, Var)> {
        let phi = g.param(store, self.objects);
        let psi = g.param(store, self.actions);
        let cat = g.gather_rows(phi, &batch.categories)?;
        let prev = g.input(batch.prev.clone());
        let node_in = g.concat(&[cat, prev])?;
        let z0 = self.node.forward(g, store, node_in)?;
        let act = g.gather_rows(psi, &batch.actions)?;
        let raw = g.input(batch.edge_raw.clone());
        let edge_in = g.concat(&[act, raw])?;
        let u0 = self.edge.forward(g, store, edge_in)?;
        Ok((z0, u0))
    }
}

/// Residual box head: `clamp(prev + MLP(h), 0, 1)`.
pub(crate) fn box_head(
    g: &mut Graph,
    store: &ParamStore,
    head: &Mlp,
    h: Var,
    batch: &Batch,
) -> Result<Var> {
    let delta = head.forward(g, store, h)?;
    let prev = g.input(batch.prev.clone());
    let moved = g.add(prev, delta)?;
    Ok(nn::clamp01(g, moved)?)
}

/// The three message functions of one layer, each `3D -> D`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub fs: Mlp,
    pub fa: Mlp,
    pub fo: Mlp,
}

/// Graph-network layout model.
///
/// Each layer updates node `i` with `sum F_s(z_i, u_e, z_j)` over edges it
/// is the subject of plus `sum F_o(z_j, u_e, z_i)` over edges it is the
/// object of, and replaces each edge vector by `F_a(z_i, u_e, z_j)`.
pub struct GcnLgf {
    config: LgfConfig,
    store: ParamStore,
    encoder: InputEncoder,
    pub layers: Vec<GcnLayer>,
    head: Mlp,
}

impl GcnLgf {
    pub fn new(config: LgfConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let encoder = InputEncoder::new(&mut store, &config, &mut rng)?;
        let layers = (0..config.layers)
            .map(|k| {
                let mut mlp = |f: &str| {
                    Mlp::new(
                        &mut store,
                        &format!("gcn.{k}.{f}"),
                        &[3 * d, d, d],
                        false,
                        1.0,
                        &mut rng,
                    )
                };
                Ok(GcnLayer {
                    fs: mlp("fs")?,
                    fa: mlp("fa")?,
                    fo: mlp("fo")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Mlp::new(&mut store, "head", &[d, d, 4], false, HEAD_GAIN, &mut rng)?;
        Ok(GcnLgf {
            config,
            store,
            encoder,
            layers,
            head,
        })
    }

    /// Initial node and edge vectors `(z0 [N, D], u0 [E, D])`.
    pub fn init_features(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var)> {
        self.encoder.encode(g, &self.store, batch)
    }

    /// One round of message passing with layer `k`.
    pub fn gcn_step(
        &self,
        g: &mut Graph,
        k: usize,
        batch: &Batch,
        z: Var,
        u: Var,
    ) -> Result<(Var, Var)> {
        let layer = &self.layers[k];
        let s = &self.store;
        let zs = g.gather_rows(z, &batch.subjects)?;
        let zo = g.gather_rows(z, &batch.objects)?;
        let x = g.concat(&[zs, u, zo])?;
        let ms = layer.fs.forward(g, s, x)?;
        let mo = layer.fo.forward(g, s, x)?;
        let u_next = layer.fa.forward(g, s, x)?;
        let to_subject = g.scatter_add_rows(ms, &batch.subjects, batch.num_nodes)?;
        let to_object = g.scatter_add_rows(mo, &batch.objects, batch.num_nodes)?;
        let mut z_next = g.add(to_subject, to_object)?;
        if self.config.aggregation == Aggregation::Mean {
            let mut deg = vec![0.0; batch.num_nodes];
            for &i in batch.subjects.iter().chain(&batch.objects) {
                deg[i] += 1.0;
            }
            let inv = deg.iter().map(|d| 1.0 / f64::max(*d, 1.0)).collect();
            let inv = g.input(Tensor::new(&[batch.num_nodes, 1], inv)?);
            z_next = g.mul(z_next, inv)?;
        }
        Ok((z_next, u_next))
    }
}

impl NeuralLgf for GcnLgf {
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
        let (mut z, mut u) = self.init_features(g, batch)?;
        for k in 0..self.layers.len() {
            (z, u) = self.gcn_step(g, k, batch, z, u)?;
        }
        let boxes = box_head(g, &self.store, &self.head, z, batch)?;
        Ok((boxes, z))
    }
}

impl Lgf for GcnLgf {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState> {
        predict_one(self, input)
    }
}
