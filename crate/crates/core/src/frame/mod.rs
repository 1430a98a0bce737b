//! Frame generating function: given the previous frame and the layouts at
//! `t - 1` and `t`, predict frame `t`.
//!
//! Each layout becomes a feature map (projected node descriptors painted
//! into their boxes). A flow network reads the previous frame and both
//! maps, the previous frame is warped by the flow, and a refinement network
//! adds a correction.

mod video;

pub use video::{read_raw_video, write_ppm_sequence, write_raw_video, RAW_MAGIC};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::graph::ActionGraph;
use crate::layout::{rollout, LayoutError, LayoutState, Lgf};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::nn::{self, Conv3, Linear};
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};
use crate::world::Frame;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, FrameError>;

/// Architecture of the frame model.
#[derive(Clone, Debug, PartialEq)]
pub struct FgfConfig {
    /// Width of the layout model's node descriptors.
    pub descriptor_dim: usize,
    /// Channels of the feature maps (`D_m`).
    pub map_dim: usize,
    /// Hidden channels of the flow and refinement networks.
    pub channels: usize,
    pub seed: u64,
}

impl FgfConfig {
    pub fn new(descriptor_dim: usize) -> Self {
        FgfConfig {
            descriptor_dim,
            map_dim: 16,
            channels: 16,
            seed: 0,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "descriptor_dim={}\nmap_dim={}\nchannels={}\nseed={}\n",
            self.descriptor_dim, self.map_dim, self.channels, self.seed
        )
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| format!("bad line `{l}`")))
            .collect::<std::result::Result<_, _>>()?;
        let num = |k: &str| -> std::result::Result<u64, String> {
            map.get(k)
                .ok_or_else(|| format!("missing key `{k}`"))?
                .parse()
                .map_err(|_| format!("`{k}` is not a number"))
        };
        let cfg = FgfConfig {
            descriptor_dim: num("descriptor_dim")? as usize,
            map_dim: num("map_dim")? as usize,
            channels: num("channels")? as usize,
            seed: num("seed")?,
        };
        if cfg.descriptor_dim == 0 || cfg.map_dim == 0 || cfg.channels == 0 {
            return Err("dimensions must be positive".into());
        }
        Ok(cfg)
    }
}

/// One prediction step: `prev` is the frame at `t - 1` as `[H, W, 3]` in
/// `[0, 1]`; `descriptors` are the layout model's `[n, D]` node vectors for
/// frame `t`, painted at both `prev_boxes` and `cur_boxes`.
#[derive(Clone, Copy, Debug)]
pub struct FramePair<'a> {
    pub prev: &'a Tensor,
    pub prev_boxes: &'a [BBox],
    pub cur_boxes: &'a [BBox],
    pub descriptors: &'a Tensor,
}

/// Differentiable outputs of a batched forward pass, all `[B, H, W, C]`.
#[derive(Clone, Copy, Debug)]
pub struct FgfOutput {
    pub flow: Var,
    pub warped: Var,
    pub frame: Var,
}

/// Pixels whose centers fall inside `b` (half-open on the far edges), as
/// row-major `y * width + x` indices.
pub fn box_pixels(b: BBox, width: usize, height: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for py in 0..height {
        let v = (py as f64 + 0.5) / height as f64;
        if v < b.y0() || v >= b.y1() {
            continue;
        }
        for px in 0..width {
            let u = (px as f64 + 0.5) / width as f64;
            if u >= b.x0() && u < b.x1() {
                out.push(py * width + px);
            }
        }
    }
    out
}

/// Paints row `k` of `features` (`[n, C]`) into box `k` and sums over
/// objects. Returns `[height, width, C]`.
pub fn build_feature_map(
    boxes: &[BBox],
    features: &Tensor,
    width: usize,
    height: usize,
) -> Result<Tensor> {
    let c = match *features.shape() {
        [n, c] if n == boxes.len() => c,
        _ if boxes.is_empty() => features.shape().last().copied().unwrap_or(1),
        _ => {
            return Err(FrameError::Input(format!(
                "{} boxes but features shaped {:?}",
                boxes.len(),
                features.shape()
            )))
        }
    };
    let mut data = vec![0.0; width * height * c];
    for (k, b) in boxes.iter().enumerate() {
        for p in box_pixels(*b, width, height) {
            for (d, s) in data[p * c..(p + 1) * c].iter_mut().zip(features.row(k)) {
                *d += s;
            }
        }
    }
    Ok(Tensor::new(&[height, width, c], data)?)
}

/// Flow and refinement networks plus the descriptor projection.
pub struct Fgf {
    config: FgfConfig,
    store: ParamStore,
    projection: Linear,
    flow: Vec<Conv3>,
    refine: Vec<Conv3>,
}

impl Fgf {
    pub fn new(config: FgfConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (dm, ch) = (config.map_dim, config.channels);
        let projection = Linear::new(
            &mut store,
            "fgf.project",
            config.descriptor_dim,
            dm,
            1.0,
            &mut rng,
        )?;
        let mut stack = |name: &str, sizes: [usize; 4], last_gain: f64| -> Result<Vec<Conv3>> {
            (0..3)
                .map(|i| {
                    let gain = if i == 2 { last_gain } else { 1.0 };
                    Ok(Conv3::new(
                        &mut store,
                        &format!("{name}.{i}"),
                        sizes[i],
                        sizes[i + 1],
                        gain,
                        &mut rng,
                    )?)
                })
                .collect()
        };
        // both heads start at zero: no flow, no correction
        let flow = stack("fgf.flow", [3 + 2 * dm, ch, ch, 2], 0.0)?;
        let refine = stack("fgf.refine", [dm + 3, ch, ch, 3], 0.0)?;
        Ok(Fgf {
            config,
            store,
            projection,
            flow,
            refine,
        })
    }

    pub fn config(&self) -> &FgfConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Projected descriptors `[n, D_m]` painted into `boxes`.
    pub fn feature_map(
        &self,
        boxes: &[BBox],
        descriptors: &Tensor,
        width: usize,
        height: usize,
    ) -> Result<Tensor> {
        if boxes.is_empty() {
            return Ok(Tensor::zeros(&[height, width, self.config.map_dim]));
        }
        let mut g = Graph::new();
        let d = g.input(descriptors.clone());
        let p = self.projection.forward(&mut g, &self.store, d)?;
        build_feature_map(boxes, g.value(p), width, height)
    }

    /// Batched forward pass. All frames must share one resolution.
    pub fn forward(&self, g: &mut Graph, pairs: &[FramePair]) -> Result<FgfOutput> {
        let first = pairs
            .first()
            .ok_or_else(|| FrameError::Input("no frame pairs".into()))?;
        let (h, w) = match *first.prev.shape() {
            [h, w, 3] => (h, w),
            _ => {
                return Err(FrameError::Input(format!(
                    "frame shaped {:?}",
                    first.prev.shape()
                )))
            }
        };
        let (b, dm, hw) = (pairs.len(), self.config.map_dim, h * w);
        let mut frames = Vec::with_capacity(b * hw * 3);
        let mut descriptors = Vec::new();
        let mut rows = 0;
        let mut owners = Vec::new();
        for p in pairs {
            if p.prev.shape() != [h, w, 3] {
                return Err(FrameError::Input("frames differ in resolution".into()));
            }
            let n = p.prev_boxes.len();
            if p.cur_boxes.len() != n {
                return Err(FrameError::Input("layouts differ in object count".into()));
            }
            if n > 0 && p.descriptors.shape() != [n, self.config.descriptor_dim] {
                return Err(FrameError::Input(format!(
                    "descriptors shaped {:?} for {n} objects of width {}",
                    p.descriptors.shape(),
                    self.config.descriptor_dim
                )));
            }
            frames.extend_from_slice(p.prev.data());
            if n > 0 {
                descriptors.extend_from_slice(p.descriptors.data());
            }
            owners.push(rows..rows + n);
            rows += n;
        }
        let prev = g.input(Tensor::new(&[b, h, w, 3], frames)?);
        let (m_prev, m_cur) = if rows == 0 {
            let zero = g.input(Tensor::zeros(&[b, h, w, dm]));
            (zero, zero)
        } else {
            // masks[p, k] = 1 when pixel p (over the whole batch) lies in
            // object k's box; the maps are masks @ projected descriptors
            let desc = g.input(Tensor::new(
                &[rows, self.config.descriptor_dim],
                descriptors,
            )?);
            let proj = self.projection.forward(g, &self.store, desc)?;
            let paint = |g: &mut Graph, boxes: &dyn Fn(&FramePair) -> Vec<BBox>| -> Result<Var> {
                let mut mask = vec![0.0; b * hw * rows];
                for (k, p) in pairs.iter().enumerate() {
                    for (j, bx) in boxes(p).into_iter().enumerate() {
                        let col = owners[k].start + j;
                        for px in box_pixels(bx, w, h) {
                            mask[(k * hw + px) * rows + col] = 1.0;
                        }
                    }
                }
                let mask = g.input(Tensor::new(&[b * hw, rows], mask)?);
                let flat = g.matmul(mask, proj)?;
                Ok(g.reshape(flat, &[b, h, w, dm])?)
            };
            let m_prev = paint(g, &|p| p.prev_boxes.to_vec())?;
            let m_cur = paint(g, &|p| p.cur_boxes.to_vec())?;
            (m_prev, m_cur)
        };
        let flow_in = g.concat(&[prev, m_prev, m_cur])?;
        let flow = conv_stack(g, &self.store, &self.flow, flow_in)?;
        let warped = g.bilinear_sample(prev, flow)?;
        let refine_in = g.concat(&[m_cur, warped])?;
        let correction = conv_stack(g, &self.store, &self.refine, refine_in)?;
        let sum = g.add(warped, correction)?;
        let frame = nn::clamp01(g, sum)?;
        Ok(FgfOutput {
            flow,
            warped,
            frame,
        })
    }

    /// Predicts one frame.
    pub fn predict(&self, pair: &FramePair) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, std::slice::from_ref(pair))?;
        let t = g.value(out.frame);
        let s = t.shape();
        Ok(t.clone().reshaped(&s[1..])?)
    }
}

fn conv_stack(g: &mut Graph, store: &ParamStore, layers: &[Conv3], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(g, store, h)?;
        if i + 1 < layers.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

const CONFIG_FILE: &str = "config";
const PARAMS_FILE: &str = "params.ckpt";

/// Writes `dir/config` and `dir/params.ckpt`.
pub fn save_fgf(model: &Fgf, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| FrameError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let cfg = dir.join(CONFIG_FILE);
    std::fs::write(&cfg, model.config.to_text()).map_err(|source| FrameError::Io {
        path: cfg.display().to_string(),
        source,
    })?;
    checkpoint::save(&model.store, &dir.join(PARAMS_FILE))?;
    Ok(())
}

pub fn load_fgf(dir: &Path) -> Result<Fgf> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|source| FrameError::Io {
        path: cfg_path.display().to_string(),
        source,
    })?;
    let config = FgfConfig::parse(&text).map_err(|msg| FrameError::Config {
        path: cfg_path.display().to_string(),
        msg,
    })?;
    let mut model = Fgf::new(config)?;
    checkpoint::load(&mut model.store, &dir.join(PARAMS_FILE))?;
    Ok(model)
}

/// Generates a whole video from the first frame and layout: the layout
/// model is rolled out first, then every frame is predicted from the
/// previously generated one. Returns `graph.length()` frames starting with
/// `first_frame`.
pub fn generate_video(
    lgf: &mut dyn Lgf,
    fgf: &Fgf,
    graph: &ActionGraph,
    first_frame: &Frame,
    first_layout: &[BBox],
) -> Result<Vec<Frame>> {
    let states = rollout(lgf, graph, first_layout)?;
    generate_frames(fgf, &states, first_frame)
}

/// Frame synthesis over a given layout sequence (`states[0]` is the
/// conditioning layout; later states must carry descriptors).
pub fn generate_frames(
    fgf: &Fgf,
    states: &[LayoutState],
    first_frame: &Frame,
) -> Result<Vec<Frame>> {
    let mut frames = vec![first_frame.clone()];
    for t in 1..states.len() {
        let n = states[t].boxes.len();
        let empty = Tensor::zeros(&[1, fgf.config.descriptor_dim]);
        let descriptors = match &states[t].descriptors {
            Some(d) => d,
            None if n == 0 => &empty,
            None => return Err(FrameError::Input(format!("layout {t} has no descriptors"))),
        };
        let prev = frames[t - 1].to_tensor();
        let next = fgf.predict(&FramePair {
            prev: &prev,
            prev_boxes: &states[t - 1].boxes,
            cur_boxes: &states[t].boxes,
            descriptors,
        })?;
        frames.push(Frame::from_tensor(&next).expect("[H, W, 3] output"));
    }
    Ok(frames)
}
