use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::bbox::BBox;
use crate::graph::Vocabulary;
use crate::tensor::checkpoint;
use crate::tensor::{Graph, ParamStore, Var};

use super::step::{Batch, StepInput};
use super::{GcnLgf, LayoutError, LayoutState, Lgf, RnnLgf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Messages are summed.
    Sum,
    /// Messages are summed and divided by the node's edge count.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Rnn,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $name:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(format!("unknown {} `{s}`", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

text_enum!(Aggregation { Sum => "sum", Mean => "mean" });
text_enum!(ModelKind { Gcn => "gcn", Rnn => "rnn" });

/// Architecture of a learned layout model. Written next to its checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct LgfConfig {
    pub kind: ModelKind,
    /// Width `D` of node and edge representations.
    pub dim: usize,
    /// Number of message-passing (or recurrent) layers `K`.
    pub layers: usize,
    pub aggregation: Aggregation,
    pub vocab: Arc<Vocabulary>,
    /// Seed of the parameter initialisation.
    pub seed: u64,
}

impl LgfConfig {
    pub fn gcn(vocab: Arc<Vocabulary>) -> Self {
        LgfConfig {
            kind: ModelKind::Gcn,
            dim: 128,
            layers: 3,
            aggregation: Aggregation::Sum,
            vocab,
            seed: 0,
        }
    }

    pub fn rnn(vocab: Arc<Vocabulary>) -> Self {
        LgfConfig {
            kind: ModelKind::Rnn,
            ..LgfConfig::gcn(vocab)
        }
    }

    pub fn to_text(&self) -> String {
        let v = &self.vocab;
        let attrs: Vec<String> = v
            .attr_schema()
            .iter()
            .map(|(a, names)| format!("{a}:{}", names.join("+")))
            .collect();
        format!(
            "kind={}\ndim={}\nlayers={}\naggregation={}\nseed={}\nobjects={}\nactions={}\nattrs={}\nvocab_hash={}\n",
            self.kind,
            self.dim,
            self.layers,
            self.aggregation,
            self.seed,
            v.objects().join(","),
            v.actions().join(","),
            attrs.join(","),
            v.hash()
        )
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| format!("bad line `{l}`")))
            .collect::<Result<_, _>>()?;
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| format!("missing key `{k}`"))
        };
        let num = |k: &str| -> Result<u64, String> {
            get(k)?
                .parse()
                .map_err(|_| format!("`{k}` is not a number"))
        };
        let list = |k: &str| -> Result<Vec<String>, String> {
            Ok(get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect())
        };
        let mut attrs = BTreeMap::new();
        for item in list("attrs")? {
            let (a, names) = item
                .split_once(':')
                .ok_or_else(|| format!("bad attrs entry `{item}`"))?;
            attrs.insert(a.to_string(), names.split('+').map(String::from).collect());
        }
        let vocab = Vocabulary::new(list("objects")?, list("actions")?, attrs)
            .map_err(|e| e.to_string())?;
        if vocab.hash() != get("vocab_hash")? {
            return Err(format!(
                "vocabulary hash {} does not match recorded {}",
                vocab.hash(),
                get("vocab_hash")?
            ));
        }
        Ok(LgfConfig {
            kind: get("kind")?.parse()?,
            dim: num("dim")? as usize,
            layers: num("layers")? as usize,
            aggregation: get("aggregation")?.parse()?,
            vocab: Arc::new(vocab),
            seed: num("seed")?,
        })
    }
}

/// A learned layout model: parameters plus a differentiable forward pass
/// over a [`Batch`].
pub trait NeuralLgf {
    fn config(&self) -> &LgfConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Returns `(boxes [N, 4], descriptors [N, D])`.
    fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var), LayoutError>;

    /// Predicts each input independently (but in one pass).
    fn predict_batch(&self, inputs: &[StepInput]) -> Result<Vec<LayoutState>, LayoutError> {
        let vocab = &self.config().vocab;
        for input in inputs {
            if !Arc::ptr_eq(&input.vocab, vocab) && *input.vocab != **vocab {
                return Err(LayoutError::VocabularyMismatch {
                    model: vocab.hash(),
                    graph: input.vocab.hash(),
                });
            }
        }
        if inputs.iter().all(|i| i.num_objects() == 0) {
            return Ok(inputs
                .iter()
                .map(|_| LayoutState {
                    boxes: vec![],
                    descriptors: None,
                })
                .collect());
        }
        let batch = Batch::new(inputs)?;
        let mut g = Graph::new();
        let (boxes, desc) = self.forward(&mut g, &batch)?;
        let (boxes, desc) = (g.value(boxes), g.value(desc));
        let d = desc.shape()[1];
        Ok(batch
            .offsets
            .windows(2)
            .map(|w| {
                let rows = w[0]..w[1];
                LayoutState {
                    boxes: rows
                        .clone()
                        .map(|r| BBox::from_array(boxes.row(r).try_into().unwrap()))
                        .collect(),
                    descriptors: (!rows.is_empty()).then(|| {
                        let data = desc.data()[w[0] * d..w[1] * d].to_vec();
                        crate::tensor::Tensor::new(&[w[1] - w[0], d], data)
                            .expect("descriptor rows")
                    }),
                }
            })
            .collect())
    }
}

/// Either learned model, chosen by [`LgfConfig::kind`].
pub enum LayoutModel {
    Gcn(GcnLgf),
    Rnn(RnnLgf),
}

impl LayoutModel {
    pub fn new(config: LgfConfig) -> Result<Self, LayoutError> {
        Ok(match config.kind {
            ModelKind::Gcn => LayoutModel::Gcn(GcnLgf::new(config)?),
            ModelKind::Rnn => LayoutModel::Rnn(RnnLgf::new(config)?),
        })
    }

    fn inner(&self) -> &dyn NeuralLgf {
        match self {
            LayoutModel::Gcn(m) => m,
            LayoutModel::Rnn(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn NeuralLgf {
        match self {
            LayoutModel::Gcn(m) => m,
            LayoutModel::Rnn(m) => m,
        }
    }
}

impl NeuralLgf for LayoutModel {
    fn config(&self) -> &LgfConfig {
        self.inner().config()
    }

    fn store(&self) -> &ParamStore {
        self.inner().store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().store_mut()
    }

    fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var), LayoutError> {
        self.inner().forward(g, batch)
    }
}

pub(crate) fn predict_one(
    model: &dyn NeuralLgf,
    input: &StepInput,
) -> Result<LayoutState, LayoutError> {
    Ok(model
        .predict_batch(std::slice::from_ref(input))?
        .pop()
        .expect("one state per input"))
}

impl Lgf for LayoutModel {
    fn predict(&mut self, input: &StepInput) -> Result<LayoutState, LayoutError> {
        predict_one(self, input)
    }
}

const CONFIG_FILE: &str = "config";
const PARAMS_FILE: &str = "params.ckpt";

/// Writes `dir/config` and `dir/params.ckpt`.
pub fn save_model(model: &dyn NeuralLgf, dir: &Path) -> Result<(), LayoutError> {
    let io = |source| LayoutError::Io {
        path: dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let cfg = dir.join(CONFIG_FILE);
    std::fs::write(&cfg, model.config().to_text()).map_err(|source| LayoutError::Io {
        path: cfg.display().to_string(),
        source,
    })?;
    checkpoint::save(model.store(), &dir.join(PARAMS_FILE))?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<LayoutModel, LayoutError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|source| LayoutError::Io {
        path: cfg_path.display().to_string(),
        source,
    })?;
    let config = LgfConfig::parse(&text).map_err(|msg| LayoutError::Config {
        path: cfg_path.display().to_string(),
        msg,
    })?;
    let mut model = LayoutModel::new(config)?;
    checkpoint::load(model.store_mut(), &dir.join(PARAMS_FILE))?;
    Ok(model)
}
