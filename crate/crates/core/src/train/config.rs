use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::layout::Aggregation;
use crate::tensor::AdamConfig;

/// Which layout predictor a run trains or evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Gcn,
    Rnn,
    Rule,
    Random,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 4] = [
        ModelChoice::Gcn,
        ModelChoice::Rnn,
        ModelChoice::Rule,
        ModelChoice::Random,
    ];

    pub fn is_learned(self) -> bool {
        matches!(self, ModelChoice::Gcn | ModelChoice::Rnn)
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Gcn => "gcn",
            ModelChoice::Rnn => "rnn",
            ModelChoice::Rule => "rule",
            ModelChoice::Random => "random",
        })
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelChoice::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected gcn, rnn, rule or random)"))
    }
}

/// Hyper-parameters of a training run. The defaults are the published
/// settings; anything a run changes is written to its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_layout: f64,
    pub lambda_flow: f64,
    pub lambda_rec: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    /// Run a held-out evaluation every this many steps; 0 means only at the
    /// end.
    pub eval_every: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub model: ModelChoice,
    pub dim: usize,
    pub layers: usize,
    pub aggregation: Aggregation,
    /// Fraction of episodes held out for evaluation.
    pub heldout: f64,
    /// Frame-model channel width.
    pub channels: usize,
    /// Width of the projected descriptors painted into feature maps.
    pub map_dim: usize,
    /// Frame pairs per frame-model step.
    pub frame_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            lambda_layout: 10.0,
            lambda_flow: 10.0,
            lambda_rec: 10.0,
            batch_size: 32,
            epochs: 1,
            max_steps: 0,
            eval_every: 0,
            seed: 0,
            data: None,
            model: ModelChoice::Gcn,
            dim: 128,
            layers: 3,
            aggregation: Aggregation::Sum,
            heldout: 0.2,
            channels: 16,
            map_dim: 16,
            frame_batch: 4,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("lambda_layout", self.lambda_layout.to_string()),
            ("lambda_flow", self.lambda_flow.to_string()),
            ("lambda_rec", self.lambda_rec.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed", self.seed.to_string()),
            (
                "data",
                self.data
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("model", self.model.to_string()),
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("aggregation", self.aggregation.to_string()),
            ("heldout", self.heldout.to_string()),
            ("channels", self.channels.to_string()),
            ("map_dim", self.map_dim.to_string()),
            ("frame_batch", self.frame_batch.to_string()),
        ]
    }

    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), n).is_some() {
                return Err(format!("line {}: duplicate key `{k}`", n + 1));
            }
            cfg.set(k, v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "lambda_layout" => self.lambda_layout = num(key, value)?,
            "lambda_flow" => self.lambda_flow = num(key, value)?,
            "lambda_rec" => self.lambda_rec = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "model" => self.model = value.parse()?,
            "dim" => self.dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "heldout" => self.heldout = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "map_dim" => self.map_dim = num(key, value)?,
            "frame_batch" => self.frame_batch = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("lr", self.lr),
            ("lambda_layout", self.lambda_layout),
            ("lambda_flow", self.lambda_flow),
            ("lambda_rec", self.lambda_rec),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(format!("`{k}` must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("betas must be in [0, 1)".into());
        }
        if self.batch_size == 0 || self.dim == 0 || self.layers == 0 || self.channels == 0 {
            return Err("batch_size, dim, layers and channels must be positive".into());
        }
        if self.map_dim == 0 || self.frame_batch == 0 {
            return Err("map_dim and frame_batch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.heldout) {
            return Err("heldout must be in [0, 1)".into());
        }
        Ok(())
    }
}
