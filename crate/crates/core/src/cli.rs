//! The `agvid` command line: data generation, training, generation,
//! evaluation and baseline comparison. Every command writes a manifest
//! recording its configuration, seed and a content hash of its inputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bbox::BBox;
use crate::frame::{
    generate_frames, load_fgf, save_fgf, write_ppm_sequence, write_raw_video, Fgf, FgfConfig,
};
use crate::graph::parse_graph;
use crate::layout::{
    load_model, rollout, save_model, LayoutModel, LayoutState, Lgf, LgfConfig, NeuralLgf,
    RandomLgf, RuleLgf,
};
use crate::train::{
    eval_fgf, eval_layout, prepare_frames, rollout_many, run_experiments, split_heldout, train_fgf,
    train_lgf, write_loss_log, MetricReport, ModelChoice, Rollout, TrainConfig, COPY_L1, MIOU,
    PIXEL_L1, RECALL_03, RECALL_05, WARP_L1,
};
use crate::world::{
    export_dataset, generate_corpus, import_dataset, place_objects, rasterize, render_states,
    world_objects, CorpusConfig, Episode, Frame,
};

#[derive(Parser, Debug)]
#[command(
    name = "agvid",
    version,
    about = "Action graphs to video on a procedural 2D world"
)]
struct Cli {
    /// Log progress at debug level.
    #[arg(short, long, global = true, display_order = 100)]
    verbose: bool,
    /// Only log warnings and errors.
    #[arg(
        short,
        long,
        global = true,
        conflicts_with = "verbose",
        display_order = 100
    )]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a corpus of episodes.
    GenData(GenData),
    /// Train a layout model.
    TrainLgf(TrainLgf),
    /// Train the frame model on top of a trained layout model.
    TrainFgf(TrainFgf),
    /// Render a video for an action graph.
    Generate(Generate),
    /// Evaluate one model on a corpus.
    Eval(Eval),
    /// Evaluate several models and print the baseline table.
    Compare(Compare),
}

#[derive(Args, Debug)]
struct Common {
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenData {
    /// Corpus seed; every episode draws from its own stream of it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of episodes.
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    /// Frames per episode.
    #[arg(long, default_value_t = 16)]
    length: usize,
    /// Width and height of the rendered frames.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; the corpus does not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Corpus directory; overrides `data` in the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for symmetry with `eval`; training is single-threaded.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct TrainLgf {
    #[command(flatten)]
    train: TrainArgs,
    /// gcn or rnn; overrides `model` in the configuration.
    #[arg(long)]
    model: Option<ModelChoice>,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainFgf {
    #[command(flatten)]
    train: TrainArgs,
    /// Trained layout model whose descriptors condition the frames.
    #[arg(long)]
    lgf: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Generate {
    /// Action graph file.
    #[arg(long)]
    graph: PathBuf,
    /// Trained layout model checkpoint.
    #[arg(long)]
    lgf: PathBuf,
    /// Trained frame model checkpoint.
    #[arg(long)]
    fgf: PathBuf,
    /// First frame as binary PPM; rendered from the first layout if absent.
    #[arg(long)]
    first_frame: Option<PathBuf>,
    /// First layout: `x y w h` per object, whitespace separated; placed at
    /// random from `--seed` if absent.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Frame size when no first frame is given.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Seed of the random placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the frames, the raw video and the layouts.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of episodes (the last ones) held out from training.
    #[arg(long, default_value_t = 0.2)]
    heldout: f64,
    /// Score every episode instead of only the held-out ones.
    #[arg(long)]
    all: bool,
    /// Seed of the random baseline and of the experiment episodes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Timing pairs in the experiment suite.
    #[arg(long, default_value_t = 100)]
    timing_pairs: usize,
    /// Episodes per composite in the experiment suite.
    #[arg(long, default_value_t = 50)]
    composite_episodes: usize,
}

#[derive(Args, Debug)]
struct Eval {
    /// gcn, rnn, rule or random.
    #[arg(long)]
    model: ModelChoice,
    /// Checkpoint of a learned model.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Frame model checkpoint; adds pixel metrics.
    #[arg(long)]
    fgf: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
    /// Report path; a `.json` twin and a manifest are written beside it.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Compare {
    /// Comma-separated models.
    #[arg(long, value_delimiter = ',', default_value = "gcn,rnn,rule,random")]
    models: Vec<ModelChoice>,
    /// Checkpoint of a learned model as `kind=dir`; repeatable. Learned
    /// models without one are trained first.
    #[arg(long = "ckpt", value_name = "KIND=DIR")]
    ckpts: Vec<String>,
    /// Training configuration for models trained here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one training configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    eval: EvalArgs,
    /// Output directory for the reports and the table.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// A runtime failure, reported on standard error with exit code 1.
#[derive(Debug)]
pub struct CliError(String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn fail<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError(msg.into()))
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: std::fmt::Display> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError(format!("{}: {e}", what())))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let result = match cli.command {
        Command::GenData(c) => gen_data(c),
        Command::TrainLgf(c) => train_lgf_cmd(c),
        Command::TrainFgf(c) => train_fgf_cmd(c),
        Command::Generate(c) => generate(c),
        Command::Eval(c) => eval(c),
        Command::Compare(c) => compare(c),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Run record written beside every command's outputs.
#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    seed: u64,
    config: BTreeMap<String, String>,
    /// Per-input content hashes.
    inputs: BTreeMap<String, String>,
    /// Hash over all input hashes.
    input_hash: String,
    outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            input_hash: String::new(),
            outputs: vec![],
        }
    }

    fn config(mut self, text: &str) -> Self {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config.insert(k.to_string(), v.to_string());
            }
        }
        self
    }

    fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.into(), value.to_string());
        self
    }

    fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), content_hash(path)?);
        Ok(self)
    }

    fn write(mut self, path: &Path, outputs: &[&str]) -> Result<()> {
        let mut h = Sha256::new();
        for (k, v) in &self.inputs {
            h.update(format!("{k}\0{v}\n"));
        }
        self.input_hash = hex(&h.finalize());
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(path, text + "\n").context(|| format!("cannot write {}", path.display()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash: files hash as `blob <len>\0<bytes>`, directories
/// as `tree` over their sorted `name\0hash` entries.
pub fn content_hash(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    if meta.is_dir() {
        let mut names: Vec<_> = fs::read_dir(path)
            .context(|| format!("cannot list {}", path.display()))?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<std::result::Result<_, _>>()
            .context(|| format!("cannot list {}", path.display()))?;
        names.sort();
        let mut body = Vec::new();
        for name in names {
            let child = content_hash(&path.join(&name))?;
            body.extend_from_slice(name.to_string_lossy().as_bytes());
            body.push(0);
            body.extend_from_slice(child.as_bytes());
            body.push(b'\n');
        }
        h.update(format!("tree {}\0", body.len()));
        h.update(&body);
    } else {
        let bytes = fs::read(path).context(|| format!("cannot read {}", path.display()))?;
        h.update(format!("blob {}\0", bytes.len()));
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

/// Creates `dir`, refusing to touch a non-empty existing one unless
/// `force`, in which case it is emptied first.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let empty = dir.is_dir()
            && fs::read_dir(dir)
                .map(|mut d| d.next().is_none())
                .unwrap_or(false);
        if !empty {
            if !force {
                return fail(format!(
                    "{} already exists; pass --force to replace it",
                    dir.display()
                ));
            }
            let removed = if dir.is_dir() {
                fs::remove_dir_all(dir)
            } else {
                fs::remove_file(dir)
            };
            removed.context(|| format!("cannot remove {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).context(|| format!("cannot create {}", dir.display()))
}

fn prepare_out_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return fail(format!(
            "{} already exists; pass --force to replace it",
            path.display()
        ));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).context(|| format!("cannot write {}", path.display()))
}

fn gen_data(c: GenData) -> Result<()> {
    if c.episodes == 0 {
        return fail("--episodes must be positive");
    }
    prepare_out_dir(&c.out, c.common.force)?;
    let cfg = CorpusConfig {
        episodes: c.episodes,
        length: c.length,
        resolution: c.resolution,
        seed: c.seed,
        ..CorpusConfig::default()
    };
    let episodes = generate_corpus(&cfg, c.workers).context(|| "cannot generate corpus".into())?;
    export_dataset(&episodes, &c.out)
        .context(|| format!("cannot write corpus to {}", c.out.display()))?;
    log::info!("wrote {} episodes to {}", episodes.len(), c.out.display());
    Manifest::new("gen-data", c.seed)
        .set("episodes", c.episodes)
        .set("length", c.length)
        .set("resolution", c.resolution)
        .set("objects", format!("{:?}", cfg.objects))
        .set("actions", format!("{:?}", cfg.actions))
        .write(&c.out.join("manifest.json"), &["meta", "episode_*"])
}

/// Effective training configuration: defaults, then the file, then
/// `--set` overrides, then the dedicated flags.
fn train_config(
    path: Option<&Path>,
    set: &[String],
    data: Option<&Path>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).context(|| format!("cannot read {}", p.display()))?;
            TrainConfig::parse(&text).context(|| format!("{}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).context(|| "--set".into())?;
    }
    if let Some(d) = data {
        cfg.data = Some(d.to_path_buf());
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().context(|| "invalid configuration".into())?;
    Ok(cfg)
}

fn load_corpus(dir: &Path) -> Result<Vec<Episode>> {
    let eps = import_dataset(dir).context(|| format!("cannot load corpus {}", dir.display()))?;
    if eps.is_empty() {
        return fail(format!("corpus {} has no episodes", dir.display()));
    }
    Ok(eps)
}

fn split(eps: &[Episode], heldout: f64) -> (Vec<&Episode>, Vec<&Episode>) {
    let (tr, ho) = split_heldout(eps.len(), heldout);
    (
        tr.iter().map(|&i| &eps[i]).collect(),
        ho.iter().map(|&i| &eps[i]).collect(),
    )
}

fn corpus_path(cfg: &TrainConfig) -> Result<PathBuf> {
    cfg.data.clone().ok_or_else(|| {
        CliError("no corpus given; pass --data or set `data` in the configuration".into())
    })
}

fn layout_config(cfg: &TrainConfig, eps: &[Episode]) -> Result<LgfConfig> {
    let vocab = Arc::clone(eps[0].graph.vocab());
    let base = match cfg.model {
        ModelChoice::Gcn => LgfConfig::gcn(vocab),
        ModelChoice::Rnn => LgfConfig::rnn(vocab),
        other => {
            return fail(format!(
                "`{other}` has no parameters to train; use gcn or rnn"
            ))
        }
    };
    Ok(LgfConfig {
        dim: cfg.dim,
        layers: cfg.layers,
        aggregation: cfg.aggregation,
        seed: cfg.seed,
        ..base
    })
}

/// Trains a layout model on the training split of `eps` and writes its
/// checkpoint, metrics and loss log into `out`.
fn train_layout_into(
    cfg: &TrainConfig,
    eps: &[Episode],
    out: &Path,
) -> Result<(LayoutModel, MetricReport)> {
    let mut model =
        LayoutModel::new(layout_config(cfg, eps)?).context(|| "cannot build model".into())?;
    let (tr, ho) = split(eps, cfg.heldout);
    let outcome = train_lgf(&mut model, &tr, &ho, cfg).context(|| "training failed".into())?;
    save_model(&model, out).context(|| format!("cannot save model to {}", out.display()))?;
    outcome
        .report
        .save(&out.join("metrics.txt"))
        .context(|| "cannot write metrics".into())?;
    write_loss_log(&out.join("loss.csv"), &outcome.log)
        .context(|| "cannot write loss log".into())?;
    write_text(&out.join("train.cfg"), &cfg.to_text())?;
    Ok((model, outcome.report))
}

fn train_lgf_cmd(c: TrainLgf) -> Result<()> {
    let mut cfg = train_config(
        c.train.config.as_deref(),
        &c.train.set,
        c.train.data.as_deref(),
        c.train.seed,
    )?;
    if let Some(m) = c.model {
        cfg.model = m;
    }
    if !cfg.model.is_learned() {
        return fail(format!(
            "`{}` has no parameters to train; use gcn or rnn",
            cfg.model
        ));
    }
    let data = corpus_path(&cfg)?;
    let eps = load_corpus(&data)?;
    prepare_out_dir(&c.out, c.common.force)?;
    let (_, report) = train_layout_into(&cfg, &eps, &c.out)?;
    println!("{}", report.to_kv().trim_end());
    let mut m = Manifest::new("train-lgf", cfg.seed)
        .config(&cfg.to_text())
        .input(&data)?;
    if let Some(p) = &c.train.config {
        m = m.input(p)?;
    }
    m.write(
        &c.out.join("manifest.json"),
        &[
            "config",
            "params.ckpt",
            "metrics.txt",
            "metrics.json",
            "loss.csv",
            "train.cfg",
        ],
    )
}

fn load_layout(dir: &Path) -> Result<LayoutModel> {
    load_model(dir).context(|| format!("cannot load layout model {}", dir.display()))
}

fn train_fgf_cmd(c: TrainFgf) -> Result<()> {
    let cfg = train_config(
        c.train.config.as_deref(),
        &c.train.set,
        c.train.data.as_deref(),
        c.train.seed,
    )?;
    let data = corpus_path(&cfg)?;
    let eps = load_corpus(&data)?;
    let lgf = load_layout(&c.lgf)?;
    prepare_out_dir(&c.out, c.common.force)?;
    let (tr, ho) = split(&eps, cfg.heldout);
    let train = prepare_frames(&tr, &lgf).context(|| "cannot compute descriptors".into())?;
    let heldout = prepare_frames(&ho, &lgf).context(|| "cannot compute descriptors".into())?;
    let mut fgf = Fgf::new(FgfConfig {
        descriptor_dim: lgf.config().dim,
        map_dim: cfg.map_dim,
        channels: cfg.channels,
        seed: cfg.seed,
    })
    .context(|| "cannot build frame model".into())?;
    let init = if heldout.is_empty() {
        None
    } else {
        Some(eval_fgf(&fgf, &heldout, cfg.frame_batch).context(|| "evaluation failed".into())?)
    };
    let mut outcome =
        train_fgf(&mut fgf, &train, &heldout, &cfg).context(|| "training failed".into())?;
    if let (Some(init), Some(warp), Some(pixel), Some(copy)) = (
        init.as_ref().and_then(|r| r.get(WARP_L1)),
        outcome.report.get(WARP_L1),
        outcome.report.get(PIXEL_L1),
        outcome.report.get(COPY_L1),
    ) {
        outcome.report.set("init_warp_l1", init);
        outcome.report.set("flow_decrease", 1.0 - warp / init);
        outcome.report.set("gain_over_copy", 1.0 - pixel / copy);
    }
    save_fgf(&fgf, &c.out).context(|| format!("cannot save frame model to {}", c.out.display()))?;
    outcome
        .report
        .save(&c.out.join("metrics.txt"))
        .context(|| "cannot write metrics".into())?;
    write_loss_log(&c.out.join("loss.csv"), &outcome.log)
        .context(|| "cannot write loss log".into())?;
    write_text(&c.out.join("train.cfg"), &cfg.to_text())?;
    println!("{}", outcome.report.to_kv().trim_end());
    let mut m = Manifest::new("train-fgf", cfg.seed)
        .config(&cfg.to_text())
        .input(&data)?
        .input(&c.lgf)?;
    if let Some(p) = &c.train.config {
        m = m.input(p)?;
    }
    m.write(
        &c.out.join("manifest.json"),
        &[
            "config",
            "params.ckpt",
            "metrics.txt",
            "metrics.json",
            "loss.csv",
            "train.cfg",
        ],
    )
}

fn parse_layout(text: &str, n: usize) -> std::result::Result<Vec<BBox>, String> {
    let vals = text
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| format!("`{s}` is not a number"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if vals.len() != 4 * n {
        return Err(format!(
            "expected {} numbers (x y w h for {n} objects), found {}",
            4 * n,
            vals.len()
        ));
    }
    Ok(vals
        .chunks(4)
        .map(|c| BBox::new(c[0], c[1], c[2], c[3]))
        .collect())
}

fn generate(c: Generate) -> Result<()> {
    let text =
        fs::read_to_string(&c.graph).context(|| format!("cannot read {}", c.graph.display()))?;
    let graph = parse_graph(&text).context(|| format!("{}", c.graph.display()))?;
    let objects = world_objects(&graph).context(|| format!("{}", c.graph.display()))?;
    let first = match &c.layout {
        Some(p) => {
            let t = fs::read_to_string(p).context(|| format!("cannot read {}", p.display()))?;
            parse_layout(&t, objects.len()).context(|| format!("{}", p.display()))?
        }
        None => place_objects(&mut ChaCha8Rng::seed_from_u64(c.seed), &objects)
            .context(|| "cannot place the graph's objects".into())?,
    };
    let frame = match &c.first_frame {
        Some(p) => {
            let bytes = fs::read(p).context(|| format!("cannot read {}", p.display()))?;
            Frame::from_ppm(&bytes).context(|| format!("{}", p.display()))?
        }
        None => rasterize(
            &first,
            &objects,
            &render_states(&graph)[0],
            c.resolution,
            c.resolution,
        ),
    };
    let mut lgf = load_layout(&c.lgf)?;
    let fgf =
        load_fgf(&c.fgf).context(|| format!("cannot load frame model {}", c.fgf.display()))?;
    if fgf.config().descriptor_dim != lgf.config().dim {
        return fail(format!(
            "frame model expects {}-dim descriptors but the layout model produces {}",
            fgf.config().descriptor_dim,
            lgf.config().dim
        ));
    }
    prepare_out_dir(&c.out, c.common.force)?;
    let states = rollout(&mut lgf, &graph, &first).context(|| "layout rollout failed".into())?;
    let frames =
        generate_frames(&fgf, &states, &frame).context(|| "frame synthesis failed".into())?;
    write_ppm_sequence(&frames, &c.out).context(|| "cannot write frames".into())?;
    write_raw_video(&frames, &c.out.join("video.raw")).context(|| "cannot write video".into())?;
    let layouts: String = states
        .iter()
        .map(|s| {
            let cells: Vec<String> = s
                .boxes
                .iter()
                .flat_map(|b| b.to_array())
                .map(|v| v.to_string())
                .collect();
            cells.join(" ") + "\n"
        })
        .collect();
    write_text(&c.out.join("layouts.txt"), &layouts)?;
    log::info!("wrote {} frames to {}", frames.len(), c.out.display());
    let mut m = Manifest::new("generate", c.seed)
        .set("resolution", frame.width())
        .input(&c.graph)?
        .input(&c.lgf)?
        .input(&c.fgf)?;
    for p in [&c.first_frame, &c.layout].into_iter().flatten() {
        m = m.input(p)?;
    }
    m.write(
        &c.out.join("manifest.json"),
        &["NNN.ppm", "video.raw", "layouts.txt"],
    )
}

/// Splits `0..n` into `workers` contiguous chunks and maps them on scoped
/// threads, keeping the order of results.
fn parallel_chunks<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(std::ops::Range<usize>) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let workers = workers.clamp(1, n.max(1));
    let size = n.div_ceil(workers).max(1);
    let ranges: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges.into_iter().map(|r| scope.spawn(|| f(r))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// A model to evaluate: a baseline or a loaded checkpoint.
enum Evaluated {
    Rule,
    Random(u64),
    Learned(Box<LayoutModel>),
}

impl Evaluated {
    fn load(choice: ModelChoice, ckpt: Option<&Path>, seed: u64) -> Result<Self> {
        match (choice, ckpt) {
            (ModelChoice::Rule, _) => Ok(Evaluated::Rule),
            (ModelChoice::Random, _) => Ok(Evaluated::Random(seed)),
            (kind, Some(dir)) => {
                let model = load_layout(dir)?;
                if model.config().kind.to_string() != kind.to_string() {
                    return fail(format!(
                        "{} holds a {} model, not {kind}",
                        dir.display(),
                        model.config().kind
                    ));
                }
                Ok(Evaluated::Learned(Box::new(model)))
            }
            (kind, None) => fail(format!("`{kind}` needs a checkpoint; pass --ckpt")),
        }
    }

    /// Layout rollouts for every episode, in order. The random baseline
    /// reseeds per episode so results do not depend on the worker count.
    fn layouts(&self, eps: &[&Episode], workers: usize) -> Result<Vec<Vec<Vec<BBox>>>> {
        parallel_chunks(eps.len(), workers, |range| match self {
            Evaluated::Learned(model) => {
                let jobs: Vec<_> = eps[range]
                    .iter()
                    .map(|e| (&e.graph, &e.layouts[0][..]))
                    .collect();
                Ok(rollout_many(&**model, &jobs)
                    .context(|| "rollout failed".into())?
                    .into_iter()
                    .map(|s| s.into_iter().map(|s| s.boxes).collect())
                    .collect())
            }
            _ => range
                .map(|k| {
                    let mut lgf = self.baseline(k);
                    crate::layout::rollout_boxes(lgf.as_mut(), &eps[k].graph, &eps[k].layouts[0])
                        .context(|| "rollout failed".into())
                })
                .collect(),
        })
    }

    fn baseline(&self, episode: usize) -> Box<dyn Lgf> {
        match self {
            Evaluated::Random(seed) => Box::new(RandomLgf::new(seed.wrapping_add(episode as u64))),
            _ => Box::new(RuleLgf::default()),
        }
    }

    fn predictor(&mut self) -> Box<dyn Lgf + '_> {
        match self {
            Evaluated::Learned(model) => Box::new(LearnedRef(model)),
            other => other.baseline(0),
        }
    }
}

struct LearnedRef<'a>(&'a mut LayoutModel);

impl Lgf for LearnedRef<'_> {
    fn predict(
        &mut self,
        input: &crate::layout::StepInput,
    ) -> std::result::Result<LayoutState, crate::layout::LayoutError> {
        self.0.predict(input)
    }
}

/// Layout metrics, experiment suite and (with a frame model) pixel
/// metrics of one model.
fn evaluate(
    model: &mut Evaluated,
    eps: &[Episode],
    args: &EvalArgs,
    fgf: Option<&Fgf>,
) -> Result<MetricReport> {
    let chosen: Vec<&Episode> = if args.all {
        eps.iter().collect()
    } else {
        split(eps, args.heldout).1
    };
    if chosen.is_empty() {
        return fail("no episodes to evaluate; lower --heldout or pass --all");
    }
    let pred = model.layouts(&chosen, args.workers)?;
    let graphs: Vec<_> = chosen.iter().map(|e| &e.graph).collect();
    let gt: Vec<_> = chosen.iter().map(|e| e.layouts.clone()).collect();
    let mut report = eval_layout(&graphs, &pred, &gt).context(|| "scoring failed".into())?;
    let mut predictor = model.predictor();
    let exp = run_experiments(
        &mut Rollout(predictor.as_mut()),
        args.timing_pairs,
        args.composite_episodes,
        args.seed,
    )
    .context(|| "experiment suite failed".into())?;
    drop(predictor);
    for k in exp.keys() {
        report.set(k, exp.get(k).unwrap_or(f64::NAN));
    }
    if let (Some(fgf), Evaluated::Learned(lgf)) = (fgf, &*model) {
        let frames =
            prepare_frames(&chosen, &**lgf).context(|| "cannot compute descriptors".into())?;
        let px = eval_fgf(fgf, &frames, 8).context(|| "frame evaluation failed".into())?;
        for k in [PIXEL_L1, WARP_L1, COPY_L1] {
            report.set(k, px.get(k).unwrap_or(f64::NAN));
        }
    }
    Ok(report)
}

fn eval(c: Eval) -> Result<()> {
    let report_path = c
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("report-{}.txt", c.model)));
    prepare_out_file(&report_path, c.common.force)?;
    let eps = load_corpus(&c.eval.data)?;
    let mut model = Evaluated::load(c.model, c.ckpt.as_deref(), c.eval.seed)?;
    let fgf = match &c.fgf {
        Some(p) => {
            Some(load_fgf(p).context(|| format!("cannot load frame model {}", p.display()))?)
        }
        None => None,
    };
    let report = evaluate(&mut model, &eps, &c.eval, fgf.as_ref())?;
    report
        .save(&report_path)
        .context(|| "cannot write report".into())?;
    println!("{}", report.to_kv().trim_end());
    let mut m = eval_manifest("eval", &c.eval)?.set("model", c.model);
    for p in [&c.ckpt, &c.fgf].into_iter().flatten() {
        m = m.input(p)?;
    }
    let name = report_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    m.write(
        &report_path.with_extension("manifest.json"),
        &[&name, &format!("{name} (.json)")],
    )
}

fn eval_manifest(command: &str, a: &EvalArgs) -> Result<Manifest> {
    Manifest::new(command, a.seed)
        .set("heldout", a.heldout)
        .set("all", a.all)
        .set("workers", a.workers)
        .set("timing_pairs", a.timing_pairs)
        .set("composite_episodes", a.composite_episodes)
        .input(&a.data)
}

/// Rows sorted by mIOU, best first, as a Markdown table.
pub fn comparison_table(rows: &[(ModelChoice, MetricReport)]) -> String {
    let mut rows: Vec<_> = rows.iter().collect();
    rows.sort_by(|a, b| {
        let m = |r: &MetricReport| r.get(MIOU).unwrap_or(f64::NEG_INFINITY);
        m(&b.1).total_cmp(&m(&a.1))
    });
    let cols = [
        MIOU,
        RECALL_03,
        RECALL_05,
        "timing_accuracy",
        "swap_success",
        "huddle_success",
    ];
    let mut out = format!(
        "| model | {} |\n|---|{}\n",
        cols.join(" | "),
        "---|".repeat(cols.len())
    );
    for (kind, r) in rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|k| r.get(k).map_or("-".into(), |v| format!("{v:.4}")))
            .collect();
        out.push_str(&format!("| {kind} | {} |\n", cells.join(" | ")));
    }
    out
}

fn compare(c: Compare) -> Result<()> {
    let mut ckpts = BTreeMap::new();
    for kv in &c.ckpts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError(format!("--ckpt expects KIND=DIR, got `{kv}`")))?;
        let kind: ModelChoice = k.parse().map_err(CliError)?;
        ckpts.insert(kind.to_string(), PathBuf::from(v));
    }
    let eps = load_corpus(&c.eval.data)?;
    prepare_out_dir(&c.out, c.common.force)?;
    let mut rows = Vec::new();
    let mut m = eval_manifest("compare", &c.eval)?;
    for &kind in &c.models {
        let ckpt = match ckpts.get(&kind.to_string()) {
            Some(p) => {
                m = m.input(p)?;
                Some(p.clone())
            }
            None if kind.is_learned() => {
                let mut cfg = train_config(c.config.as_deref(), &c.set, Some(&c.eval.data), None)?;
                cfg.model = kind;
                cfg.heldout = c.eval.heldout;
                let dir = c.out.join(kind.to_string());
                fs::create_dir_all(&dir).context(|| format!("cannot create {}", dir.display()))?;
                log::info!("training {kind} into {}", dir.display());
                train_layout_into(&cfg, &eps, &dir)?;
                m = m.config(&cfg.to_text());
                Some(dir)
            }
            None => None,
        };
        let mut model = Evaluated::load(kind, ckpt.as_deref(), c.eval.seed)?;
        let report = evaluate(&mut model, &eps, &c.eval, None)?;
        report
            .save(&c.out.join(format!("{kind}.txt")))
            .context(|| "cannot write report".into())?;
        rows.push((kind, report));
    }
    if let Some(p) = &c.config {
        m = m.input(p)?;
    }
    let table = comparison_table(&rows);
    write_text(&c.out.join("table.md"), &table)?;
    print!("{table}");
    let models: Vec<String> = c.models.iter().map(|k| k.to_string()).collect();
    m.set("models", models.join(",")).write(
        &c.out.join("manifest.json"),
        &["table.md", "<model>.txt", "<model>.json"],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_text_needs_four_numbers_per_object() {
        assert_eq!(
            parse_layout("0.5 0.5 0.1 0.2\n", 1).unwrap(),
            vec![BBox::new(0.5, 0.5, 0.1, 0.2)]
        );
        assert!(parse_layout("0.5 0.5 0.1", 1).is_err());
        assert!(parse_layout("a b c d", 1).is_err());
    }

    #[test]
    fn chunks_keep_order_for_any_worker_count() {
        for w in 1..6 {
            let v = parallel_chunks(7, w, |r| Ok(r.collect())).unwrap();
            assert_eq!(v, (0..7).collect::<Vec<usize>>());
        }
        assert!(parallel_chunks(0, 3, |r| Ok(r.collect::<Vec<usize>>()))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn table_sorts_by_miou() {
        let r = |m: f64| {
            let mut r = MetricReport::new();
            r.set(MIOU, m);
            r
        };
        let t = comparison_table(&[(ModelChoice::Rule, r(0.5)), (ModelChoice::Gcn, r(0.9))]);
        let gcn = t.find("| gcn").unwrap();
        assert!(gcn < t.find("| rule").unwrap());
        assert!(t.contains("0.9000"));
    }
}
