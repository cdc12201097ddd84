//! The `hydraprompt` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hydraprompt_core::apa::PromptMode;
use hydraprompt_core::objectives::{MaskStrategy, ScBranches};
use hydraprompt_core::pipeline::gradcheck::{check_model, ModelCheckConfig};
use hydraprompt_core::pipeline::{evaluate, train, Model, Optimizer, TrainConfig, FAKE};
use serde::de::DeserializeOwned;

use crate::checkpoint;
use crate::dataset::{self, eval_subsets, flatten, load_split};
use crate::error::Error;
use crate::ppm;
use crate::preprocess::preprocess;
use crate::report::{self, EmbeddingRow, JsonlLog};
use crate::synth::GenSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Seed used when neither a flag nor a config file sets one.
pub const SEED_ENV: &str = "HYDRA_SEED";

/// Tolerance of the `gradcheck` subcommand.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "hydraprompt", version, about = "Asymmetric prompt learning for synthetic-image detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic train and test splits.
    GenData(GenArgs),
    /// Train a detector and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a test split; writes report.csv and report.json.
    Eval(EvalArgs),
    /// Classify individual images.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients on a random batch.
    Gradcheck(GradcheckArgs),
    /// Export per-sample embeddings of a split as CSV.
    DumpEmbeddings(DumpArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory; receives train/ and test/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Generator spec as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    real_train: Option<usize>,
    /// Training images per seen fake family.
    #[arg(long)]
    fake_train: Option<usize>,
    /// Test images per subset.
    #[arg(long)]
    test: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long, value_name = "static|adaptive", value_parser = parse_enum::<PromptMode>)]
    real_prompt: Option<PromptMode>,
    #[arg(long, value_name = "static|adaptive", value_parser = parse_enum::<PromptMode>)]
    fake_prompt: Option<PromptMode>,
    /// Image block (1-based) feeding the cue vector.
    #[arg(long)]
    cue_layer: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, value_name = "cluster|individual", value_parser = parse_enum::<MaskStrategy>)]
    mask_real: Option<MaskStrategy>,
    #[arg(long, value_name = "cluster|individual", value_parser = parse_enum::<MaskStrategy>)]
    mask_fake: Option<MaskStrategy>,
    #[arg(long, value_name = "image|text|both", value_parser = parse_enum::<ScBranches>)]
    sc_branches: Option<ScBranches>,
    /// Drop the alignment term.
    #[arg(long)]
    no_align: bool,
    /// Memory bank rows; 0 disables the bank.
    #[arg(long)]
    bank_capacity: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training split (a directory with manifest.json, or a gen-data root).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training configuration as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_name = "sgd|adam", value_parser = parse_enum::<Optimizer>)]
    optimizer: Option<Optimizer>,
    /// JSONL training log; defaults to stdout.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overwrite an existing checkpoint.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test split (a directory with manifest.json, or a gen-data root).
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving report.csv and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Binary P6 images.
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Coordinates probed per trainable tensor.
    #[arg(long, default_value_t = 2)]
    coords: usize,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `z`, `Tr`, `Tf`, or `layer<k>` for the mean-pooled output of image block k.
    #[arg(long, value_name = "z|Tr|Tf|layer<k>")]
    select: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("invalid value `{s}`"))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            Error::Core(hydraprompt_core::Error::Config(msg)) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

impl From<hydraprompt_core::Error> for Failure {
    fn from(e: hydraprompt_core::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::DumpEmbeddings(a) => dump_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Flag, then config file, then `HYDRA_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Reads a JSON config, returning it with the seed it sets (if any).
fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<(T, Option<u64>)> {
    let Some(path) = path else {
        return Ok((T::default(), None));
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e)))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let seed = match value.get("seed") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| Failure::Usage(format!("{}: seed must be an unsigned integer", path.display())))?,
        ),
    };
    let cfg = serde_json::from_value(value).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, seed))
}

/// `root` itself when it holds a manifest, else `root/<split>`.
fn split_root(root: &Path, split: &str) -> PathBuf {
    if root.join(dataset::MANIFEST).is_file() {
        root.to_path_buf()
    } else {
        root.join(split)
    }
}

fn gen_data(a: GenArgs) -> CliResult<i32> {
    let (mut spec, cfg_seed): (GenSpec, _) = read_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, cfg_seed)?;
    if let Some(n) = a.real_train {
        spec.counts.real_train = n;
    }
    if let Some(n) = a.fake_train {
        spec.counts.fake_train = n;
    }
    if let Some(n) = a.test {
        spec.counts.test = n;
    }
    spec.validate()?;
    let data = dataset::gen_dataset(&a.out, &spec, seed, a.force)?;
    for (split, subsets) in [("train", &data.train), ("test", &data.test)] {
        for s in subsets {
            println!("{split}/{}: {} images", s.name, s.images.len());
        }
    }
    for (name, e) in &data.hf_energy {
        println!("hf-energy {name}: {e:.6}");
    }
    Ok(EXIT_OK)
}

fn apply_model_flags(cfg: &mut TrainConfig, f: &ModelFlags) {
    let apa = &mut cfg.model.apa;
    if let Some(m) = f.real_prompt {
        apa.real_prompt = m;
    }
    if let Some(m) = f.fake_prompt {
        apa.fake_prompt = m;
    }
    if let Some(k) = f.cue_layer {
        apa.cue_layer = k;
    }
    let loss = &mut cfg.loss;
    if let Some(t) = f.tau {
        loss.tau = t;
    }
    if let Some(l) = f.lambda1 {
        loss.lambda1 = l;
    }
    if let Some(l) = f.lambda2 {
        loss.lambda2 = l;
    }
    if let Some(m) = f.mask_real {
        loss.mask_real = m;
    }
    if let Some(m) = f.mask_fake {
        loss.mask_fake = m;
    }
    if let Some(b) = f.sc_branches {
        loss.sc_branches = b;
    }
    if f.no_align {
        loss.align = false;
    }
    if let Some(c) = f.bank_capacity {
        cfg.bank_capacity = (c > 0).then_some(c);
    }
}

fn train_cmd(a: TrainArgs) -> CliResult<i32> {
    let (mut cfg, cfg_seed): (TrainConfig, _) = read_config(a.config.as_deref())?;
    cfg.seed = resolve_seed(a.seed, cfg_seed)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    apply_model_flags(&mut cfg, &a.model);
    cfg.validate()?;
    if a.out.exists() && !a.force {
        return Err(Failure::Runtime(Error::Config(format!(
            "{} exists (pass --force to overwrite)",
            a.out.display()
        ))));
    }

    let split = load_split(&split_root(&a.data, "train"), cfg.resize, cfg.crop)?;
    let samples = flatten(&split.subsets);
    let mut log = a.log.as_deref().map(JsonlLog::create).transpose()?;
    let mut log_error = None;
    let ck = train(&cfg, &samples, |epoch| {
        let written = match &mut log {
            Some(l) => l.append(epoch),
            None => serde_json::to_string(epoch).map(|s| println!("{s}")).map_err(Error::from),
        };
        if let Err(e) = written {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(Failure::Runtime(e));
    }
    checkpoint::save(&a.out, &ck)?;
    eprintln!("wrote {} after {} steps", a.out.display(), ck.step);
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> CliResult<(TrainConfig, Model)> {
    let ck = checkpoint::load(path).map_err(Failure::Runtime)?;
    let model = Model::from_checkpoint(&ck)?;
    Ok((ck.config, model))
}

fn eval_cmd(a: EvalArgs) -> CliResult<i32> {
    let (cfg, model) = load_model(&a.checkpoint)?;
    let split = load_split(&split_root(&a.data, "test"), cfg.resize, cfg.crop)?;
    let report = evaluate(&model, &eval_subsets(&split.subsets))?;
    report::write_report(&a.out, &report)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report::report_csv(&report)?);
    Ok(EXIT_OK)
}

fn predict_cmd(a: PredictArgs) -> CliResult<i32> {
    let (cfg, model) = load_model(&a.checkpoint)?;
    for path in &a.images {
        let img = preprocess(&ppm::read_image(path)?, cfg.resize, cfg.crop)?;
        let p = model.predict(&img)?;
        let label = if p.label == FAKE { "fake" } else { "real" };
        println!("{}\t{label}\t{}\t{}", path.display(), p.o_r, p.o_f);
    }
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs) -> CliResult<i32> {
    let cfg = ModelCheckConfig {
        seed: resolve_seed(a.seed, None)?,
        batch: a.batch,
        coords_per_param: a.coords,
        ..ModelCheckConfig::default()
    };
    let report = check_model(&cfg)?;
    for t in &report.terms {
        println!(
            "{:<10} max-rel-error {:.3e} ({} probes, worst `{}`)",
            t.term.name(),
            t.max_rel_error,
            t.probed,
            t.worst_param
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error: {worst:.6e}");
    Ok(if worst < GRADCHECK_TOLERANCE { EXIT_OK } else { EXIT_RUNTIME })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Selector {
    Z,
    Tr,
    Tf,
    Layer(usize),
}

fn parse_selector(s: &str) -> Option<Selector> {
    match s {
        "z" => Some(Selector::Z),
        "Tr" => Some(Selector::Tr),
        "Tf" => Some(Selector::Tf),
        _ => s.strip_prefix("layer")?.parse().ok().map(Selector::Layer),
    }
}

fn dump_cmd(a: DumpArgs) -> CliResult<i32> {
    let sel = parse_selector(&a.select)
        .ok_or_else(|| Failure::Usage(format!("unknown selector `{}` (z, Tr, Tf or layer<k>)", a.select)))?;
    let (cfg, model) = load_model(&a.checkpoint)?;
    let blocks = cfg.model.encoder.image.blocks;
    if let Selector::Layer(k) = sel {
        if k == 0 || k > blocks {
            return Err(Failure::Usage(format!("layer must lie in 1..={blocks}, got {k}")));
        }
    }
    let split = load_split(&split_root(&a.data, "test"), cfg.resize, cfg.crop)?;
    let det = model.detector();
    let mut rows = Vec::new();
    for (entry, samples) in &split.subsets {
        for s in samples {
            let fwd = det.forward(&s.image, model.params(), model.anchors())?;
            let values = match sel {
                Selector::Z => fwd.centres.z.data().to_vec(),
                Selector::Tr => fwd.centres.t_r.data().to_vec(),
                Selector::Tf => fwd.centres.t_f.data().to_vec(),
                Selector::Layer(k) => hydraprompt_core::apa::extract_cues(det.tap(&fwd, k)?)?.into_data(),
            };
            rows.push((s.id.clone(), entry.name.clone(), s.label, values));
        }
    }
    let n = report::write_embeddings(
        &a.out,
        rows.iter().map(|(id, subset, label, v)| EmbeddingRow {
            id,
            subset,
            label: *label,
            values: v,
        }),
    )?;
    eprintln!("wrote {n} rows to {}", a.out.display());
    Ok(EXIT_OK)
}
