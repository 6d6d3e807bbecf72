//! Command-line front end: `gen`, `train`, `infer`, `refine` and `eval`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{map_table, MapTable};
use crate::model::{prepare_items, refine, DualPoseNet, ModelConfig, RefineConfig, TrainConfig, Trainer};
use crate::nn::checkpoint;
use crate::synthdata::{
    generate, read_dataset, read_predictions, write_dataset, write_predictions, GenConfig, Prediction,
    RenderConfig, Sample,
};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Dataset generation settings; the run seed picks the shape instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub categories: Vec<String>,
    pub instances: u64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub render: RenderConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        DataConfig {
            train_count: 50,
            test_count: 50,
            categories: g.categories,
            instances: g.instances,
            min_scale: g.min_scale,
            max_scale: g.max_scale,
            render: g.render,
        }
    }
}

impl DataConfig {
    pub fn gen_config(&self, seed: u64, split: u64, count: usize) -> GenConfig {
        GenConfig {
            seed,
            split,
            count,
            categories: self.categories.clone(),
            instances: self.instances,
            min_scale: self.min_scale,
            max_scale: self.max_scale,
            render: self.render.clone(),
        }
    }
}

/// Paths a command may take from the config instead of flags. Not part of
/// the provenance hash, so moving outputs does not change it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub data: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `train` or `test`: which file of a dataset directory to read.
    pub split: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            split: "test".into(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.paths = PathConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "dualposenet", version, about = "Object pose and size from RGB-D crops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and test datasets.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Predict poses with a trained model.
    Infer(InferArgs),
    /// Predict poses with per-crop test-time refinement.
    Refine(RefineArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory or file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Explicit decoder output.
    Direct,
    /// Similarity alignment of the implicit decoder output.
    Align,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "direct")]
    pub mode: Mode,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth dataset directory or file.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// CSV table to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the CSV; defaults to the prediction file name.
    #[arg(long)]
    pub run: Option<String>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn resolve(config: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::Config(format!("missing --{name}")))
}

fn dataset_file(path: &Path, split: &str) -> Result<PathBuf> {
    if path.is_dir() {
        let name = match split {
            "train" => TRAIN_FILE,
            "test" => TEST_FILE,
            other => return Err(Error::Config(format!("unknown split '{other}'"))),
        };
        Ok(path.join(name))
    } else {
        Ok(path.to_path_buf())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_run_record(path: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let record = serde_json::json!({
        "command": command,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": { "seed": cfg.seed, "split": cfg.split, "data": cfg.data, "model": cfg.model,
                    "train": cfg.train, "refine": cfg.refine },
    });
    write_file(path, &format!("{}\n", serde_json::to_string_pretty(&record).expect("json")))
}

/// Writes a model and its configuration sidecar.
pub fn save_model(net: &DualPoseNet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    checkpoint::save(net.params(), path)?;
    let json = serde_json::to_string_pretty(net.config()).expect("json");
    write_file(&sibling(path, ".json"), &format!("{json}\n"))
}

pub fn load_model(path: &Path) -> Result<DualPoseNet> {
    let side = sibling(path, ".json");
    let text = fs::read_to_string(&side).map_err(|e| io_error(&side, e))?;
    let config: ModelConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    DualPoseNet::from_params(config, checkpoint::load(path)?)
}

fn sorted(mut preds: Vec<Prediction>) -> Vec<Prediction> {
    preds.sort_by(|a, b| a.id.cmp(&b.id));
    preds
}

fn base_prediction(s: &Sample, pose: crate::geometry::Pose) -> Prediction {
    Prediction {
        id: s.crop.id.clone(),
        category: s.crop.category,
        instance: s.crop.instance,
        symmetry: s.annotation.symmetry,
        pose,
        confidence: 1.0,
        refine_iters: None,
        refine_loss: None,
    }
}

pub fn infer_samples(net: &DualPoseNet, samples: &[Sample], mode: Mode) -> Result<Vec<Prediction>> {
    let preds = samples
        .par_iter()
        .map(|s| {
            let pose = match mode {
                Mode::Direct => net.predict(&s.crop)?,
                Mode::Align => net.predict_via_alignment(&s.crop)?,
            };
            Ok(base_prediction(s, pose))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sorted(preds))
}

/// Refined predictions plus a CSV trace `id,step,loss`.
pub fn refine_samples(
    net: &DualPoseNet,
    samples: &[Sample],
    cfg: &RefineConfig,
) -> Result<(Vec<Prediction>, String)> {
    let mut out = samples
        .par_iter()
        .map(|s| {
            let r = refine(net, &s.crop, cfg)?;
            let mut p = base_prediction(s, r.pose);
            p.refine_iters = Some(r.iterations);
            p.refine_loss = Some(r.loss);
            Ok((p, r.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut trace = String::from("id,step,loss\n");
    for (p, t) in &out {
        for (k, l) in t.iter().enumerate() {
            let _ = writeln!(trace, "{},{k},{l:e}", p.id);
        }
    }
    Ok((out.into_iter().map(|(p, _)| p).collect(), trace))
}

fn cmd_gen(a: GenArgs) -> Result<String> {
    let mut cfg = resolve(a.common.config.as_ref(), a.common.seed)?;
    if let Some(n) = a.train_count {
        cfg.data.train_count = n;
    }
    if let Some(n) = a.test_count {
        cfg.data.test_count = n;
    }
    let out = required(a.out, &cfg.paths.out, "out")?;
    let train = generate(&cfg.data.gen_config(cfg.seed, 0, cfg.data.train_count))?;
    let test = generate(&cfg.data.gen_config(cfg.seed, 1, cfg.data.test_count))?;
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    write_dataset(&out.join(TRAIN_FILE), &train)?;
    write_dataset(&out.join(TEST_FILE), &test)?;
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "train": train.len(),
        "test": test.len(),
        "categories": cfg.data.categories,
        "files": { "train": TRAIN_FILE, "test": TEST_FILE },
    });
    write_file(&out.join("manifest.json"), &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")))?;
    write_run_record(&out.join("run.json"), "gen", &cfg)?;
    Ok(format!("wrote {} train and {} test crops to {}", train.len(), test.len(), out.display()))
}

fn cmd_train(a: TrainArgs) -> Result<String> {
    let mut cfg = resolve(a.common.config.as_ref(), a.common.seed)?;
    cfg.train.iterations = a.iterations.unwrap_or(cfg.train.iterations);
    cfg.train.lr = a.lr.unwrap_or(cfg.train.lr);
    cfg.train.batch_size = a.batch_size.unwrap_or(cfg.train.batch_size);
    cfg.train.lambda = a.lambda.unwrap_or(cfg.train.lambda);
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let samples = read_dataset(&dataset_file(&data, "train")?)?;
    let net = DualPoseNet::new(cfg.model.clone(), cfg.seed)?;
    let items = prepare_items(&net, &samples)?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;
    let mut log = String::from("iteration,lr,explicit,implicit,total\n");
    let lr_at = |it| cfg.train.lr_at(it);
    trainer.fit(&items, cfg.seed, |it, b| {
        let _ = writeln!(log, "{it},{:e},{:e},{:e},{:e}", lr_at(it), b.explicit, b.implicit, b.total);
    })?;
    save_model(&trainer.net, &out)?;
    write_file(&sibling(&out, ".log.csv"), &log)?;
    write_run_record(&sibling(&out, ".run.json"), "train", &cfg)?;
    Ok(format!("trained {} iterations on {} crops, wrote {}", trainer.iteration(), items.len(), out.display()))
}

fn cmd_infer(a: InferArgs) -> Result<String> {
    let mut cfg = resolve(a.common.config.as_ref(), a.common.seed)?;
    cfg.split = a.split.unwrap_or(cfg.split);
    let ckpt = required(a.ckpt, &cfg.paths.ckpt, "ckpt")?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let net = load_model(&ckpt)?;
    cfg.model = net.config().clone();
    let samples = read_dataset(&dataset_file(&data, &cfg.split)?)?;
    let preds = infer_samples(&net, &samples, a.mode)?;
    write_predictions(&out, &preds)?;
    let mode = match a.mode {
        Mode::Direct => "infer-direct",
        Mode::Align => "infer-align",
    };
    write_run_record(&sibling(&out, ".run.json"), mode, &cfg)?;
    Ok(format!("wrote {} predictions to {}", preds.len(), out.display()))
}

fn cmd_refine(a: RefineArgs) -> Result<String> {
    let mut cfg = resolve(a.common.config.as_ref(), a.common.seed)?;
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.refine.lr = a.lr.unwrap_or(cfg.refine.lr);
    cfg.refine.tolerance = a.eps.unwrap_or(cfg.refine.tolerance);
    cfg.refine.max_iters = a.max_iters.unwrap_or(cfg.refine.max_iters);
    cfg.refine.validate()?;
    let ckpt = required(a.ckpt, &cfg.paths.ckpt, "ckpt")?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let net = load_model(&ckpt)?;
    cfg.model = net.config().clone();
    let samples = read_dataset(&dataset_file(&data, &cfg.split)?)?;
    let (preds, trace) = refine_samples(&net, &samples, &cfg.refine)?;
    write_predictions(&out, &preds)?;
    write_file(&sibling(&out, ".trace.csv"), &trace)?;
    write_run_record(&sibling(&out, ".run.json"), "refine", &cfg)?;
    Ok(format!("wrote {} refined predictions to {}", preds.len(), out.display()))
}

fn cmd_eval(a: EvalArgs) -> Result<(String, MapTable)> {
    let mut cfg = resolve(a.common.config.as_ref(), a.common.seed)?;
    cfg.split = a.split.unwrap_or(cfg.split);
    let pred = required(a.pred, &cfg.paths.pred, "pred")?;
    let gt = required(a.gt, &cfg.paths.data, "gt")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let preds = read_predictions(&pred)?;
    let gts = read_dataset(&dataset_file(&gt, &cfg.split)?)?;
    let table = map_table(&preds, &gts);
    let run = a.run.unwrap_or_else(|| {
        pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    write_file(&out, &format!("{}\n{}\n", MapTable::csv_header(), table.csv_row(&run)))?;
    write_run_record(&sibling(&out, ".run.json"), "eval", &cfg)?;
    Ok((table.to_text(), table))
}

/// 0 success, 1 user or configuration error, 2 internal fault.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::ParseError { .. }
        | Error::Config(_)
        | Error::InvalidCategory(_)
        | Error::Checkpoint(_) => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("DPN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("DPN_THREADS must be a positive integer, got '{v}'")))?;
    // A pool already installed by the host process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<String> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a).map(|(text, _)| text.trim_end().to_string()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys_and_hash_ignores_paths() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
        let a: RunConfig = serde_json::from_str(r#"{"seed": 3, "paths": {"out": "x"}}"#).unwrap();
        let b: RunConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(a.sha256(), RunConfig::default().sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::ParseError { line: 1, message: "x".into() }), 1);
        assert_eq!(exit_code(&Error::RefineFault("x".into())), 2);
        assert_eq!(main_with_args(["dualposenet", "bogus"]), 1);
        assert_eq!(main_with_args(["dualposenet", "train"]), 1);
    }

    #[test]
    fn sibling_appends_to_file_name() {
        assert_eq!(sibling(Path::new("a/m.dpn"), ".json"), PathBuf::from("a/m.dpn.json"));
    }
}
