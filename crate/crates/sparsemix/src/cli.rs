//! Command-line front end. Every run is driven by a flat key=value config
//! file plus command-line flags of the same names; flags win. Each output
//! artifact gets a `<path>.config` companion recording the fully resolved
//! settings so any result can be reproduced.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::dataio;
use crate::grad::AttentionGrad;
use crate::init::{initialize, InitMethod};
use crate::metrics;
use crate::model::{Dataset, HyperParams, MixtureModel, PriorMode, Solver, StepMode};
use crate::objective::{cluster_dataset, write_report_csv, ClusteringReport};
use crate::trainer::{train, write_history_csv, TrainConfig};
use crate::{Error, Result};

/// Salt so data masking consumes a different stream than init/shuffling.
const MASK_SEED_SALT: u64 = 0xC2B2_AE3D_27D4_EB4F;

#[derive(Parser, Debug)]
#[command(
    name = "sparsemix",
    version,
    about = "Clustering with a mixture of sparse-coding auto-encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cluster a data subset and build initial dictionaries from it
    Init(CommonArgs),
    /// Train a checkpoint on a dataset
    Train(CommonArgs),
    /// Cluster a dataset with a checkpoint; write per-sample report CSV
    Eval(CommonArgs),
    /// Train and evaluate one model per sparsity value (shared init)
    #[command(name = "sweep-lambda")]
    SweepLambda(CommonArgs),
    /// Sample a synthetic dataset from a checkpoint
    Sample(CommonArgs),
}

/// One flag per config key; unset flags fall back to the config file, then
/// to built-in defaults.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Flat key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset path (IDX images or MXDS container, detected by magic)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IDX label file paired with --data
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Model checkpoint to start from
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Primary output path (checkpoint or CSV, per subcommand)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// History CSV path (train); defaults to <out>.history.csv
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    /// L1 penalty weight (lambda)
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// fixed | auto
    #[arg(long)]
    pub step_mode: Option<String>,
    /// Unrolled encoder iterations
    #[arg(long)]
    pub iters: Option<usize>,
    /// ista | fista
    #[arg(long)]
    pub solver: Option<String>,
    /// fixed | learnable
    #[arg(long)]
    pub prior_mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shuffle: Option<bool>,
    /// full | stop
    #[arg(long)]
    pub attention_grad: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// kmeans | spectral | ssc_lite
    #[arg(long)]
    pub init_method: Option<String>,
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Fraction of samples that receive a random mask
    #[arg(long)]
    pub mask_frac_images: Option<f64>,
    /// Fraction of coordinates hidden in each masked sample
    #[arg(long)]
    pub mask_frac_pixels: Option<f64>,
    /// Worker thread cap (1 = fully sequential, 0 = library default)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of samples for the sample subcommand
    #[arg(long)]
    pub sample_n: Option<usize>,
    /// Comma-separated sparsity values for sweep-lambda
    #[arg(long)]
    pub lambda_list: Option<String>,
}

/// Effective settings after merging defaults <- config file <- flags.
/// `Some` means the key was explicitly set by the user.
#[derive(Clone, Debug, Default)]
pub struct Config {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub clusters: Option<usize>,
    pub atoms: Option<usize>,
    pub sparsity: Option<f64>,
    pub step_size: Option<f64>,
    pub step_mode: Option<StepMode>,
    pub iters: Option<usize>,
    pub solver: Option<Solver>,
    pub prior_mode: Option<PriorMode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub shuffle: Option<bool>,
    pub attention_grad: Option<AttentionGrad>,
    pub eval_every: Option<usize>,
    pub init_method: Option<InitMethod>,
    pub subset_size: Option<usize>,
    pub mask_frac_images: Option<f64>,
    pub mask_frac_pixels: Option<f64>,
    pub threads: Option<usize>,
    pub sample_n: Option<usize>,
    pub lambda_list: Option<Vec<f64>>,
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| {
        Error::InvalidArgument(format!("config key '{key}': cannot parse '{value}': {e}"))
    })
}

fn parse_lambda_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let items: Vec<&str> =
        value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    items.iter().map(|s| parse_as::<f64>(key, s)).collect()
}

impl Config {
    /// Applies one key=value pair from the config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "history" => self.history = Some(PathBuf::from(value)),
            "clusters" => self.clusters = Some(parse_as(key, value)?),
            "atoms" => self.atoms = Some(parse_as(key, value)?),
            "sparsity" => self.sparsity = Some(parse_as(key, value)?),
            "step_size" => self.step_size = Some(parse_as(key, value)?),
            "step_mode" => self.step_mode = Some(value.trim().parse()?),
            "iters" => self.iters = Some(parse_as(key, value)?),
            "solver" => self.solver = Some(value.trim().parse()?),
            "prior_mode" => self.prior_mode = Some(value.trim().parse()?),
            "epochs" => self.epochs = Some(parse_as(key, value)?),
            "batch_size" => self.batch_size = Some(parse_as(key, value)?),
            "lr" => self.lr = Some(parse_as(key, value)?),
            "seed" => self.seed = Some(parse_as(key, value)?),
            "shuffle" => self.shuffle = Some(parse_as(key, value)?),
            "attention_grad" => self.attention_grad = Some(value.trim().parse()?),
            "eval_every" => self.eval_every = Some(parse_as(key, value)?),
            "init_method" => self.init_method = Some(value.trim().parse()?),
            "subset_size" => self.subset_size = Some(parse_as(key, value)?),
            "mask_frac_images" => self.mask_frac_images = Some(parse_as(key, value)?),
            "mask_frac_pixels" => self.mask_frac_pixels = Some(parse_as(key, value)?),
            "threads" => self.threads = Some(parse_as(key, value)?),
            "sample_n" => self.sample_n = Some(parse_as(key, value)?),
            "lambda_list" => self.lambda_list = Some(parse_lambda_list(key, value)?),
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}:{}: expected key = value, got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_args(&mut self, a: &CommonArgs) -> Result<()> {
        macro_rules! copy {
            ($($field:ident),*) => {
                $(if let Some(v) = &a.$field { self.$field = Some(v.clone()); })*
            };
        }
        copy!(
            data, labels, checkpoint, out, history, clusters, atoms, sparsity, step_size,
            iters, epochs, batch_size, lr, seed, shuffle, eval_every, subset_size,
            mask_frac_images, mask_frac_pixels, threads, sample_n
        );
        if let Some(v) = &a.step_mode {
            self.step_mode = Some(v.parse()?);
        }
        if let Some(v) = &a.solver {
            self.solver = Some(v.parse()?);
        }
        if let Some(v) = &a.prior_mode {
            self.prior_mode = Some(v.parse()?);
        }
        if let Some(v) = &a.attention_grad {
            self.attention_grad = Some(v.parse()?);
        }
        if let Some(v) = &a.init_method {
            self.init_method = Some(v.parse()?);
        }
        if let Some(v) = &a.lambda_list {
            self.lambda_list = Some(parse_lambda_list("lambda_list", v)?);
        }
        Ok(())
    }

    pub fn resolve(args: &CommonArgs) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &args.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_args(args)?;
        Ok(cfg)
    }

    fn require(&self, field: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
        field.cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "'{key}' is required (set {key}= in the config file or pass --{})",
                key.replace('_', "-")
            ))
        })
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Hyperparameters for a fresh model; unset keys use library defaults.
    fn hyper(&self, data_dim: usize) -> HyperParams {
        let base = HyperParams::default();
        HyperParams {
            clusters: self.clusters.unwrap_or(base.clusters),
            data_dim,
            atoms: self.atoms.unwrap_or(base.atoms),
            sparsity: self.sparsity.unwrap_or(base.sparsity),
            step_size: self.step_size.unwrap_or(base.step_size),
            step_mode: self.step_mode.unwrap_or(base.step_mode),
            iters: self.iters.unwrap_or(base.iters),
            solver: self.solver.unwrap_or(base.solver),
        }
    }

    /// Overwrites only explicitly-set hyperparameters of a loaded model.
    fn apply_model_overrides(&self, model: &mut MixtureModel) -> Result<()> {
        if let Some(v) = self.clusters {
            model.hyper.clusters = v;
        }
        if let Some(v) = self.atoms {
            model.hyper.atoms = v;
        }
        if let Some(v) = self.sparsity {
            model.hyper.sparsity = v;
        }
        if let Some(v) = self.step_size {
            model.hyper.step_size = v;
        }
        if let Some(v) = self.step_mode {
            model.hyper.step_mode = v;
        }
        if let Some(v) = self.iters {
            model.hyper.iters = v;
        }
        if let Some(v) = self.solver {
            model.hyper.solver = v;
        }
        if let Some(v) = self.prior_mode {
            model.prior_mode = v;
        }
        model.ensure_valid()
    }

    fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            seed: self.seed(),
            shuffle: self.shuffle.unwrap_or(base.shuffle),
            attention: self.attention_grad.unwrap_or(AttentionGrad::Full),
            eval_every: self.eval_every.unwrap_or(base.eval_every),
        }
    }

    /// Loads the dataset (container or IDX, by magic), attaches labels, and
    /// applies the configured random masking.
    fn load_data(&self) -> Result<Dataset> {
        let path = self.require(self.data.as_ref(), "data")?;
        let mut magic = [0u8; 4];
        let mut file = std::fs::File::open(&path)?;
        file.read_exact(&mut magic).map_err(|_| Error::Format {
            offset: 0,
            detail: format!("{}: too short to hold a magic number", path.display()),
        })?;
        drop(file);
        let mut data = if &magic == dataio::DATASET_MAGIC {
            dataio::load_dataset(&path)?
        } else {
            dataio::load_idx_images(&path)?
        };
        if let Some(labels_path) = &self.labels {
            let labels = dataio::load_idx_labels(labels_path)?;
            data = data.with_labels(labels)?;
        }
        let frac_images = self.mask_frac_images.unwrap_or(0.0);
        let frac_pixels = self.mask_frac_pixels.unwrap_or(0.0);
        if frac_images > 0.0 && frac_pixels > 0.0 {
            data = dataio::apply_random_masks(
                &data,
                frac_images,
                frac_pixels,
                self.seed() ^ MASK_SEED_SALT,
            )?;
        }
        Ok(data)
    }

    /// Every effective setting, in stable order, for the .config companion.
    fn resolved_lines(&self, command: &str, data_dim: Option<usize>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {command}");
        let path = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        let items: Vec<(&str, Option<String>)> = vec![
            ("data", path(&self.data)),
            ("labels", path(&self.labels)),
            ("checkpoint", path(&self.checkpoint)),
            ("out", path(&self.out)),
            ("history", path(&self.history)),
            ("clusters", self.clusters.map(|v| v.to_string())),
            ("atoms", self.atoms.map(|v| v.to_string())),
            ("sparsity", self.sparsity.map(|v| v.to_string())),
            ("step_size", self.step_size.map(|v| v.to_string())),
            (
                "step_mode",
                self.step_mode.map(|v| {
                    match v {
                        StepMode::Fixed => "fixed",
                        StepMode::Auto => "auto",
                    }
                    .to_string()
                }),
            ),
            ("iters", self.iters.map(|v| v.to_string())),
            (
                "solver",
                self.solver.map(|v| {
                    match v {
                        Solver::Ista => "ista",
                        Solver::Fista => "fista",
                    }
                    .to_string()
                }),
            ),
            (
                "prior_mode",
                self.prior_mode.map(|v| {
                    match v {
                        PriorMode::Fixed => "fixed",
                        PriorMode::Learnable => "learnable",
                    }
                    .to_string()
                }),
            ),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", Some(self.seed().to_string())),
            ("shuffle", self.shuffle.map(|v| v.to_string())),
            (
                "attention_grad",
                self.attention_grad.map(|v| {
                    match v {
                        AttentionGrad::Full => "full",
                        AttentionGrad::Stop => "stop",
                    }
                    .to_string()
                }),
            ),
            ("eval_every", self.eval_every.map(|v| v.to_string())),
            (
                "init_method",
                self.init_method.map(|v| {
                    match v {
                        InitMethod::Kmeans => "kmeans",
                        InitMethod::Spectral => "spectral",
                        InitMethod::SscLite => "ssc_lite",
                    }
                    .to_string()
                }),
            ),
            ("subset_size", self.subset_size.map(|v| v.to_string())),
            ("mask_frac_images", self.mask_frac_images.map(|v| v.to_string())),
            ("mask_frac_pixels", self.mask_frac_pixels.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("sample_n", self.sample_n.map(|v| v.to_string())),
            (
                "lambda_list",
                self.lambda_list.as_ref().map(|v| {
                    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
                }),
            ),
            ("data_dim", data_dim.map(|v| v.to_string())),
        ];
        for (key, value) in items {
            if let Some(v) = value {
                let _ = writeln!(s, "{key} = {v}");
            }
        }
        s
    }
}

fn write_resolved_config(cfg: &Config, command: &str, data_dim: Option<usize>, anchor: &Path) -> Result<()> {
    let mut name = anchor.as_os_str().to_owned();
    name.push(".config");
    std::fs::write(PathBuf::from(name), cfg.resolved_lines(command, data_dim))?;
    Ok(())
}

fn print_metrics(prefix: &str, report: &ClusteringReport, truth: &[usize]) -> Result<()> {
    let pred = report.hard_labels();
    let nmi = metrics::nmi(&pred, truth)?;
    let ari = metrics::ari(&pred, truth)?;
    let acc = metrics::acc(&pred, truth)?;
    println!("{prefix} nmi={nmi:.4} ari={ari:.4} acc={acc:.4}");
    Ok(())
}

fn cmd_init(cfg: &Config) -> Result<()> {
    let data = cfg.load_data()?;
    let out = cfg.require(cfg.out.as_ref(), "out")?;
    let hyper = cfg.hyper(data.dim());
    let subset_size = cfg.subset_size.unwrap_or_else(|| 2000.min(data.len()));
    let method = cfg.init_method.unwrap_or(InitMethod::Kmeans);
    let outcome = initialize(
        &data,
        &hyper,
        cfg.prior_mode.unwrap_or(PriorMode::Fixed),
        method,
        subset_size,
        cfg.seed(),
    )?;
    outcome.model.save(&out)?;
    write_resolved_config(cfg, "init", Some(data.dim()), &out)?;
    println!(
        "initialized checkpoint {} (clusters={} dim={} atoms={} parameters={})",
        out.display(),
        hyper.clusters,
        hyper.data_dim,
        hyper.atoms,
        outcome.model.param_count()
    );
    if let Some(truth) = data.labels() {
        let report = cluster_dataset(&data, &outcome.model)?;
        print_metrics("init", &report, truth)?;
    }
    Ok(())
}

fn cmd_train(cfg: &Config) -> Result<()> {
    let data = cfg.load_data()?;
    let ckpt = cfg.require(cfg.checkpoint.as_ref(), "checkpoint")?;
    let out = cfg.require(cfg.out.as_ref(), "out")?;
    let mut model = MixtureModel::load(&ckpt)?;
    cfg.apply_model_overrides(&mut model)?;
    let tc = cfg.train_config();
    let outcome = train(&data, &model, &tc)?;
    outcome.model.save(&out)?;
    let history_path = cfg.history.clone().unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".history.csv");
        PathBuf::from(name)
    });
    write_history_csv(&outcome.history, &history_path)?;
    write_resolved_config(cfg, "train", Some(data.dim()), &out)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs, final mean loss {:.6}; checkpoint {}",
            outcome.history.len(),
            last.mean_loss,
            out.display()
        );
    } else {
        println!("no epochs run; checkpoint {}", out.display());
    }
    if let Some(reason) = outcome.diverged {
        return Err(Error::Numeric(format!(
            "training diverged ({reason}); last good checkpoint kept at {}",
            out.display()
        )));
    }
    Ok(())
}

fn cmd_eval(cfg: &Config) -> Result<()> {
    let data = cfg.load_data()?;
    let ckpt = cfg.require(cfg.checkpoint.as_ref(), "checkpoint")?;
    let out = cfg.require(cfg.out.as_ref(), "out")?;
    let model = MixtureModel::load(&ckpt)?;
    let report = cluster_dataset(&data, &model)?;
    let mut file = std::fs::File::create(&out)?;
    write_report_csv(&report, &mut file)?;
    write_resolved_config(cfg, "eval", Some(data.dim()), &out)?;
    println!(
        "evaluated {} samples: mean loss {:.6}, report {}",
        data.len(),
        report.mean_loss,
        out.display()
    );
    if let Some(truth) = data.labels() {
        print_metrics("eval", &report, truth)?;
    } else {
        println!("eval: no labels available, metrics omitted");
    }
    Ok(())
}

fn cmd_sweep_lambda(cfg: &Config) -> Result<()> {
    let data = cfg.load_data()?;
    let ckpt = cfg.require(cfg.checkpoint.as_ref(), "checkpoint")?;
    let out = cfg.require(cfg.out.as_ref(), "out")?;
    let lambdas = cfg
        .lambda_list
        .as_ref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| {
            Error::InvalidArgument("sweep-lambda needs a non-empty lambda_list".into())
        })?;
    let truth = data
        .labels()
        .ok_or_else(|| {
            Error::InvalidArgument("sweep-lambda needs labels to score each run".into())
        })?
        .to_vec();
    let base = MixtureModel::load(&ckpt)?;
    let tc = cfg.train_config();
    let mut csv = String::from("lambda,loss,nmi,ari,acc\n");
    for &lambda in lambdas {
        let mut model = base.clone();
        cfg.apply_model_overrides(&mut model)?;
        model.hyper.sparsity = lambda;
        model.ensure_valid()?;
        let outcome = train(&data, &model, &tc)?;
        if let Some(reason) = outcome.diverged {
            return Err(Error::Numeric(format!("lambda={lambda}: training diverged ({reason})")));
        }
        let report = cluster_dataset(&data, &outcome.model)?;
        let pred = report.hard_labels();
        let loss = report.mean_loss;
        let nmi = metrics::nmi(&pred, &truth)?;
        let ari = metrics::ari(&pred, &truth)?;
        let acc = metrics::acc(&pred, &truth)?;
        println!("lambda={lambda} loss={loss:.6} nmi={nmi:.4} ari={ari:.4} acc={acc:.4}");
        let _ = writeln!(csv, "{lambda},{loss},{nmi},{ari},{acc}");
    }
    std::fs::write(&out, csv)?;
    write_resolved_config(cfg, "sweep-lambda", Some(data.dim()), &out)?;
    Ok(())
}

fn cmd_sample(cfg: &Config) -> Result<()> {
    let ckpt = cfg.require(cfg.checkpoint.as_ref(), "checkpoint")?;
    let out = cfg.require(cfg.out.as_ref(), "out")?;
    let n = cfg.sample_n.ok_or_else(|| {
        Error::InvalidArgument("'sample_n' is required (config key or --sample-n)".into())
    })?;
    let model = MixtureModel::load(&ckpt)?;
    let data = model.sample_dataset(n, cfg.seed())?;
    dataio::save_dataset(&data, &out)?;
    write_resolved_config(cfg, "sample", Some(data.dim()), &out)?;
    println!("sampled {} points of dimension {} into {}", n, data.dim(), out.display());
    Ok(())
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let (args, name): (&CommonArgs, &str) = match &cli.command {
        Command::Init(a) => (a, "init"),
        Command::Train(a) => (a, "train"),
        Command::Eval(a) => (a, "eval"),
        Command::SweepLambda(a) => (a, "sweep-lambda"),
        Command::Sample(a) => (a, "sample"),
    };
    let cfg = Config::resolve(args)?;
    if let Some(threads) = cfg.threads {
        if threads > 0 {
            // Ignore the error if a global pool already exists (tests).
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    match name {
        "init" => cmd_init(&cfg),
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "sweep-lambda" => cmd_sweep_lambda(&cfg),
        _ => cmd_sample(&cfg),
    }
}

/// Binary entry point: parses argv and maps errors to exit codes.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                3
            } else {
                2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_types_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# experiment\nclusters = 3\nsparsity = 0.5 # inline note\nsolver = ista\n\nshuffle = false\nlambda_list = 0.1, 1, 10\n",
        )
        .unwrap();
        let mut cfg = Config::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.clusters, Some(3));
        assert_eq!(cfg.sparsity, Some(0.5));
        assert_eq!(cfg.solver, Some(Solver::Ista));
        assert_eq!(cfg.shuffle, Some(false));
        assert_eq!(cfg.lambda_list, Some(vec![0.1, 1.0, 10.0]));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("clusterz", "3").is_err());
        assert!(cfg.set("clusters", "three").is_err());
        assert!(cfg.set("solver", "newton").is_err());
        assert!(cfg.set("lambda_list", "0.1,abc").is_err());
    }

    #[test]
    fn flags_override_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs = 9\nlr = 0.5\nseed = 7\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            epochs: Some(2),
            ..Default::default()
        };
        let cfg = Config::resolve(&args).unwrap();
        assert_eq!(cfg.epochs, Some(2), "flag should beat the file");
        assert_eq!(cfg.lr, Some(0.5), "file value should survive");
        assert_eq!(cfg.seed, Some(7));
        let lines = cfg.resolved_lines("train", Some(4));
        assert!(lines.contains("epochs = 2"));
        assert!(lines.contains("lr = 0.5"));
        assert!(lines.contains("data_dim = 4"));
    }

    #[test]
    fn hyper_defaults_fill_unset_keys() {
        let cfg = Config { clusters: Some(4), sparsity: Some(0.25), ..Default::default() };
        let h = cfg.hyper(16);
        assert_eq!(h.clusters, 4);
        assert_eq!(h.data_dim, 16);
        assert_eq!(h.atoms, HyperParams::default().atoms);
        assert_eq!(h.sparsity, 0.25);
        let tc = cfg.train_config();
        assert_eq!(tc.epochs, 50);
        assert_eq!(tc.batch_size, 256);
        assert_eq!(tc.lr, 0.001);
    }
}
