//! The `mgnm` command surface: `synth`, `prepare`, `train` and `evaluate`.
//!
//! `prepare` writes a directory with dense-id split files, remapped feature
//! files, an id map and a manifest; `train` and `evaluate` read it back.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::RunConfig;
use crate::dataset::{prepare, Dataset, IdMap, Part};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::io::{self, load_features, load_interactions, load_pairs, write_atomic, write_features, write_interactions};
use crate::local::Modality;
use crate::model::ModalityFeatureBank;
use crate::synth::{synth_dataset, write_synth, SynthPaths};
use crate::trainer::{evaluate_split, fit, load_checkpoint, save_checkpoint, TrainOutcome, SELECTION_K};

pub const SEED_ENV: &str = "MGNM_SEED";

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALIDATION_FILE: &str = "validation.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const ID_MAP_FILE: &str = "id_map.tsv";
pub const PREPARED_MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const EVAL_REPORT_KV_FILE: &str = "eval_report.kv";
pub const CONFIG_DUMP_FILE: &str = "config.conf";

#[derive(Debug, Parser)]
#[command(name = "mgnm", version, about = "Multimodal graph recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-block synthetic dataset.
    Synth(CommonArgs),
    /// Split raw interactions and remap ids.
    Prepare(CommonArgs),
    /// Train, checkpoint and report test metrics.
    Train(CommonArgs),
    /// Reload a checkpoint and report metrics.
    Evaluate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Config file with `section.key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Synth(a) | Command::Prepare(a) | Command::Train(a) | Command::Evaluate(a) => a,
        }
    }
}

/// Loads the config file (or defaults), then the seed variable, then `--set`
/// overrides.
pub fn resolve_config(args: &CommonArgs, seed_env: Option<&str>) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed_env {
        config
            .set("train.seed", seed.trim())
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{seed}` is not a valid seed")))?;
    }
    config.apply_overrides(&args.overrides)?;
    config.validate()?;
    Ok(config)
}

fn optional(path: &Path) -> Option<&Path> {
    (!path.as_os_str().is_empty()).then_some(path)
}

pub fn synth_command(config: &RunConfig) -> Result<String> {
    let data = synth_dataset(&config.synth)?;
    let d = &config.data;
    let manifest = d
        .interactions
        .parent()
        .unwrap_or(Path::new(""))
        .join(crate::synth::MANIFEST_FILE);
    let paths = SynthPaths {
        interactions: d.interactions.clone(),
        visual: optional(&d.visual_features)
            .ok_or_else(|| Error::Config("data.visual_features is empty".into()))?
            .to_path_buf(),
        textual: optional(&d.textual_features)
            .ok_or_else(|| Error::Config("data.textual_features is empty".into()))?
            .to_path_buf(),
        manifest,
    };
    write_synth(&paths, &config.synth, &data)?;
    Ok(format!(
        "wrote {} interactions for {} users and {} items to {}\n",
        data.pairs.len(),
        config.synth.users,
        config.synth.items,
        paths.interactions.display()
    ))
}

fn modality_file(m: Modality) -> String {
    format!("{}.mmft", m.name())
}

pub fn prepare_command(config: &RunConfig) -> Result<String> {
    let d = &config.data;
    let pairs = load_interactions(&d.interactions)?;
    let mut raw = ModalityFeatureBank::new();
    for (m, path) in [(Modality::Visual, &d.visual_features), (Modality::Textual, &d.textual_features)] {
        if let Some(path) = optional(path) {
            raw.insert(m, load_features(path, None)?)?;
        }
    }
    let (dataset, ids) = prepare(&pairs, &raw, d.split_seed)?;
    dataset.train_graph()?;
    write_prepared(&d.prepared_dir, &dataset, &ids, d.split_seed)?;
    Ok(format!(
        "prepared {} users, {} items: {} train, {} validation, {} test pairs in {}\n",
        dataset.n_users,
        dataset.n_items,
        dataset.train.len(),
        dataset.validation.len(),
        dataset.test.len(),
        d.prepared_dir.display()
    ))
}

pub fn write_prepared(dir: &Path, dataset: &Dataset, ids: &IdMap, split_seed: u64) -> Result<()> {
    write_interactions(&dir.join(TRAIN_FILE), &dataset.train)?;
    write_interactions(&dir.join(VALIDATION_FILE), &dataset.validation)?;
    write_interactions(&dir.join(TEST_FILE), &dataset.test)?;
    for m in dataset.features.modalities() {
        write_features(&dir.join(modality_file(m)), dataset.features.get(m).expect("listed"))?;
    }
    let mut map = String::from("# kind\tdense\traw\n");
    for (k, raw) in ids.users.iter().enumerate() {
        let _ = writeln!(map, "user\t{k}\t{raw}");
    }
    for (k, raw) in ids.items.iter().enumerate() {
        let _ = writeln!(map, "item\t{k}\t{raw}");
    }
    write_atomic(&dir.join(ID_MAP_FILE), map.as_bytes())?;
    let modalities: Vec<&str> = dataset.features.modalities().map(Modality::name).collect();
    let manifest = format!(
        "users={}\nitems={}\nsplit_seed={split_seed}\nmodalities={}\n",
        dataset.n_users,
        dataset.n_items,
        modalities.join(",")
    );
    write_atomic(&dir.join(PREPARED_MANIFEST), manifest.as_bytes())
}

/// Reads a prepared directory, loading features for `modalities` only.
pub fn load_prepared(dir: &Path, modalities: &[Modality]) -> Result<Dataset> {
    let path = dir.join(PREPARED_MANIFEST);
    let text = io::read_text(&path)?;
    let mut users = None;
    let mut items = None;
    for (idx, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Parse {
            path: path.clone(),
            line: idx + 1,
            message,
        };
        let Some((k, v)) = line.split_once('=') else {
            return Err(bad(format!("expected key=value, got `{line}`")));
        };
        let count = || v.parse::<usize>().map_err(|_| bad(format!("bad count `{v}`")));
        match k {
            "users" => users = Some(count()?),
            "items" => items = Some(count()?),
            "split_seed" | "modalities" => {}
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    let missing = |what: &str| Error::Format {
        path: path.clone(),
        message: format!("missing `{what}`"),
    };
    let n_users = users.ok_or_else(|| missing("users"))?;
    let n_items = items.ok_or_else(|| missing("items"))?;
    let mut features = ModalityFeatureBank::new();
    for &m in modalities {
        features.insert(m, load_features(&dir.join(modality_file(m)), Some(n_items))?)?;
    }
    Dataset::new(
        n_users,
        n_items,
        load_pairs(&dir.join(TRAIN_FILE))?,
        load_pairs(&dir.join(VALIDATION_FILE))?,
        load_pairs(&dir.join(TEST_FILE))?,
        features,
    )
}

fn format_train_log(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch\tsteps\ttotal\tbpr\thcl_users\thcl_items\tddr\tddr_mm\tval_recall20\n");
    for e in &outcome.log {
        let l = &e.loss;
        let _ = writeln!(
            out,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            e.epoch, e.steps, l.total, l.bpr, l.contrastive_users, l.contrastive_items, l.ddr, l.ddr_mm, e.validation_recall
        );
    }
    out
}

fn test_report(config: &RunConfig, dataset: &Dataset, params: &crate::model::ParameterSet) -> Result<MetricsReport> {
    let graph = dataset.train_graph()?;
    evaluate_split(
        params,
        dataset,
        &graph,
        &config.train.model,
        Part::Test,
        &config.eval_ks,
        config.train.fingerprint(),
    )
}

pub fn train_command(config: &RunConfig) -> Result<String> {
    let dataset = load_prepared(&config.data.prepared_dir, config.train.model.modalities())?;
    let outcome = fit(&dataset, &config.train)?;
    let out = &config.output_dir;
    let hash = config.train.fingerprint();
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.params, &outcome.optimizer, hash)?;
    write_atomic(&out.join(TRAIN_LOG_FILE), format_train_log(&outcome).as_bytes())?;
    write_atomic(&out.join(CONFIG_DUMP_FILE), config.dump().as_bytes())?;
    let report = test_report(config, &dataset, &outcome.params)?;
    write_atomic(&out.join(REPORT_FILE), report.to_table().as_bytes())?;
    let mut kv = format!("best_epoch={}\nvalidation.recall.{SELECTION_K}={:?}\n", outcome.best_epoch, outcome.best_validation);
    kv.push_str(&report.to_key_values());
    write_atomic(&out.join(REPORT_KV_FILE), kv.as_bytes())?;
    info!("train: wrote checkpoint and reports to {}", out.display());
    Ok(format!(
        "best epoch {} of {}, validation recall@{SELECTION_K} {:?}\ntest metrics:\n{}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_validation,
        report.to_table()
    ))
}

pub fn evaluate_command(config: &RunConfig) -> Result<String> {
    let dataset = load_prepared(&config.data.prepared_dir, config.train.model.modalities())?;
    let hash = config.train.fingerprint();
    let ckpt = load_checkpoint(&config.output_dir.join(CHECKPOINT_FILE), hash)?;
    let graph = dataset.train_graph()?;
    let validation = evaluate_split(
        &ckpt.params,
        &dataset,
        &graph,
        &config.train.model,
        Part::Validation,
        &[SELECTION_K],
        hash,
    )?;
    let report = test_report(config, &dataset, &ckpt.params)?;
    let mut kv = format!("validation.recall.{SELECTION_K}={:?}\n", validation.recall[0]);
    kv.push_str(&report.to_key_values());
    write_atomic(&config.output_dir.join(EVAL_REPORT_KV_FILE), kv.as_bytes())?;
    Ok(format!(
        "validation recall@{SELECTION_K} {:?}\ntest metrics:\n{}",
        validation.recall[0],
        report.to_table()
    ))
}

pub fn run_command(command: &Command, config: &RunConfig) -> Result<String> {
    match command {
        Command::Synth(_) => synth_command(config),
        Command::Prepare(_) => prepare_command(config),
        Command::Train(_) => train_command(config),
        Command::Evaluate(_) => evaluate_command(config),
    }
}

/// Exit status for an error: 1 for user errors, 2 for internal ones.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_user_error() {
        1
    } else {
        2
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Output goes to stdout, errors to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let seed = std::env::var(SEED_ENV).ok();
    let name = cli.command.name();
    let result = resolve_config(cli.command.args(), seed.as_deref())
        .and_then(|config| run_command(&cli.command, &config));
    match result {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("mgnm {name}: {e}");
            exit_code(&e)
        }
    }
}
