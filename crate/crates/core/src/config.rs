//! Run configuration as a flat `section.key=value` file.
//!
//! Every key has a default, unknown and repeated keys are errors, and
//! [`RunConfig::dump`] writes a file that parses back to the same config.
//! Relative paths are taken relative to the working directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::DEFAULT_KS;
use crate::local::ModalitySet;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

/// Input and output locations.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Raw `user<TAB>item` file read by `prepare`.
    pub interactions: PathBuf,
    /// Raw visual feature file, empty when absent.
    pub visual_features: PathBuf,
    /// Raw textual feature file, empty when absent.
    pub textual_features: PathBuf,
    /// Where `prepare` writes and `train` / `evaluate` read.
    pub prepared_dir: PathBuf,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            interactions: PathBuf::from("data/interactions.tsv"),
            visual_features: PathBuf::from("data/visual.mmft"),
            textual_features: PathBuf::from("data/textual.mmft"),
            prepared_dir: PathBuf::from("prepared"),
            split_seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub eval_ks: Vec<usize>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            output_dir: PathBuf::from("run"),
            train: TrainConfig::default(),
            eval_ks: DEFAULT_KS.to_vec(),
            synth: SynthConfig::default(),
        }
    }
}

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "data.interactions",
    "data.visual_features",
    "data.textual_features",
    "data.prepared_dir",
    "data.split_seed",
    "output.dir",
    "train.learning_rate",
    "train.batch_size",
    "train.max_epochs",
    "train.patience",
    "train.seed",
    "model.embedding_dim",
    "model.layers",
    "model.modality_layer",
    "model.modalities",
    "model.hyperedges",
    "model.depth",
    "model.dropout",
    "model.temperature",
    "model.alpha",
    "loss.lambda",
    "loss.omega",
    "loss.beta",
    "loss.delta",
    "eval.ks",
    "synth.users",
    "synth.items",
    "synth.blocks",
    "synth.density",
    "synth.noise",
    "synth.jitter",
    "synth.visual_dim",
    "synth.textual_dim",
    "synth.seed",
];

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// The `train.*`, `model.*` and `loss.*` entries of a training config.
pub fn train_entries(t: &TrainConfig) -> Vec<(&'static str, String)> {
    let (l, g, w) = (&t.model.local, &t.model.global, &t.weights);
    vec![
        ("train.learning_rate", format!("{:?}", t.learning_rate)),
        ("train.batch_size", t.batch_size.to_string()),
        ("train.max_epochs", t.max_epochs.to_string()),
        ("train.patience", t.patience.to_string()),
        ("train.seed", t.seed.to_string()),
        ("model.embedding_dim", l.embedding_dim.to_string()),
        ("model.layers", l.layers.to_string()),
        ("model.modality_layer", l.modality_layer.to_string()),
        ("model.modalities", l.modalities.as_str().to_string()),
        ("model.hyperedges", g.hyperedges.to_string()),
        ("model.depth", g.depth.to_string()),
        ("model.dropout", format!("{:?}", g.dropout)),
        ("model.temperature", format!("{:?}", g.temperature)),
        ("model.alpha", format!("{:?}", g.alpha)),
        ("loss.lambda", format!("{:?}", w.lambda)),
        ("loss.omega", format!("{:?}", w.omega)),
        ("loss.beta", format!("{:?}", w.beta)),
        ("loss.delta", format!("{:?}", w.delta)),
    ]
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_ks(value: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = value
        .split(',')
        .map(|s| parse_value::<usize>("eval.ks", s.trim()))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("eval.ks must list positive cutoffs".into()));
    }
    Ok(ks)
}

/// Resolves a bare key such as `beta` to its unique dotted form.
pub fn resolve_key(key: &str) -> Result<&'static str> {
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    if !key.contains('.') {
        let matches: Vec<&&str> = KEYS
            .iter()
            .filter(|k| k.rsplit('.').next() == Some(key))
            .collect();
        match matches.as_slice() {
            [one] => return Ok(one),
            [] => {}
            many => {
                let names: Vec<&str> = many.iter().map(|k| **k).collect();
                return Err(Error::Config(format!(
                    "key `{key}` is ambiguous: {}",
                    names.join(", ")
                )));
            }
        }
    }
    Err(Error::Config(format!("unknown key `{key}`")))
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("data.interactions", path_str(&self.data.interactions)),
            ("data.visual_features", path_str(&self.data.visual_features)),
            ("data.textual_features", path_str(&self.data.textual_features)),
            ("data.prepared_dir", path_str(&self.data.prepared_dir)),
            ("data.split_seed", self.data.split_seed.to_string()),
            ("output.dir", path_str(&self.output_dir)),
        ];
        out.extend(train_entries(&self.train));
        let ks: Vec<String> = self.eval_ks.iter().map(usize::to_string).collect();
        out.push(("eval.ks", ks.join(",")));
        let s = &self.synth;
        out.extend([
            ("synth.users", s.users.to_string()),
            ("synth.items", s.items.to_string()),
            ("synth.blocks", s.blocks.to_string()),
            ("synth.density", format!("{:?}", s.density)),
            ("synth.noise", format!("{:?}", s.noise)),
            ("synth.jitter", format!("{:?}", s.jitter)),
            ("synth.visual_dim", s.visual_dim.to_string()),
            ("synth.textual_dim", s.textual_dim.to_string()),
            ("synth.seed", s.seed.to_string()),
        ]);
        out
    }

    /// Sets one key (dotted or bare) from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = resolve_key(key)?;
        let t = &mut self.train;
        match key {
            "data.interactions" => self.data.interactions = PathBuf::from(value),
            "data.visual_features" => self.data.visual_features = PathBuf::from(value),
            "data.textual_features" => self.data.textual_features = PathBuf::from(value),
            "data.prepared_dir" => self.data.prepared_dir = PathBuf::from(value),
            "data.split_seed" => self.data.split_seed = parse_value(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "train.learning_rate" => t.learning_rate = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.max_epochs" => t.max_epochs = parse_value(key, value)?,
            "train.patience" => t.patience = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "model.embedding_dim" => t.model.local.embedding_dim = parse_value(key, value)?,
            "model.layers" => t.model.local.layers = parse_value(key, value)?,
            "model.modality_layer" => t.model.local.modality_layer = parse_value(key, value)?,
            "model.modalities" => {
                t.model.local.modalities = value.parse::<ModalitySet>()?;
            }
            "model.hyperedges" => t.model.global.hyperedges = parse_value(key, value)?,
            "model.depth" => t.model.global.depth = parse_value(key, value)?,
            "model.dropout" => t.model.global.dropout = parse_value(key, value)?,
            "model.temperature" => t.model.global.temperature = parse_value(key, value)?,
            "model.alpha" => t.model.global.alpha = parse_value(key, value)?,
            "loss.lambda" => t.weights.lambda = parse_value(key, value)?,
            "loss.omega" => t.weights.omega = parse_value(key, value)?,
            "loss.beta" => t.weights.beta = parse_value(key, value)?,
            "loss.delta" => t.weights.delta = parse_value(key, value)?,
            "eval.ks" => self.eval_ks = parse_ks(value)?,
            "synth.users" => self.synth.users = parse_value(key, value)?,
            "synth.items" => self.synth.items = parse_value(key, value)?,
            "synth.blocks" => self.synth.blocks = parse_value(key, value)?,
            "synth.density" => self.synth.density = parse_value(key, value)?,
            "synth.noise" => self.synth.noise = parse_value(key, value)?,
            "synth.jitter" => self.synth.jitter = parse_value(key, value)?,
            "synth.visual_dim" => self.synth.visual_dim = parse_value(key, value)?,
            "synth.textual_dim" => self.synth.textual_dim = parse_value(key, value)?,
            "synth.seed" => self.synth.seed = parse_value(key, value)?,
            other => unreachable!("key `{other}` listed but not handled"),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key=value`, got `{line}`")))?;
            let key = resolve_key(key.trim()).map_err(|e| err(e.to_string()))?;
            if !seen.insert(key) {
                return Err(err(format!("`{key}` is set twice")));
            }
            config.set(key, value.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_text(path)?, path)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let sec = key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = sec;
            }
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("eval.ks must list positive cutoffs".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("run.conf")
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.dump();
        assert_eq!(RunConfig::parse(&text, p()).unwrap(), c);
        assert_eq!(text.lines().filter(|l| l.contains('=')).count(), KEYS.len());
        let keys: Vec<&str> = c.entries().iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, KEYS);
    }

    #[test]
    fn every_key_can_be_set() {
        let mut c = RunConfig::default();
        for (key, value) in RunConfig::default().entries() {
            c.set(key, &value).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        let err = RunConfig::parse("train.learnin_rate=0.1\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(RunConfig::parse("loss.beta=1\nloss.beta=2\n", p()).is_err());
        assert!(RunConfig::parse("# c\n\nnonsense\n", p()).is_err());
        assert!(RunConfig::parse("model.modalities=audio\n", p()).is_err());
        assert!(RunConfig::parse("train.batch_size=-3\n", p()).is_err());
    }

    #[test]
    fn bare_keys_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["beta=1e-4", "delta=0", "train.seed=9"]).unwrap();
        assert_eq!(c.train.weights.beta, 1e-4);
        assert_eq!(c.train.weights.delta, 0.0);
        assert_eq!(c.train.seed, 9);
        // `seed` exists under data, train and synth.
        assert!(c.set("seed", "1").is_err());
        assert!(c.apply_overrides(&["beta"]).is_err());
    }

    #[test]
    fn modality_toggle_changes_fingerprint() {
        let mut a = RunConfig::default();
        let b = a.clone();
        a.set("model.modalities", "text").unwrap();
        assert_ne!(a.train.fingerprint(), b.train.fingerprint());
        assert_eq!(b.train.fingerprint(), RunConfig::default().train.fingerprint());
    }

    proptest! {
        #[test]
        fn dump_parse_round_trip(
            lr in 1e-6f64..1.0,
            batch in 1usize..5000,
            beta in 0.0f64..1.0,
            alpha in 0.0f64..1.0,
            modal in 0usize..4,
            ks in proptest::collection::vec(1usize..200, 1..5),
            seed in any::<u64>(),
            dir in "[a-z][a-z0-9_/]{0,12}",
        ) {
            let mut c = RunConfig::default();
            c.train.learning_rate = lr;
            c.train.batch_size = batch;
            c.train.weights.beta = beta;
            c.train.model.global.alpha = alpha;
            c.train.model.local.modalities = ["both", "text", "image", "none"][modal].parse().unwrap();
            c.eval_ks = ks;
            c.train.seed = seed;
            c.output_dir = PathBuf::from(dir);
            let text = c.dump();
            let back = RunConfig::parse(&text, p()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.dump(), text);
        }
    }
}
