//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected,
//! booleans are `true` or `false` and lists are comma-separated. The same
//! keys serve as the override vocabulary for command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autograd::LossKind;
use crate::error::{Error, Result};
use crate::trainer::{DataSource, TrainConfig, MNIST_HOLDOUT};

/// Which dataset family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

/// Raw data settings; turned into a [`DataSource`] once all keys are read.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub kind: DatasetKind,
    pub mnist_dir: PathBuf,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub idx_test_images: Option<PathBuf>,
    pub idx_test_labels: Option<PathBuf>,
    pub holdout_fraction: f64,
    pub n_pairs: usize,
    pub pair_overlap: f64,
    pub dim: usize,
    pub per_class: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            idx_images: None,
            idx_labels: None,
            idx_test_images: None,
            idx_test_labels: None,
            holdout_fraction: MNIST_HOLDOUT,
            n_pairs: 3,
            pair_overlap: 0.7,
            dim: 10,
            per_class: 500,
        }
    }
}

impl DataSettings {
    pub fn source(&self) -> DataSource {
        match self.kind {
            DatasetKind::Synthetic => DataSource::Synthetic {
                n_pairs: self.n_pairs,
                pair_overlap: self.pair_overlap,
                dim: self.dim,
                per_class: self.per_class,
            },
            DatasetKind::Mnist => {
                let DataSource::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                    ..
                } = DataSource::mnist(&self.mnist_dir)
                else {
                    unreachable!()
                };
                DataSource::Idx {
                    train_images: self.idx_images.clone().unwrap_or(train_images),
                    train_labels: self.idx_labels.clone().unwrap_or(train_labels),
                    test_images: self.idx_test_images.clone().unwrap_or(test_images),
                    test_labels: self.idx_test_labels.clone().unwrap_or(test_labels),
                    holdout_fraction: self.holdout_fraction,
                }
            }
        }
    }
}

/// A run configuration before it is resolved into a [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub train: TrainConfig,
    pub data: DataSettings,
}

/// Every accepted key, in the order [`Settings::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "loss",
    "alpha",
    "beta",
    "temperature",
    "kd_weight",
    "ls_eps",
    "detach_d",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "seed",
    "data_seed",
    "hidden",
    "lr_decay_epochs",
    "baseline",
    "record_wall_time",
    "dataset",
    "mnist_dir",
    "idx_images",
    "idx_labels",
    "idx_test_images",
    "idx_test_labels",
    "holdout_fraction",
    "n_pairs",
    "pair_overlap",
    "dim",
    "per_class",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Settings {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "loss" => t.loss_kind = value.parse().map_err(|_| Error::Config(format!("loss: unknown kind {value:?}")))?,
            "alpha" => t.loss.focus.alpha = parse_num(key, value)?,
            "beta" => t.loss.focus.beta = parse_num(key, value)?,
            "temperature" => t.loss.kd.temperature = parse_num(key, value)?,
            "kd_weight" => t.loss.kd.weight = parse_num(key, value)?,
            "ls_eps" => t.loss.ls_eps = parse_num(key, value)?,
            "detach_d" => t.loss.detach_d = parse_bool(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "momentum" => t.momentum = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "data_seed" => t.data_seed = if value.is_empty() { None } else { Some(parse_num(key, value)?) },
            "hidden" => t.hidden_dims = parse_list(key, value)?,
            "lr_decay_epochs" => t.lr_decay_epochs = parse_list(key, value)?,
            "baseline" => t.baseline_checkpoint = opt_path(value),
            "record_wall_time" => t.record_wall_time = parse_bool(key, value)?,
            "dataset" => {
                d.kind = match value {
                    "mnist" => DatasetKind::Mnist,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => return Err(Error::Config(format!("dataset: expected mnist or synthetic, got {value:?}"))),
                }
            }
            "mnist_dir" => d.mnist_dir = PathBuf::from(value),
            "idx_images" => d.idx_images = opt_path(value),
            "idx_labels" => d.idx_labels = opt_path(value),
            "idx_test_images" => d.idx_test_images = opt_path(value),
            "idx_test_labels" => d.idx_test_labels = opt_path(value),
            "holdout_fraction" => d.holdout_fraction = parse_num(key, value)?,
            "n_pairs" => d.n_pairs = parse_num(key, value)?,
            "pair_overlap" => d.pair_overlap = parse_num(key, value)?,
            "dim" => d.dim = parse_num(key, value)?,
            "per_class" => d.per_class = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply every line of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value, line) in parse_pairs(text)? {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// The resolved configuration, with the dataset descriptor filled in.
    pub fn resolve(&self) -> TrainConfig {
        TrainConfig {
            dataset: self.data.source(),
            ..self.train.clone()
        }
    }

    /// Every key with its current value; parses back to an equal `Settings`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let d = &self.data;
        let value = |key: &str| -> String {
            match key {
                "loss" => t.loss_kind.to_string(),
                "alpha" => t.loss.focus.alpha.to_string(),
                "beta" => t.loss.focus.beta.to_string(),
                "temperature" => t.loss.kd.temperature.to_string(),
                "kd_weight" => t.loss.kd.weight.to_string(),
                "ls_eps" => t.loss.ls_eps.to_string(),
                "detach_d" => t.loss.detach_d.to_string(),
                "lr" => t.lr.to_string(),
                "momentum" => t.momentum.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "epochs" => t.epochs.to_string(),
                "seed" => t.seed.to_string(),
                "data_seed" => t.data_seed.map(|s| s.to_string()).unwrap_or_default(),
                "hidden" => join(&t.hidden_dims),
                "lr_decay_epochs" => join(&t.lr_decay_epochs),
                "baseline" => path_or_empty(&t.baseline_checkpoint),
                "record_wall_time" => t.record_wall_time.to_string(),
                "dataset" => match d.kind {
                    DatasetKind::Mnist => "mnist".into(),
                    DatasetKind::Synthetic => "synthetic".into(),
                },
                "mnist_dir" => d.mnist_dir.display().to_string(),
                "idx_images" => path_or_empty(&d.idx_images),
                "idx_labels" => path_or_empty(&d.idx_labels),
                "idx_test_images" => path_or_empty(&d.idx_test_images),
                "idx_test_labels" => path_or_empty(&d.idx_test_labels),
                "holdout_fraction" => d.holdout_fraction.to_string(),
                "n_pairs" => d.n_pairs.to_string(),
                "pair_overlap" => d.pair_overlap.to_string(),
                "dim" => d.dim.to_string(),
                "per_class" => d.per_class.to_string(),
                _ => unreachable!("key list and writer out of sync"),
            }
        };
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", value(key));
        }
        out
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// `(key, value, line number)` for every setting in `text`. Duplicate keys
/// are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {n}: unknown key {key:?}")));
        }
        if let Some((_, _, first)) = out.iter().find(|(k, _, _)| k == key) {
            return Err(Error::Config(format!("line {n}: {key:?} already set on line {first}")));
        }
        out.push((key.to_string(), value.trim().to_string(), n));
    }
    Ok(out)
}

/// Loss named by a config text, if any.
pub fn declared_loss(text: &str) -> Result<Option<LossKind>> {
    for (k, v, n) in parse_pairs(text)? {
        if k == "loss" {
            return v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {n}: unknown loss kind {v:?}")));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_value_type() {
        let text = "\
# desk-scale clonal run
loss = focusing_picking
alpha = 0.25
detach_d = true
hidden = 32, 16
lr_decay_epochs =
seed = 7   # trailing comment
baseline = runs/b/model.ckpt
dataset = synthetic
pair_overlap = 0.5
";
        let s = Settings::from_text(text).unwrap();
        assert_eq!(s.train.loss_kind, LossKind::FocusingPicking);
        assert_eq!(s.train.loss.focus.alpha, 0.25);
        assert!(s.train.loss.detach_d);
        assert_eq!(s.train.hidden_dims, vec![32, 16]);
        assert!(s.train.lr_decay_epochs.is_empty());
        assert_eq!(s.train.seed, 7);
        assert_eq!(s.train.baseline_checkpoint, Some(PathBuf::from("runs/b/model.ckpt")));
        let cfg = s.resolve();
        assert_eq!(
            cfg.dataset,
            DataSource::Synthetic {
                n_pairs: 3,
                pair_overlap: 0.5,
                dim: 10,
                per_class: 500
            }
        );
        assert_eq!(declared_loss(text).unwrap(), Some(LossKind::FocusingPicking));
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "learning_rate = 0.1",
            "detach_d = yes",
            "epochs = ten",
            "hidden = 8,x",
            "dataset = cifar",
            "loss = focal",
            "just a line",
            "seed = 1\nseed = 2",
        ] {
            let err = Settings::from_text(bad).unwrap_err();
            assert_eq!(err.category(), "config", "{bad}");
        }
        let err = Settings::from_text("\n\nmomentum = high").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn text_round_trips() {
        let mut s = Settings::default();
        s.set("hidden", "").unwrap();
        s.set("data_seed", "11").unwrap();
        s.set("idx_images", "/tmp/x").unwrap();
        s.set("lr", "0.30000000000000004").unwrap();
        let again = Settings::from_text(&s.to_text()).unwrap();
        assert_eq!(again, s);
        assert_eq!(Settings::from_text(&Settings::default().to_text()).unwrap(), Settings::default());
        assert_eq!(s.to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn idx_paths_override_mnist_dir() {
        let mut s = Settings::default();
        s.set("mnist_dir", "/data").unwrap();
        s.set("idx_test_labels", "/other/labels").unwrap();
        let DataSource::Idx {
            train_images,
            test_labels,
            holdout_fraction,
            ..
        } = s.data.source()
        else {
            panic!("expected idx source")
        };
        assert_eq!(train_images, PathBuf::from("/data/train-images-idx3-ubyte"));
        assert_eq!(test_labels, PathBuf::from("/other/labels"));
        assert_eq!(holdout_fraction, 1.0 / 12.0);
    }
}
