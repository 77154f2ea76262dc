//! Training: data preparation, heavy-ball SGD, the baseline and clonal
//! phases, the comparison losses, evaluation and per-epoch metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autograd::{self, Batch, GradBundle, LossConfig, LossKind};
use crate::dataio::{self, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::FocusConfig;
use crate::model::{self, MlpConfig, MlpParams};
use crate::numerics::{self, Rng};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Mixed into the data seed to draw the synthetic test set.
pub const SYNTHETIC_TEST_STREAM: u64 = 0x7e57_7e57_7e57_7e57;

/// Fraction of the MNIST training file held out for validation (5K of 60K).
pub const MNIST_HOLDOUT: f64 = 1.0 / 12.0;

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// IDX files. The training file is split into train and validation.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        holdout_fraction: f64,
    },
    /// Gaussian class pairs. Train and test are independent draws; there is
    /// no validation split.
    Synthetic {
        n_pairs: usize,
        pair_overlap: f64,
        dim: usize,
        per_class: usize,
    },
}

impl DataSource {
    /// The four standard MNIST file names under `dir`.
    pub fn mnist(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DataSource::Idx {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            holdout_fraction: MNIST_HOLDOUT,
        }
    }

    pub fn synthetic_spec(&self, seed: u64) -> Option<SyntheticSpec> {
        match *self {
            DataSource::Synthetic {
                n_pairs,
                pair_overlap,
                dim,
                per_class,
            } => Some(SyntheticSpec {
                n_pairs,
                pair_overlap,
                dim,
                per_class,
                seed,
            }),
            DataSource::Idx { .. } => None,
        }
    }
}

/// Train, optional validation and test sets, centred on the train mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

impl PreparedData {
    pub fn load(source: &DataSource, data_seed: u64) -> Result<Self> {
        let (train, val, test) = match source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                holdout_fraction,
            } => {
                let full = dataio::load_idx(train_images, train_labels)?;
                let test = dataio::load_idx(test_images, test_labels)?;
                let n = full.n_classes().max(test.n_classes());
                let (full, test) = (full.with_n_classes(n)?, test.with_n_classes(n)?);
                let (train, val) = dataio::split(&full, *holdout_fraction, data_seed)?;
                (train, Some(val), test)
            }
            DataSource::Synthetic { .. } => {
                let spec = source.synthetic_spec(data_seed).expect("synthetic source");
                let train = dataio::generate_synthetic(&spec)?;
                let test = dataio::generate_synthetic(&SyntheticSpec {
                    seed: data_seed ^ SYNTHETIC_TEST_STREAM,
                    ..spec
                })?;
                (train, None, test)
            }
        };
        let others: Vec<Dataset> = val.iter().cloned().chain([test]).collect();
        let (train, mut others, _) = dataio::mean_center(&train, &others)?;
        let test = others.pop().expect("test set");
        Ok(Self {
            train,
            val: others.pop(),
            test,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.train.feature_dim()
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs (1-based) from which the learning rate is multiplied by 0.1.
    pub lr_decay_epochs: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub dataset: DataSource,
    /// Seed for data generation and the validation split; defaults to `seed`.
    pub data_seed: Option<u64>,
    /// Log per-epoch wall time. Off by default so metrics files are reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::BaselineCe,
            loss: LossConfig::default(),
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            lr_decay_epochs: Vec::new(),
            hidden_dims: vec![256],
            baseline_checkpoint: None,
            dataset: DataSource::mnist("data/mnist"),
            data_seed: None,
            record_wall_time: false,
        }
    }
}

pub const LR_DECAY_FACTOR: f64 = 0.1;

impl TrainConfig {
    /// Checks hyperparameters only; the frozen network is passed separately
    /// to the training functions.
    pub fn validate_hyperparameters(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be positive".into()));
        }
        self.loss.validate(self.loss_kind)
    }

    /// Full check, including that losses with a frozen network name a checkpoint.
    pub fn validate(&self) -> Result<()> {
        self.validate_hyperparameters()?;
        if self.loss_kind.needs_aux() && self.baseline_checkpoint.is_none() {
            return Err(Error::MissingBaseline(format!(
                "loss {} requires a baseline checkpoint",
                self.loss_kind
            )));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|e| **e <= epoch).count();
        self.lr * LR_DECAY_FACTOR.powi(decays as i32)
    }

    pub fn model_config(&self, input_dim: usize, n_classes: usize) -> MlpConfig {
        MlpConfig::new(input_dim, &self.hidden_dims, n_classes, self.seed)
    }
}

/// One metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the pre-update predictions seen during the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: f64,
    pub mean_l_cls: f64,
    /// Only the focusing-picking loss has an attention term.
    pub mean_r_att: Option<f64>,
    pub mean_r_ent: f64,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub rows: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,train_acc,val_acc,test_acc,mean_l_cls,mean_r_att,mean_r_ent,wall_seconds";

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_acc),
                r.test_acc,
                r.mean_l_cls,
                opt(r.mean_r_att),
                r.mean_r_ent,
                opt(r.wall_seconds)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("metrics line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(bad(1, "unexpected header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let n = i + 2;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 9 {
                return Err(bad(n, "expected 9 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number {s:?}")));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(EpochMetrics {
                epoch: cells[0].parse().map_err(|_| bad(n, "bad epoch"))?,
                train_loss: num(cells[1])?,
                train_acc: num(cells[2])?,
                val_acc: opt(cells[3])?,
                test_acc: num(cells[4])?,
                mean_l_cls: num(cells[5])?,
                mean_r_att: opt(cells[6])?,
                mean_r_ent: num(cells[7])?,
                wall_seconds: opt(cells[8])?,
            });
        }
        Ok(Self { rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingMetrics(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_csv(&text)
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test_acc)
    }

    /// Largest `|train_loss - (l_cls + alpha r_att - beta r_ent)|` over rows.
    /// Rows without an attention term are losses with no regularisers, for
    /// which the weights are taken as zero.
    pub fn accounting_error(&self, focus: &FocusConfig) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let recomposed = match r.mean_r_att {
                    Some(att) => r.mean_l_cls + focus.alpha * att - focus.beta * r.mean_r_ent,
                    None => r.mean_l_cls,
                };
                (r.train_loss - recomposed).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Heavy-ball update: `v <- momentum v + g; theta <- theta - lr v`.
pub fn sgd_step(
    params: &mut MlpParams,
    velocity: &mut MlpParams,
    grads: &GradBundle,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !params.same_shape(velocity) || !params.same_shape(&grads.grads) {
        return Err(Error::dims("sgd_step", "params", "velocity/gradient"));
    }
    let layers = params.layers_mut().iter_mut().zip(velocity.layers_mut()).zip(grads.grads.layers());
    for ((p, v), g) in layers {
        let pairs = [
            (p.weights.as_mut_slice(), v.weights.as_mut_slice(), g.weights.as_slice()),
            (p.biases.as_mut_slice(), v.biases.as_mut_slice(), g.biases.as_slice()),
        ];
        for (p, v, g) in pairs {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
    Ok(())
}

const EVAL_CHUNK: usize = 1024;

/// Fraction of examples whose argmax logit (lowest index on ties) is the label.
pub fn evaluate(params: &MlpParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    if dataset.feature_dim() != params.input_dim() || dataset.n_classes() > params.n_classes() {
        return Err(Error::dims(
            "evaluate",
            format!("model {} -> {}", params.input_dim(), params.n_classes()),
            format!("dataset {}-d with {} classes", dataset.feature_dim(), dataset.n_classes()),
        ));
    }
    let dim = dataset.feature_dim();
    let classes = params.n_classes();
    let x = dataset.all_features();
    let mut correct = 0usize;
    for start in (0..dataset.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let trace = model::forward_batch(params, &x[start * dim..end * dim], end - start);
        for (i, z) in (start..end).zip(trace.logits.chunks_exact(classes)) {
            if numerics::argmax(z) == dataset.label(i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn check_frozen(frozen: &MlpParams, data: &PreparedData, role: &str) -> Result<()> {
    if frozen.input_dim() != data.feature_dim() || frozen.n_classes() != data.n_classes() {
        return Err(Error::dims(
            "frozen network",
            format!("{role} {} -> {}", frozen.input_dim(), frozen.n_classes()),
            format!("data {}-d with {} classes", data.feature_dim(), data.n_classes()),
        ));
    }
    Ok(())
}

/// The shared training loop. `aux` is the frozen baseline or teacher when the
/// loss needs one; `on_epoch` sees the parameters after every epoch.
pub fn train<F>(
    cfg: &TrainConfig,
    data: &PreparedData,
    aux: Option<&MlpParams>,
    mut on_epoch: F,
) -> Result<(MlpParams, RunMetrics)>
where
    F: FnMut(usize, &MlpParams),
{
    cfg.validate_hyperparameters()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset("empty training set".into()));
    }
    let mut params = model::init(&cfg.model_config(data.feature_dim(), data.n_classes()))?;
    let mut velocity = params.zeros_like();
    let mut metrics = RunMetrics::default();
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        Rng::new(cfg.seed.wrapping_add(epoch as u64)).shuffle(&mut order);
        let (mut loss, mut l_cls, mut r_ent) = (0.0, 0.0, 0.0);
        let mut r_att: Option<f64> = None;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_dataset(&data.train, chunk)?;
            let (grads, stats) = autograd::backward_with_stats(&params, &batch, cfg.loss_kind, aux, &cfg.loss)?;
            sgd_step(&mut params, &mut velocity, &grads, lr, cfg.momentum)?;
            loss += stats.loss_sum;
            l_cls += stats.l_cls_sum;
            r_ent += stats.r_entropy_sum;
            if let Some(a) = stats.r_attention_sum {
                *r_att.get_or_insert(0.0) += a;
            }
            correct += stats.correct;
        }
        let nf = n as f64;
        let val_acc = data.val.as_ref().map(|v| evaluate(&params, v)).transpose()?;
        let test_acc = evaluate(&params, &data.test)?;
        metrics.rows.push(EpochMetrics {
            epoch,
            train_loss: loss / nf,
            train_acc: correct as f64 / nf,
            val_acc,
            test_acc,
            mean_l_cls: l_cls / nf,
            mean_r_att: r_att.map(|a| a / nf),
            mean_r_ent: r_ent / nf,
            wall_seconds: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        });
        on_epoch(epoch, &params);
    }
    Ok((params, metrics))
}

/// Phase one: plain cross-entropy.
pub fn train_baseline(cfg: &TrainConfig, data: &PreparedData) -> Result<(MlpParams, RunMetrics)> {
    if cfg.loss_kind != LossKind::BaselineCe {
        return Err(Error::InvalidArgument(format!(
            "train_baseline needs loss baseline_ce, got {}",
            cfg.loss_kind
        )));
    }
    train(cfg, data, None, |_, _| {})
}

/// Phase two: a freshly initialised network trained with the focusing-picking
/// loss against the frozen `baseline`.
pub fn train_clonal(cfg: &TrainConfig, data: &PreparedData, baseline: &MlpParams) -> Result<(MlpParams, RunMetrics)> {
    if cfg.loss_kind != LossKind::FocusingPicking {
        return Err(Error::InvalidArgument(format!(
            "train_clonal needs loss focusing_picking, got {}",
            cfg.loss_kind
        )));
    }
    check_frozen(baseline, data, "baseline")?;
    let before = baseline.fingerprint();
    let out = train(cfg, data, Some(baseline), |_, _| {})?;
    assert_eq!(before, baseline.fingerprint(), "baseline changed during clonal training");
    Ok(out)
}

/// Label smoothing, or distillation from `teacher`.
pub fn train_comparison(
    cfg: &TrainConfig,
    data: &PreparedData,
    teacher: Option<&MlpParams>,
) -> Result<(MlpParams, RunMetrics)> {
    match cfg.loss_kind {
        LossKind::LabelSmoothing => train(cfg, data, None, |_, _| {}),
        LossKind::Kd => {
            let teacher = teacher.ok_or_else(|| Error::MissingBaseline("kd requires a teacher network".into()))?;
            check_frozen(teacher, data, "teacher")?;
            train(cfg, data, Some(teacher), |_, _| {})
        }
        other => Err(Error::InvalidArgument(format!(
            "train_comparison needs label_smoothing or kd, got {other}"
        ))),
    }
}

/// Write `model.ckpt` and `metrics.csv` into `dir`, creating it if needed.
pub fn write_run(dir: impl AsRef<Path>, params: &MlpParams, metrics: &RunMetrics) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    params.save(dir.join(CHECKPOINT_FILE))?;
    metrics.write(dir.join(METRICS_FILE))
}
