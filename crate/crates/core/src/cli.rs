//! Command-line front end. Every subcommand writes its artifacts under
//! `--out` and reports failures as one `error: <category>: <message>` line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autograd::{FdReport, GradcheckProblem, LossConfig, LossKind};
use crate::config::{self, Settings};
use crate::error::{Error, Result};
use crate::labels;
use crate::model::MlpParams;
use crate::trainer::{self, PreparedData, RunMetrics, TrainConfig, METRICS_FILE};

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

pub const CONFIG_ECHO_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Parser)]
#[command(name = "clonalnet", version, about = "Multi-warm labels and the focusing-picking loss for MLP classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the baseline with plain cross-entropy.
    TrainBaseline(RunArgs),
    /// Train a fresh network with the focusing-picking loss against a frozen baseline.
    TrainClonal(RunArgs),
    /// Train with knowledge distillation from the network given by --baseline.
    TrainKd(RunArgs),
    /// Train with label smoothing.
    TrainLs(RunArgs),
    /// Accuracy of a checkpoint on the validation and test splits.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of the analytic gradient on a random small network.
    Gradcheck(GradcheckArgs),
    /// Multi-warm label statistics of a baseline over the training split.
    LabelStats(RunArgs),
    /// Train every method for several seeds and summarise final test accuracy.
    Compare(CompareArgs),
}

/// Flags shared by the training commands. Each maps onto a config key and
/// takes precedence over the config file.
#[derive(Debug, Args, Default)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<String>,
    /// Frozen baseline checkpoint (the teacher for train-kd).
    #[arg(long, value_name = "PATH", alias = "teacher")]
    baseline: Option<String>,
    #[arg(long, value_name = "F")]
    alpha: Option<String>,
    #[arg(long, value_name = "F")]
    beta: Option<String>,
    #[arg(long, value_name = "F")]
    temperature: Option<String>,
    #[arg(long, value_name = "F")]
    kd_weight: Option<String>,
    #[arg(long, value_name = "F")]
    ls_eps: Option<String>,
    #[arg(long, value_name = "BOOL")]
    detach_d: Option<String>,
    #[arg(long, value_name = "N")]
    epochs: Option<String>,
    #[arg(long, value_name = "F")]
    lr: Option<String>,
    #[arg(long, value_name = "F")]
    momentum: Option<String>,
    #[arg(long, value_name = "N")]
    batch_size: Option<String>,
    /// Hidden layer widths, comma-separated; empty for a linear model.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    hidden: Option<String>,
    /// Epochs at which the learning rate is multiplied by 0.1.
    #[arg(long, value_name = "LIST")]
    lr_decay_epochs: Option<String>,
    #[arg(long, value_name = "BOOL")]
    record_wall_time: Option<String>,
    #[arg(long, value_name = "mnist|synthetic")]
    dataset: Option<String>,
    #[arg(long, value_name = "U64")]
    data_seed: Option<String>,
    #[arg(long, value_name = "DIR")]
    mnist_dir: Option<String>,
    #[arg(long, value_name = "PATH")]
    idx_images: Option<String>,
    #[arg(long, value_name = "PATH")]
    idx_labels: Option<String>,
    #[arg(long, value_name = "PATH")]
    idx_test_images: Option<String>,
    #[arg(long, value_name = "PATH")]
    idx_test_labels: Option<String>,
    #[arg(long, value_name = "F")]
    holdout_fraction: Option<String>,
    #[arg(long, value_name = "N")]
    n_pairs: Option<String>,
    #[arg(long, value_name = "F")]
    pair_overlap: Option<String>,
    #[arg(long, value_name = "N")]
    dim: Option<String>,
    #[arg(long, value_name = "N")]
    per_class: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("seed", &self.seed),
            ("baseline", &self.baseline),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("temperature", &self.temperature),
            ("kd_weight", &self.kd_weight),
            ("ls_eps", &self.ls_eps),
            ("detach_d", &self.detach_d),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("batch_size", &self.batch_size),
            ("hidden", &self.hidden),
            ("lr_decay_epochs", &self.lr_decay_epochs),
            ("record_wall_time", &self.record_wall_time),
            ("dataset", &self.dataset),
            ("data_seed", &self.data_seed),
            ("mnist_dir", &self.mnist_dir),
            ("idx_images", &self.idx_images),
            ("idx_labels", &self.idx_labels),
            ("idx_test_images", &self.idx_test_images),
            ("idx_test_labels", &self.idx_test_labels),
            ("holdout_fraction", &self.holdout_fraction),
            ("n_pairs", &self.n_pairs),
            ("pair_overlap", &self.pair_overlap),
            ("dim", &self.dim),
            ("per_class", &self.per_class),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    /// Config file, then flags. `loss` pins the subcommand's loss; a config
    /// file naming a different one is rejected.
    fn settings(&self, loss: Option<LossKind>) -> Result<Settings> {
        let mut settings = Settings::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if let (Some(want), Some(found)) = (loss, config::declared_loss(&text)?) {
                if want != found {
                    return Err(Error::Usage(format!(
                        "config {} declares loss {found}, which conflicts with this subcommand ({want})",
                        path.display()
                    )));
                }
            }
            settings.apply_text(&text)?;
        }
        for (key, value) in self.overrides() {
            settings
                .set(key, value)
                .map_err(|e| Error::Config(format!("--{}: {}", key.replace('_', "-"), e)))?;
        }
        if let Some(kind) = loss {
            settings.train.loss_kind = kind;
        }
        Ok(settings)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("runs").join(default))
    }
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_name = "KIND")]
    loss: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "BOOL", default_value = "false")]
    detach_d: String,
    /// Number of random problems, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    instances: u64,
    #[arg(long, default_value_t = 20)]
    n_coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Number of seeds; seeds run from --seed (default 0) upwards.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Comma-separated subset of baseline,clonal,kd,ls.
    #[arg(long, default_value = "baseline,clonal,kd,ls")]
    methods: String,
    /// Only summarise runs already present under --out.
    #[arg(long)]
    report_only: bool,
    #[command(flatten)]
    run: RunArgs,
}

/// Method names used by `compare`, with the loss each one trains.
pub const METHODS: [(&str, LossKind); 4] = [
    ("baseline", LossKind::BaselineCe),
    ("clonal", LossKind::FocusingPicking),
    ("kd", LossKind::Kd),
    ("ls", LossKind::LabelSmoothing),
];

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_data(cfg: &TrainConfig) -> Result<PreparedData> {
    PreparedData::load(&cfg.dataset, cfg.data_seed())
}

fn load_frozen(cfg: &TrainConfig) -> Result<MlpParams> {
    let path = cfg
        .baseline_checkpoint
        .as_ref()
        .ok_or_else(|| Error::MissingBaseline(format!("{} needs --baseline PATH", cfg.loss_kind)))?;
    MlpParams::load(path)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::TrainBaseline(args) => train_command(&args, LossKind::BaselineCe, "baseline"),
        Command::TrainClonal(args) => train_command(&args, LossKind::FocusingPicking, "clonal"),
        Command::TrainKd(args) => train_command(&args, LossKind::Kd, "kd"),
        Command::TrainLs(args) => train_command(&args, LossKind::LabelSmoothing, "ls"),
        Command::Eval { checkpoint, run } => eval_command(&checkpoint, &run),
        Command::Gradcheck(args) => gradcheck_command(&args),
        Command::LabelStats(args) => label_stats_command(&args),
        Command::Compare(args) => compare_command(&args),
    }
}

/// Train one run of `kind` and write its checkpoint, metrics and config echo.
fn run_one(settings: &Settings, out: &Path, data: Option<&PreparedData>) -> Result<RunMetrics> {
    let cfg = settings.resolve();
    cfg.validate()?;
    let frozen = if cfg.loss_kind.needs_aux() { Some(load_frozen(&cfg)?) } else { None };
    let owned;
    let data = match data {
        Some(d) => d,
        None => {
            owned = load_data(&cfg)?;
            &owned
        }
    };
    let (params, metrics) = match cfg.loss_kind {
        LossKind::BaselineCe => trainer::train_baseline(&cfg, data)?,
        LossKind::FocusingPicking => trainer::train_clonal(&cfg, data, frozen.as_ref().expect("loaded"))?,
        LossKind::Kd | LossKind::LabelSmoothing => trainer::train_comparison(&cfg, data, frozen.as_ref())?,
    };
    trainer::write_run(out, &params, &metrics)?;
    write_text(&out.join(CONFIG_ECHO_FILE), &settings.to_text())?;
    Ok(metrics)
}

fn train_command(args: &RunArgs, kind: LossKind, default_out: &str) -> Result<i32> {
    let settings = args.settings(Some(kind))?;
    let out = args.out_dir(default_out);
    let metrics = run_one(&settings, &out, None)?;
    match metrics.rows.last() {
        Some(r) => println!(
            "{kind}: epoch {} test_acc {} train_loss {} -> {}",
            r.epoch,
            r.test_acc,
            r.train_loss,
            out.display()
        ),
        None => println!("{kind}: 0 epochs -> {}", out.display()),
    }
    Ok(0)
}

fn eval_command(checkpoint: &Path, args: &RunArgs) -> Result<i32> {
    let cfg = args.settings(None)?.resolve();
    let params = MlpParams::load(checkpoint)?;
    let data = load_data(&cfg)?;
    let mut csv = String::from("split,accuracy\n");
    if let Some(val) = &data.val {
        let _ = writeln!(csv, "val,{}", trainer::evaluate(&params, val)?);
    }
    let _ = writeln!(csv, "test,{}", trainer::evaluate(&params, &data.test)?);
    print!("{csv}");
    if let Some(out) = &args.out {
        write_text(&out.join("eval.csv"), &csv)?;
    }
    Ok(0)
}

fn gradcheck_command(args: &GradcheckArgs) -> Result<i32> {
    let kind: LossKind = args
        .loss
        .parse()
        .map_err(|_| Error::Usage(format!("unknown loss {:?}", args.loss)))?;
    let detach_d = match args.detach_d.as_str() {
        "true" => true,
        "false" => false,
        other => return Err(Error::Usage(format!("--detach-d expects true or false, got {other:?}"))),
    };
    let cfg = LossConfig {
        detach_d,
        ..LossConfig::default()
    };
    let mut csv = format!("{}\n", FdReport::CSV_HEADER);
    let mut worst: f64 = 0.0;
    for i in 0..args.instances.max(1) {
        let seed = args.seed.wrapping_add(i);
        let report = GradcheckProblem::random(seed).check(kind, &cfg, args.n_coords, args.step, seed)?;
        worst = worst.max(report.max_rel_error);
        let _ = writeln!(csv, "{}", report.csv_row(kind.as_str()));
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        write_text(&out.join("gradcheck.csv"), &csv)?;
    }
    if worst < GRADCHECK_TOLERANCE {
        Ok(0)
    } else {
        eprintln!("error: gradient-mismatch: max_rel_error {worst:e} >= {GRADCHECK_TOLERANCE:e}");
        Ok(1)
    }
}

fn label_stats_command(args: &RunArgs) -> Result<i32> {
    let cfg = args.settings(None)?.resolve();
    let baseline = load_frozen(&TrainConfig {
        loss_kind: LossKind::FocusingPicking,
        ..cfg.clone()
    })?;
    let data = load_data(&cfg)?;
    let stats = labels::label_stats(&data.train, &baseline)?;
    let out = args.out_dir("label-stats");
    write_text(&out.join("label_stats.csv"), &stats.to_csv())?;
    write_text(&out.join("label_cooccurrence.csv"), &stats.cooccurrence_csv())?;
    println!(
        "examples {} mean_support {} frac_multi {} -> {}",
        stats.total(),
        stats.mean_support(),
        stats.frac_multi(),
        out.display()
    );
    Ok(0)
}

fn parse_methods(list: &str) -> Result<Vec<(&'static str, LossKind)>> {
    let mut wanted = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = METHODS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Usage(format!("unknown method {name:?}; expected baseline, clonal, kd or ls")))?;
        if !wanted.contains(m) {
            wanted.push(*m);
        }
    }
    if wanted.is_empty() {
        return Err(Error::Usage("no methods selected".into()));
    }
    // methods with a frozen network need that seed's baseline
    if wanted.iter().any(|(_, k)| k.needs_aux()) && !wanted.iter().any(|(n, _)| *n == "baseline") {
        wanted.insert(0, METHODS[0]);
    }
    wanted.sort_by_key(|m| METHODS.iter().position(|x| x == m));
    Ok(wanted)
}

/// `<out>/<method>/seed-<seed>`.
pub fn run_dir(out: &Path, method: &str, seed: u64) -> PathBuf {
    out.join(method).join(format!("seed-{seed}"))
}

fn compare_command(args: &CompareArgs) -> Result<i32> {
    let methods = parse_methods(&args.methods)?;
    let base = args.run.settings(None)?;
    let out = args.run.out_dir("compare");
    let first = base.train.seed;
    let seeds: Vec<u64> = (0..args.seeds.max(1)).map(|i| first.wrapping_add(i)).collect();
    if !args.report_only {
        for &seed in &seeds {
            let mut s = base.clone();
            s.train.seed = seed;
            let data = load_data(&s.resolve())?;
            let baseline_ckpt = run_dir(&out, "baseline", seed).join(trainer::CHECKPOINT_FILE);
            for &(name, kind) in &methods {
                let mut m = s.clone();
                m.train.loss_kind = kind;
                if kind.needs_aux() {
                    m.train.baseline_checkpoint = Some(baseline_ckpt.clone());
                }
                let dir = run_dir(&out, name, seed);
                let metrics = run_one(&m, &dir, Some(&data))?;
                println!(
                    "{name} seed {seed}: test_acc {}",
                    metrics.final_test_acc().map(|a| a.to_string()).unwrap_or_default()
                );
            }
        }
    }
    let runs: Vec<(String, Vec<PathBuf>)> = methods
        .iter()
        .map(|(name, _)| (name.to_string(), seeds.iter().map(|s| run_dir(&out, name, *s)).collect()))
        .collect();
    let summary = compare_report(&runs)?;
    write_text(&out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    Ok(0)
}

/// Header of the comparison summary.
pub const SUMMARY_HEADER: &str = "method,n_runs,mean_test_acc,std_test_acc,improvement_pp";

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summarise final-epoch test accuracy per method. `improvement_pp` is the
/// gain over the `baseline` method's mean in percentage points, empty when
/// no baseline is listed.
pub fn compare_report(runs: &[(String, Vec<PathBuf>)]) -> Result<String> {
    let mut rows = Vec::with_capacity(runs.len());
    for (method, dirs) in runs {
        if dirs.is_empty() {
            return Err(Error::InvalidArgument(format!("method {method} has no runs")));
        }
        let mut accs = Vec::with_capacity(dirs.len());
        for dir in dirs {
            let path = dir.join(METRICS_FILE);
            let metrics = RunMetrics::read(&path)?;
            accs.push(metrics.final_test_acc().ok_or_else(|| Error::MissingMetrics(path.clone()))?);
        }
        let (mean, std) = mean_std(&accs);
        rows.push((method.as_str(), accs.len(), mean, std));
    }
    let base = rows.iter().find(|r| r.0 == "baseline").map(|r| r.2);
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (method, n, mean, std) in rows {
        let gain = base.map(|b| ((mean - b) * 100.0).to_string()).unwrap_or_default();
        let _ = writeln!(out, "{method},{n},{mean},{std},{gain}");
    }
    Ok(out)
}
