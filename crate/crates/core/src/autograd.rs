//! Analytic gradients of the mean batch loss for every supported loss, and a
//! central-difference harness that checks them.
//!
//! Each loss reduces to a per-example gradient with respect to the logits,
//! which is then pushed back through the MLP with batched matrix products.
//! Frozen networks (baseline or teacher) are only ever borrowed immutably and
//! never receive a gradient.

use std::fmt;
use std::str::FromStr;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::labels;
use crate::losses::{self, FocusConfig, KdConfig};
use crate::model::{self, BatchTrace, MlpConfig, MlpParams};
use crate::numerics::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    BaselineCe,
    FocusingPicking,
    LabelSmoothing,
    Kd,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::BaselineCe,
        LossKind::FocusingPicking,
        LossKind::LabelSmoothing,
        LossKind::Kd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BaselineCe => "baseline_ce",
            LossKind::FocusingPicking => "focusing_picking",
            LossKind::LabelSmoothing => "label_smoothing",
            LossKind::Kd => "kd",
        }
    }

    /// Whether a frozen second network (baseline or teacher) is required.
    pub fn needs_aux(self) -> bool {
        matches!(self, LossKind::FocusingPicking | LossKind::Kd)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind {s:?}")))
    }
}

/// Hyperparameters of all losses; each loss reads only its own fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub focus: FocusConfig,
    pub kd: KdConfig,
    pub ls_eps: f64,
    /// Treat `d` as a constant when differentiating the re-weighted softmax.
    pub detach_d: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focus: FocusConfig::default(),
            kd: KdConfig::default(),
            ls_eps: 0.1,
            detach_d: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, kind: LossKind) -> Result<()> {
        match kind {
            LossKind::BaselineCe => Ok(()),
            LossKind::FocusingPicking => self.focus.validate(),
            LossKind::LabelSmoothing => losses::check_eps(self.ls_eps),
            LossKind::Kd => self.kd.validate(),
        }
    }
}

/// A mini-batch: row-major features plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if labels.is_empty() || dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::dims(
                "Batch::new",
                format!("{} labels x {dim} features", labels.len()),
                format!("{} values", features.len()),
            ));
        }
        Ok(Self { features, labels, dim })
    }

    pub fn from_dataset(data: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * data.feature_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(data.features(i));
            labels.push(data.label(i));
        }
        Self::new(features, labels, data.feature_dim())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Gradient of the mean batch loss, shaped exactly like the student.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub grads: MlpParams,
    pub loss_value: f64,
}

/// Per-batch sums gathered while computing a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub n: usize,
    pub loss_sum: f64,
    pub l_cls_sum: f64,
    /// Only populated by the focusing-picking loss.
    pub r_attention_sum: Option<f64>,
    /// Entropy of the plain softmax; a regulariser for focusing-picking and a
    /// diagnostic for every other loss.
    pub r_entropy_sum: f64,
    /// Examples whose argmax logit equals the label.
    pub correct: usize,
}

/// Loss value and logit gradient of one example.
#[derive(Debug, Clone, PartialEq)]
struct ExampleGrad {
    loss: f64,
    l_cls: f64,
    r_attention: Option<f64>,
    r_entropy: f64,
    dz: Vec<f64>,
}

fn entropy_from_log(log_p: &[f64]) -> f64 {
    -log_p.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

fn ce_grad(z: &[f64], gt: usize) -> ExampleGrad {
    let log_p = numerics::log_softmax_slice(z);
    let mut dz = numerics::softmax_slice(z);
    dz[gt] -= 1.0;
    let loss = -log_p[gt];
    ExampleGrad {
        loss,
        l_cls: loss,
        r_attention: None,
        r_entropy: entropy_from_log(&log_p),
        dz,
    }
}

fn ls_grad(z: &[f64], gt: usize, eps: f64) -> ExampleGrad {
    let target = losses::smoothed_target(z.len(), gt, eps);
    let log_p = numerics::log_softmax_slice(z);
    let p = numerics::softmax_slice(z);
    let loss = -target.iter().zip(&log_p).map(|(t, lp)| t * lp).sum::<f64>();
    let dz = p.iter().zip(&target).map(|(p, t)| p - t).collect();
    ExampleGrad {
        loss,
        l_cls: loss,
        r_attention: None,
        r_entropy: entropy_from_log(&log_p),
        dz,
    }
}

fn kd_grad(z: &[f64], z_t: &[f64], gt: usize, cfg: &KdConfig) -> ExampleGrad {
    let (t, w) = (cfg.temperature, cfg.weight);
    let log_p = numerics::log_softmax_slice(z);
    let mut hard = numerics::softmax_slice(z);
    hard[gt] -= 1.0;
    let zs: Vec<f64> = z.iter().map(|v| v / t).collect();
    let zt: Vec<f64> = z_t.iter().map(|v| v / t).collect();
    let ps = numerics::softmax_slice(&zs);
    let q = numerics::softmax_slice(&zt);
    // d/dz [T^2 CE(softmax(z/T), q)] = T (softmax(z/T) - q)
    let dz = hard
        .iter()
        .zip(ps.iter().zip(&q))
        .map(|(h, (ps, q))| (1.0 - w) * h + w * t * (ps - q))
        .collect();
    let loss = losses::kd_value(z, z_t, gt, cfg);
    ExampleGrad {
        loss,
        l_cls: loss,
        r_attention: None,
        r_entropy: entropy_from_log(&log_p),
        dz,
    }
}

/// Logit gradients of the three focusing-picking components, unweighted:
/// `(dL_cls/dz, dR_attention/dz, dR_entropy/dz)`.
///
/// With `detach_d` the classification gradient is `q - y`, where `q` is the
/// re-weighted softmax. Otherwise it also flows through `d = softmax(z) -
/// softmax(z_b)`: `g + J_p g` with `g = q - y` and `J_p = diag(p) - p p^T`.
pub fn focus_logit_grads(
    z: &[f64],
    z_b: &[f64],
    gt: usize,
    label: &[f64],
    detach_d: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = numerics::softmax_slice(z);
    let log_p = numerics::log_softmax_slice(z);
    let d = losses::difference(z, z_b);
    let shifted: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z + d).collect();
    let mut g = numerics::softmax_slice(&shifted);
    g[gt] -= 1.0;
    let g_cls = if detach_d {
        g
    } else {
        let pg = numerics::dot(&p, &g);
        g.iter().zip(&p).map(|(g, p)| g + p * (g - pg)).collect()
    };
    let g_att = p.iter().zip(label).map(|(p, l)| p - l).collect();
    let h = entropy_from_log(&log_p);
    let g_ent = p.iter().zip(&log_p).map(|(p, lp)| -p * (lp + h)).collect();
    (g_cls, g_att, g_ent)
}

fn focus_grad(z: &[f64], z_b: &[f64], gt: usize, cfg: &LossConfig) -> Result<ExampleGrad> {
    let label = labels::multi_warm_slice(z_b, gt)?;
    let label = label.normalized.as_slice();
    let d = losses::difference(z, z_b);
    let terms = losses::focus_terms(z, &d, gt, label);
    let (g_cls, g_att, g_ent) = focus_logit_grads(z, z_b, gt, label, cfg.detach_d);
    let FocusConfig { alpha, beta } = cfg.focus;
    let dz = g_cls
        .iter()
        .zip(g_att.iter().zip(&g_ent))
        .map(|(c, (a, e))| c + alpha * a - beta * e)
        .collect();
    Ok(ExampleGrad {
        loss: terms.total(&cfg.focus),
        l_cls: terms.l_cls,
        r_attention: Some(terms.r_attention),
        r_entropy: terms.r_entropy,
        dz,
    })
}

fn check_aux(student: &MlpParams, aux: Option<&MlpParams>, kind: LossKind) -> Result<()> {
    if !kind.needs_aux() {
        return Ok(());
    }
    let aux = aux.ok_or_else(|| {
        Error::MissingBaseline(format!("loss {kind} needs a frozen baseline/teacher network"))
    })?;
    if aux.input_dim() != student.input_dim() || aux.n_classes() != student.n_classes() {
        return Err(Error::dims(
            "frozen network",
            format!("student {} -> {}", student.input_dim(), student.n_classes()),
            format!("aux {} -> {}", aux.input_dim(), aux.n_classes()),
        ));
    }
    Ok(())
}

fn check_batch(params: &MlpParams, batch: &Batch) -> Result<()> {
    if batch.dim != params.input_dim() {
        return Err(Error::dims("batch features", params.input_dim(), batch.dim));
    }
    if let Some(y) = batch.labels.iter().find(|y| **y >= params.n_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            params.n_classes()
        )));
    }
    Ok(())
}

/// Per-example losses and logit gradients for a batch, plus the student trace.
fn example_grads(
    params: &MlpParams,
    batch: &Batch,
    kind: LossKind,
    aux: Option<&MlpParams>,
    cfg: &LossConfig,
) -> Result<(BatchTrace, Vec<ExampleGrad>)> {
    check_batch(params, batch)?;
    check_aux(params, aux, kind)?;
    cfg.validate(kind)?;
    let n = batch.len();
    let classes = params.n_classes();
    let trace = model::forward_batch(params, &batch.features, n);
    let aux_logits = match (kind.needs_aux(), aux) {
        (true, Some(frozen)) => Some(model::forward_batch(frozen, &batch.features, n).logits),
        _ => None,
    };
    let mut out = Vec::with_capacity(n);
    for (i, z) in trace.logits.chunks_exact(classes).enumerate() {
        let gt = batch.labels[i];
        let frozen = aux_logits.as_ref().map(|l| &l[i * classes..(i + 1) * classes]);
        let eg = match kind {
            LossKind::BaselineCe => ce_grad(z, gt),
            LossKind::LabelSmoothing => ls_grad(z, gt, cfg.ls_eps),
            LossKind::Kd => kd_grad(z, frozen.expect("checked"), gt, &cfg.kd),
            LossKind::FocusingPicking => focus_grad(z, frozen.expect("checked"), gt, cfg)?,
        };
        out.push(eg);
    }
    Ok((trace, out))
}

/// Push per-example logit gradients back through the network. `dz` holds
/// `batch x n_classes` entries already scaled for the batch mean.
fn backprop(params: &MlpParams, x: &[f64], trace: &BatchTrace, mut dz: Vec<f64>) -> MlpParams {
    let batch = trace.batch;
    let mut grads = params.zeros_like();
    for l in (0..params.layers().len()).rev() {
        let layer = &params.layers()[l];
        let (out_dim, in_dim) = layer.weights.shape();
        let input = if l == 0 { x } else { trace.post[l - 1].as_slice() };
        let g = &mut grads.layers_mut()[l];
        numerics::gemm_tn(&dz, input, out_dim, batch, in_dim, g.weights.as_mut_slice());
        let db = g.biases_mut();
        for row in dz.chunks_exact(out_dim) {
            for (b, v) in db.iter_mut().zip(row) {
                *b += v;
            }
        }
        if l > 0 {
            let mut dh = vec![0.0; batch * in_dim];
            numerics::gemm_nn(&dz, layer.weights.as_slice(), batch, out_dim, in_dim, &mut dh);
            for (v, pre) in dh.iter_mut().zip(&trace.pre[l - 1]) {
                if *pre <= 0.0 {
                    *v = 0.0;
                }
            }
            dz = dh;
        }
    }
    grads
}

pub(crate) fn backward_with_stats(
    params: &MlpParams,
    batch: &Batch,
    kind: LossKind,
    aux: Option<&MlpParams>,
    cfg: &LossConfig,
) -> Result<(GradBundle, BatchStats)> {
    let (trace, per_example) = example_grads(params, batch, kind, aux, cfg)?;
    let n = batch.len();
    let classes = params.n_classes();
    let scale = 1.0 / n as f64;
    let mut stats = BatchStats {
        n,
        ..BatchStats::default()
    };
    let mut dz = Vec::with_capacity(n * classes);
    for (i, eg) in per_example.iter().enumerate() {
        stats.loss_sum += eg.loss;
        stats.l_cls_sum += eg.l_cls;
        stats.r_entropy_sum += eg.r_entropy;
        if let Some(r) = eg.r_attention {
            *stats.r_attention_sum.get_or_insert(0.0) += r;
        }
        let z = &trace.logits[i * classes..(i + 1) * classes];
        if numerics::argmax(z) == batch.labels[i] {
            stats.correct += 1;
        }
        dz.extend(eg.dz.iter().map(|g| g * scale));
    }
    let grads = backprop(params, &batch.features, &trace, dz);
    Ok((
        GradBundle {
            grads,
            loss_value: stats.loss_sum * scale,
        },
        stats,
    ))
}

/// Exact gradient of the mean batch loss with respect to the student only.
///
/// `aux` is the frozen baseline for [`LossKind::FocusingPicking`] or the
/// teacher for [`LossKind::Kd`]; it is ignored by the other losses.
pub fn backward(
    params: &MlpParams,
    batch: &Batch,
    kind: LossKind,
    aux: Option<&MlpParams>,
    cfg: &LossConfig,
) -> Result<GradBundle> {
    backward_with_stats(params, batch, kind, aux, cfg).map(|(g, _)| g)
}

/// Mean batch loss without the gradient.
pub fn batch_loss(
    params: &MlpParams,
    batch: &Batch,
    kind: LossKind,
    aux: Option<&MlpParams>,
    cfg: &LossConfig,
) -> Result<f64> {
    let (_, per_example) = example_grads(params, batch, kind, aux, cfg)?;
    Ok(per_example.iter().map(|e| e.loss).sum::<f64>() / batch.len() as f64)
}

/// Backpropagate a caller-supplied per-example logit loss. `logit_loss`
/// receives `(example index, logits)` and returns `(loss, dloss/dlogits)`.
pub fn backward_with_logit_grad<F>(params: &MlpParams, batch: &Batch, mut logit_loss: F) -> Result<GradBundle>
where
    F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
{
    check_batch(params, batch)?;
    let n = batch.len();
    let classes = params.n_classes();
    let trace = model::forward_batch(params, &batch.features, n);
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dz = Vec::with_capacity(n * classes);
    for (i, z) in trace.logits.chunks_exact(classes).enumerate() {
        let (l, g) = logit_loss(i, z);
        if g.len() != classes {
            return Err(Error::dims("logit gradient", classes, g.len()));
        }
        loss += l;
        dz.extend(g.iter().map(|v| v * scale));
    }
    let grads = backprop(params, &batch.features, &trace, dz);
    Ok(GradBundle {
        grads,
        loss_value: loss * scale,
    })
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Largest `|a - f| / max(|a|, |f|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(layer, row, col)`; `col == in_dim` is the bias.
    pub worst_parameter: (usize, usize, usize),
    pub n_checked: usize,
    pub step: f64,
    pub seed: u64,
}

impl FdReport {
    pub const CSV_HEADER: &'static str = "loss_kind,max_rel_error,n_checked,step,seed";

    pub fn csv_row(&self, kind: &str) -> String {
        format!(
            "{kind},{:e},{},{:e},{}",
            self.max_rel_error, self.n_checked, self.step, self.seed
        )
    }
}

pub(crate) fn rel_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-8)
}

fn all_coords(params: &MlpParams) -> Vec<(usize, usize, usize)> {
    let mut coords = Vec::with_capacity(params.param_count());
    for (l, layer) in params.layers().iter().enumerate() {
        for r in 0..layer.out_dim() {
            for c in 0..=layer.in_dim() {
                coords.push((l, r, c));
            }
        }
    }
    coords
}

fn grad_coord(grads: &MlpParams, (l, r, c): (usize, usize, usize)) -> f64 {
    grads.coord(l, r, c)
}

/// Central-difference check of an arbitrary scalar function of the
/// parameters against a supplied gradient on `n_coords` random coordinates.
/// `accept` may veto a coordinate given the two perturbed parameter sets.
pub fn fd_check_fn<L, A>(
    params: &MlpParams,
    analytic: &MlpParams,
    mut loss: L,
    mut accept: A,
    n_coords: usize,
    step: f64,
    seed: u64,
) -> Result<FdReport>
where
    L: FnMut(&MlpParams) -> Result<f64>,
    A: FnMut(&MlpParams, &MlpParams) -> bool,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    if !params.same_shape(analytic) {
        return Err(Error::dims("fd_check", "parameters", "gradient"));
    }
    let coords = all_coords(params);
    let mut rng = Rng::new(seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_parameter: coords[0],
        n_checked: 0,
        step,
        seed,
    };
    let mut plus = params.clone();
    let mut minus = params.clone();
    let max_attempts = 50 * n_coords.max(1);
    let mut attempts = 0;
    while report.n_checked < n_coords && attempts < max_attempts {
        attempts += 1;
        let coord @ (l, r, c) = coords[rng.below(coords.len())];
        let base = params.coord(l, r, c);
        plus.set_coord(l, r, c, base + step);
        minus.set_coord(l, r, c, base - step);
        if accept(&plus, &minus) {
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
            let err = rel_error(grad_coord(analytic, coord), numeric);
            if report.n_checked == 0 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_parameter = coord;
            }
            report.n_checked += 1;
        }
        plus.set_coord(l, r, c, base);
        minus.set_coord(l, r, c, base);
    }
    Ok(report)
}

/// Smallest pre-activation magnitude tolerated near a ReLU kink.
pub const KINK_MARGIN: f64 = 1e-4;

/// `lse(z + dz) - lse(z)` from `p = softmax(z)`, without cancellation.
fn lse_delta(p: &[f64], dz: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    let s: f64 = p.iter().zip(dz).map(|(p, d)| p * d.exp_m1()).sum::<f64>() / total;
    s.ln_1p()
}

/// `softmax(z + dz) - softmax(z)` from `p = softmax(z)`.
fn softmax_delta(p: &[f64], dz: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    let s: f64 = p.iter().zip(dz).map(|(p, d)| p * d.exp_m1()).sum::<f64>() / total;
    p.iter().zip(dz).map(|(p, d)| p * (d.exp_m1() - s) / (1.0 + s)).collect()
}

/// `H(softmax(z + dz)) - H(softmax(z))`.
fn entropy_delta(p: &[f64], log_p: &[f64], dz: &[f64]) -> f64 {
    let dp = softmax_delta(p, dz);
    let s = lse_delta(p, dz);
    let a: f64 = dp.iter().zip(log_p).map(|(dp, lp)| dp * lp).sum();
    let b: f64 = p.iter().zip(&dp).zip(dz).map(|((p, dp), d)| (p + dp) * d).sum();
    s - a - b
}

fn dot_delta(w: &[f64], dz: &[f64]) -> f64 {
    w.iter().zip(dz).map(|(w, d)| w * d).sum()
}

/// Change of one example's loss when its logits move from `z` to `z + dz`,
/// evaluated in difference form so that it carries the relative precision of
/// `dz` rather than the absolute precision of the loss.
fn loss_delta(kind: LossKind, cfg: &LossConfig, z: &[f64], z_aux: Option<&[f64]>, gt: usize, dz: &[f64]) -> Result<f64> {
    let p = numerics::softmax_slice(z);
    let ce = || lse_delta(&p, dz) - dz[gt];
    Ok(match kind {
        LossKind::BaselineCe => ce(),
        LossKind::LabelSmoothing => {
            let t = losses::smoothed_target(z.len(), gt, cfg.ls_eps);
            lse_delta(&p, dz) - dot_delta(&t, dz)
        }
        LossKind::Kd => {
            let (t, w) = (cfg.kd.temperature, cfg.kd.weight);
            let z_t = z_aux.expect("checked");
            let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
            let dscaled: Vec<f64> = dz.iter().map(|v| v / t).collect();
            let q = numerics::softmax_slice(&z_t.iter().map(|v| v / t).collect::<Vec<_>>());
            let ps = numerics::softmax_slice(&scaled);
            (1.0 - w) * ce() + w * t * t * (lse_delta(&ps, &dscaled) - dot_delta(&q, &dscaled))
        }
        LossKind::FocusingPicking => {
            let z_b = z_aux.expect("checked");
            let label = labels::multi_warm_slice(z_b, gt)?;
            let d = losses::difference(z, z_b);
            let shifted: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z + d).collect();
            let q = numerics::softmax_slice(&shifted);
            let du: Vec<f64> = if cfg.detach_d {
                dz.to_vec()
            } else {
                dz.iter().zip(softmax_delta(&p, dz)).map(|(a, b)| a + b).collect()
            };
            let cls = lse_delta(&q, &du) - du[gt];
            let att = lse_delta(&p, dz) - dot_delta(label.normalized.as_slice(), dz);
            let ent = entropy_delta(&p, &numerics::log_softmax_slice(z), dz);
            cls + cfg.focus.alpha * att - cfg.focus.beta * ent
        }
    })
}

/// Logit change caused by adding `step` to one parameter, with every ReLU
/// mask held at its unperturbed state. `None` when some affected unit lies
/// within the perturbation (or [`KINK_MARGIN`]) of its kink, since the mask
/// could then flip.
fn logit_shift(
    params: &MlpParams,
    x: &[f64],
    trace: &BatchTrace,
    (layer, row, col): (usize, usize, usize),
    step: f64,
) -> Option<Vec<f64>> {
    let batch = trace.batch;
    let layers = params.layers();
    let in_dim = layers[layer].in_dim();
    let out_dim = layers[layer].out_dim();
    let input = if layer == 0 { x } else { trace.post[layer - 1].as_slice() };
    let mut delta = vec![0.0; batch * out_dim];
    for i in 0..batch {
        delta[i * out_dim + row] = if col == in_dim { step } else { step * input[i * in_dim + col] };
    }
    for l in layer + 1..layers.len() {
        let pre = &trace.pre[l - 1];
        let width = layers[l - 1].out_dim();
        for (d, p) in delta.iter_mut().zip(pre) {
            if *d != 0.0 && p.abs() < KINK_MARGIN.max(d.abs()) {
                return None;
            }
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        let next = layers[l].out_dim();
        let mut out = vec![0.0; batch * next];
        numerics::gemm_nt(&delta, layers[l].weights.as_slice(), batch, width, next, &mut out);
        delta = out;
    }
    Some(delta)
}

/// Finite-difference check of [`backward`] on `n_coords` random coordinates.
///
/// Central differences `(L(theta + h) - L(theta - h)) / 2h`. Both loss changes
/// are measured from the unperturbed point in difference form, which keeps
/// roundoff far below the gradient even for coordinates whose gradient is
/// tiny. Coordinates whose perturbation could flip a ReLU are skipped.
#[allow(clippy::too_many_arguments)]
pub fn fd_check(
    params: &MlpParams,
    batch: &Batch,
    kind: LossKind,
    aux: Option<&MlpParams>,
    cfg: &LossConfig,
    n_coords: usize,
    step: f64,
    seed: u64,
) -> Result<FdReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let analytic = backward(params, batch, kind, aux, cfg)?.grads;
    let n = batch.len();
    let classes = params.n_classes();
    let trace = model::forward_batch(params, batch.features(), n);
    let aux_logits = aux
        .filter(|_| kind.needs_aux())
        .map(|a| model::forward_batch(a, batch.features(), n).logits);
    let coords = all_coords(params);
    let mut rng = Rng::new(seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_parameter: coords[0],
        n_checked: 0,
        step,
        seed,
    };
    let mut attempts = 0;
    while report.n_checked < n_coords && attempts < 50 * n_coords.max(1) {
        attempts += 1;
        let coord = coords[rng.below(coords.len())];
        let Some(shift) = logit_shift(params, batch.features(), &trace, coord, step) else {
            continue;
        };
        let mut diff = 0.0;
        for i in 0..n {
            let span = i * classes..(i + 1) * classes;
            let z = &trace.logits[span.clone()];
            let z_aux = aux_logits.as_ref().map(|l| &l[span.clone()]);
            let up = &shift[span];
            let down: Vec<f64> = up.iter().map(|v| -v).collect();
            let gt = batch.labels()[i];
            diff += loss_delta(kind, cfg, z, z_aux, gt, up)? - loss_delta(kind, cfg, z, z_aux, gt, &down)?;
        }
        let numeric = diff / (2.0 * step * n as f64);
        let err = rel_error(grad_coord(&analytic, coord), numeric);
        if report.n_checked == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_parameter = coord;
        }
        report.n_checked += 1;
    }
    Ok(report)
}

/// A random gradient-check problem: student, frozen network and batch.
#[derive(Debug, Clone)]
pub struct GradcheckProblem {
    pub student: MlpParams,
    pub frozen: MlpParams,
    pub batch: Batch,
}

impl GradcheckProblem {
    pub const INPUT_DIM: usize = 6;
    pub const HIDDEN: [usize; 1] = [8];
    pub const N_CLASSES: usize = 5;
    pub const BATCH: usize = 4;

    /// Student `6 -> [8] -> 5` with random biases, an independently drawn
    /// frozen network of the same shape, and a batch of 4 normal inputs.
    pub fn random(seed: u64) -> Self {
        let mut rng = Rng::new(seed ^ 0x5eed_9c4e_c0de_0001);
        let net = |s: u64, rng: &mut Rng| {
            let mut p = model::init(&MlpConfig::new(
                Self::INPUT_DIM,
                &Self::HIDDEN,
                Self::N_CLASSES,
                s,
            ))
            .expect("valid config");
            for l in 0..p.layers().len() {
                let (rows, cols) = p.layers()[l].weights.shape();
                for r in 0..rows {
                    p.set_coord(l, r, cols, 0.5 * rng.normal());
                }
            }
            p
        };
        let student = net(seed, &mut rng);
        let frozen = net(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), &mut rng);
        let features = (0..Self::BATCH * Self::INPUT_DIM).map(|_| rng.normal()).collect();
        let labels = (0..Self::BATCH).map(|_| rng.below(Self::N_CLASSES)).collect();
        let batch = Batch::new(features, labels, Self::INPUT_DIM).expect("consistent batch");
        Self {
            student,
            frozen,
            batch,
        }
    }

    pub fn check(&self, kind: LossKind, cfg: &LossConfig, n_coords: usize, step: f64, seed: u64) -> Result<FdReport> {
        fd_check(&self.student, &self.batch, kind, Some(&self.frozen), cfg, n_coords, step, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, MlpParams};
    use crate::numerics::{Matrix2D, Vec1D};

    fn cfg_detached(detach_d: bool) -> LossConfig {
        LossConfig {
            detach_d,
            ..LossConfig::default()
        }
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("focal".parse::<LossKind>().is_err());
    }

    #[test]
    fn zero_net_bias_gradient_is_mean_of_uniform_minus_onehot() {
        let net = MlpParams::new(vec![Layer::new(Matrix2D::zeros(3, 2), Vec1D::zeros(3)).unwrap()]).unwrap();
        let batch = Batch::new(vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5], vec![0, 1, 2], 2).unwrap();
        let g = backward(&net, &batch, LossKind::BaselineCe, None, &LossConfig::default()).unwrap();
        // each class is the target once: (1/3 - 1 + 1/3 + 1/3) / 3 = 0
        for b in g.grads.classifier().biases.iter() {
            assert!(b.abs() < 1e-16);
        }
        let batch = Batch::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 0], 2).unwrap();
        let g = backward(&net, &batch, LossKind::BaselineCe, None, &LossConfig::default()).unwrap();
        let b = g.grads.classifier().biases.as_slice();
        assert!((b[0] - (1.0 / 3.0 - 1.0)).abs() < 1e-15);
        assert!((b[1] - 1.0 / 3.0).abs() < 1e-15 && (b[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.loss_value - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn d_path_contributes_even_when_d_is_zero() {
        let prob = GradcheckProblem::random(3);
        let cfg = LossConfig {
            focus: FocusConfig { alpha: 0.0, beta: 0.0 },
            ..LossConfig::default()
        };
        // baseline identical to the student: d = 0 at this point
        let full = backward(&prob.student, &prob.batch, LossKind::FocusingPicking, Some(&prob.student), &cfg).unwrap();
        let plain = backward(&prob.student, &prob.batch, LossKind::BaselineCe, None, &cfg).unwrap();
        assert_eq!(full.loss_value, plain.loss_value);
        let diff: f64 = full
            .grads
            .classifier()
            .weights
            .as_slice()
            .iter()
            .zip(plain.grads.classifier().weights.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "d-path gradient vanished: {diff}");

        let report = fd_check(
            &prob.student,
            &prob.batch,
            LossKind::FocusingPicking,
            Some(&prob.student.clone()),
            &cfg,
            30,
            1e-5,
            1,
        );
        // frozen copy of the student; the FD estimate moves only the student
        assert!(report.unwrap().max_rel_error < 1e-6);

        let detached = backward(
            &prob.student,
            &prob.batch,
            LossKind::FocusingPicking,
            Some(&prob.student),
            &cfg_detached(true).with_focus(0.0, 0.0),
        )
        .unwrap();
        assert_eq!(detached.grads, plain.grads);
    }

    impl LossConfig {
        fn with_focus(mut self, alpha: f64, beta: f64) -> Self {
            self.focus = FocusConfig { alpha, beta };
            self
        }
    }

    #[test]
    fn ignored_blocks_get_exact_zero() {
        let prob = GradcheckProblem::random(8);
        // a logit loss that only looks at class 2 leaves other head rows untouched
        let g = backward_with_logit_grad(&prob.student, &prob.batch, |_, z| {
            let mut dz = vec![0.0; z.len()];
            dz[2] = 1.0;
            (z[2], dz)
        })
        .unwrap();
        let head = g.grads.classifier();
        for r in [0, 1, 3, 4] {
            assert!(head.weights.row(r).iter().all(|v| *v == 0.0));
            assert_eq!(head.biases[r], 0.0);
        }
        // an input feature that is zero across the batch gets zero first-layer gradient
        let mut feats = prob.batch.features().to_vec();
        for row in feats.chunks_exact_mut(6) {
            row[4] = 0.0;
        }
        let batch = Batch::new(feats, prob.batch.labels().to_vec(), 6).unwrap();
        for kind in LossKind::ALL {
            let g = backward(&prob.student, &batch, kind, Some(&prob.frozen), &LossConfig::default()).unwrap();
            let w = &g.grads.layers()[0].weights;
            assert!((0..8).all(|r| w.get(r, 4) == 0.0), "{kind}");
        }
    }

    #[test]
    fn missing_aux_is_reported() {
        let prob = GradcheckProblem::random(0);
        for kind in [LossKind::FocusingPicking, LossKind::Kd] {
            let err = backward(&prob.student, &prob.batch, kind, None, &LossConfig::default()).unwrap_err();
            assert!(matches!(err, Error::MissingBaseline(_)));
        }
        let wrong = model::init(&MlpConfig::new(6, &[], 4, 0)).unwrap();
        assert!(backward(&prob.student, &prob.batch, LossKind::Kd, Some(&wrong), &LossConfig::default()).is_err());
    }

    #[test]
    fn frozen_network_changes_loss_not_gradient_shape() {
        let prob = GradcheckProblem::random(5);
        let other = GradcheckProblem::random(6).frozen;
        let cfg = LossConfig::default();
        let a = backward(&prob.student, &prob.batch, LossKind::FocusingPicking, Some(&prob.frozen), &cfg).unwrap();
        let b = backward(&prob.student, &prob.batch, LossKind::FocusingPicking, Some(&other), &cfg).unwrap();
        assert_ne!(a.loss_value, b.loss_value);
        assert!(a.grads.same_shape(&prob.student) && b.grads.same_shape(&prob.student));
    }

    #[test]
    fn quadratic_hook_is_exact() {
        // kept tiny: roundoff in the summed loss grows with the parameter count
        let theta = MlpParams::new(vec![
            Layer::new(Matrix2D::from_rows(&[vec![0.7, -1.1]]).unwrap(), Vec1D::new(vec![-0.4]).unwrap()).unwrap(),
        ])
        .unwrap();
        // L = 0.5 |theta|^2 has gradient theta
        let half_sq = |p: &MlpParams| -> Result<f64> {
            Ok(0.5
                * p.layers()
                    .iter()
                    .map(|l| {
                        l.weights.as_slice().iter().map(|w| w * w).sum::<f64>()
                            + l.biases.iter().map(|b| b * b).sum::<f64>()
                    })
                    .sum::<f64>())
        };
        let report = fd_check_fn(&theta, &theta, half_sq, |_, _| true, 12, 1e-5, 9).unwrap();
        assert_eq!(report.n_checked, 12);
        assert!(report.max_rel_error < 1e-10, "{}", report.max_rel_error);
    }

    #[test]
    fn all_losses_pass_gradcheck() {
        let mut cfg = LossConfig::default();
        for seed in 0..10 {
            let prob = GradcheckProblem::random(seed);
            for kind in LossKind::ALL {
                for detach in [false, true] {
                    cfg.detach_d = detach;
                    let r = prob.check(kind, &cfg, 20, 1e-5, seed).unwrap();
                    assert!(r.n_checked > 0);
                    assert!(r.max_rel_error < 1e-6, "{kind} detach={detach} seed={seed}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn focus_gradient_is_linear_in_components() {
        let prob = GradcheckProblem::random(12);
        let (alpha, beta) = (0.37, 1.3);
        let cfg = LossConfig::default().with_focus(alpha, beta);
        let frozen_logits = model::forward_batch(&prob.frozen, prob.batch.features(), 4).logits;
        let labels = prob.batch.labels().to_vec();
        let component = |which: usize| {
            backward_with_logit_grad(&prob.student, &prob.batch, |i, z| {
                let zb = &frozen_logits[i * 5..(i + 1) * 5];
                let label = labels::multi_warm_slice(zb, labels[i]).unwrap();
                let g = focus_logit_grads(z, zb, labels[i], label.normalized.as_slice(), false);
                (0.0, [g.0, g.1, g.2][which].clone())
            })
            .unwrap()
            .grads
        };
        let (gc, ga, ge) = (component(0), component(1), component(2));
        let total = backward(&prob.student, &prob.batch, LossKind::FocusingPicking, Some(&prob.frozen), &cfg).unwrap();
        for l in 0..2 {
            let t = total.grads.layers()[l].weights.as_slice();
            let c = gc.layers()[l].weights.as_slice();
            let a = ga.layers()[l].weights.as_slice();
            let e = ge.layers()[l].weights.as_slice();
            for i in 0..t.len() {
                assert!((t[i] - (c[i] + alpha * a[i] - beta * e[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_rejects_bad_step_and_reports_csv() {
        let prob = GradcheckProblem::random(1);
        assert!(prob.check(LossKind::BaselineCe, &LossConfig::default(), 5, 0.0, 0).is_err());
        let r = prob.check(LossKind::BaselineCe, &LossConfig::default(), 5, 1e-5, 7).unwrap();
        let row = r.csv_row("baseline_ce");
        assert!(row.starts_with("baseline_ce,"));
        assert!(row.ends_with(",5,1e-5,7"));
    }
}
