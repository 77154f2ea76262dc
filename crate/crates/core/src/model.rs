//! Multilayer perceptron with ReLU hidden layers and an affine classifier head.
//!
//! The head's weights are the per-category templates whose sign against the
//! penultimate activation decides which categories a frozen baseline
//! considers confusing (see [`crate::labels`]).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix2D, Rng, Vec1D};

pub const CHECKPOINT_MAGIC: &str = "CLONAL-CKPT v1";

/// Weight initialisation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitRule {
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    #[default]
    HeUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_classes: usize,
    pub init: InitRule,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: &[usize], n_classes: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            n_classes,
            init: InitRule::HeUniform,
            seed,
        }
    }

    fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.n_classes);
        dims
    }
}

/// One affine layer: `out = weights * in + biases`, weights `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix2D,
    pub biases: Vec1D,
}

impl Layer {
    pub fn new(weights: Matrix2D, biases: Vec1D) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::dims("Layer::new", weights.shape_string(), biases.len()));
        }
        Ok(Self { weights, biases })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [f64] {
        self.biases.as_mut_slice()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Forward trace of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpActivations {
    /// Hidden-layer pre-activations, one per hidden layer.
    pub pre: Vec<Vec1D>,
    /// Hidden-layer ReLU outputs, one per hidden layer.
    pub post: Vec<Vec1D>,
    /// Input to the classifier head (the input itself for a linear model).
    pub penultimate: Vec1D,
    pub logits: Vec1D,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dims(
                    "MlpParams::new",
                    pair[0].weights.shape_string(),
                    pair[1].weights.shape_string(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::out_dim).collect()
    }

    pub fn classifier(&self) -> &Layer {
        self.layers.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.biases.len()).sum()
    }

    /// Same layer shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix2D::zeros(l.out_dim(), l.in_dim()),
                    biases: Vec1D::zeros(l.out_dim()),
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.shape() == b.weights.shape())
    }

    /// Read a single coordinate; `col == in_dim` addresses the bias.
    pub fn coord(&self, layer: usize, row: usize, col: usize) -> f64 {
        let l = &self.layers[layer];
        if col == l.in_dim() {
            l.biases[row]
        } else {
            l.weights.get(row, col)
        }
    }

    pub fn set_coord(&mut self, layer: usize, row: usize, col: usize, v: f64) {
        let l = &mut self.layers[layer];
        if col == l.in_dim() {
            l.biases_mut()[row] = v;
        } else {
            l.weights.set(row, col, v);
        }
    }

    /// Hex SHA-256 of the checkpoint text; equal iff every parameter is bit-identical.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_checkpoint_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        let shapes: Vec<String> = self.layers.iter().map(|l| l.weights.shape_string()).collect();
        out.push_str(&shapes.join(" "));
        out.push('\n');
        for l in &self.layers {
            push_floats(&mut out, l.weights.as_slice());
            push_floats(&mut out, l.biases.as_slice());
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(CHECKPOINT_MAGIC) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "expected header {CHECKPOINT_MAGIC:?}, found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let shape_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing layer-shape line".into()))?;
        let shapes = shape_line
            .split_whitespace()
            .map(parse_shape)
            .collect::<Result<Vec<_>>>()?;
        if shapes.is_empty() {
            return Err(Error::Checkpoint("empty layer-shape list".into()));
        }

        let mut values = lines.flat_map(str::split_whitespace).map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad float {tok:?}")))
        });
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(
                    values
                        .next()
                        .ok_or_else(|| Error::Checkpoint("too few values".into()))??,
                );
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(shapes.len());
        for &(rows, cols) in &shapes {
            let weights = Matrix2D::new(rows, cols, take(rows * cols)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let biases = Vec1D::new(take(rows)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            layers.push(Layer::new(weights, biases)?);
        }
        if values.next().is_some() {
            return Err(Error::Checkpoint("trailing values after last layer".into()));
        }
        MlpParams::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

fn push_floats(out: &mut String, xs: &[f64]) {
    let mut first = true;
    for x in xs {
        if !first {
            out.push(' ');
        }
        first = false;
        // 17 significant digits: exact round trip through `str::parse`.
        let _ = write!(out, "{x:.16e}");
    }
    out.push('\n');
}

fn parse_shape(tok: &str) -> Result<(usize, usize)> {
    let bad = || Error::Checkpoint(format!("bad layer shape {tok:?}"));
    let (r, c) = tok.split_once('x').ok_or_else(bad)?;
    let rows: usize = r.parse().map_err(|_| bad())?;
    let cols: usize = c.parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

pub fn init(config: &MlpConfig) -> Result<MlpParams> {
    let dims = config.layer_dims();
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("all layer widths must be >= 1, got {dims:?}")));
    }
    let mut rng = Rng::new(config.seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = match config.init {
                InitRule::HeUniform => (6.0 / fan_in as f64).sqrt(),
            };
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-limit, limit))
                .collect();
            Layer {
                weights: Matrix2D::new(fan_out, fan_in, data).expect("finite init"),
                biases: Vec1D::zeros(fan_out),
            }
        })
        .collect();
    MlpParams::new(layers)
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    (0..layer.out_dim())
        .map(|i| numerics::dot(layer.weights.row(i), x) + layer.biases[i])
        .collect()
}

pub fn forward(params: &MlpParams, x: &Vec1D) -> Result<MlpActivations> {
    if x.len() != params.input_dim() {
        return Err(Error::dims("forward", params.input_dim(), x.len()));
    }
    let n_hidden = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post = Vec::with_capacity(n_hidden);
    let mut current = x.as_slice().to_vec();
    for layer in &params.layers[..n_hidden] {
        let z = affine(layer, &current);
        let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        pre.push(Vec1D::from_vec_unchecked(z));
        post.push(Vec1D::from_vec_unchecked(h.clone()));
        current = h;
    }
    let logits = affine(params.classifier(), &current);
    Ok(MlpActivations {
        pre,
        post,
        penultimate: Vec1D::from_vec_unchecked(current),
        logits: Vec1D::from_vec_unchecked(logits),
    })
}

/// Final-layer weights with the bias appended as an extra column, so that
/// row `n` dotted with `[h; 1]` is logit `n`.
pub fn augmented_classifier(params: &MlpParams) -> Matrix2D {
    let head = params.classifier();
    let (rows, cols) = head.weights.shape();
    let mut data = Vec::with_capacity(rows * (cols + 1));
    for r in 0..rows {
        data.extend_from_slice(head.weights.row(r));
        data.push(head.biases[r]);
    }
    Matrix2D::new(rows, cols + 1, data).expect("shape and finiteness preserved")
}

/// Index of the largest logit, lowest index on ties.
pub fn predict(params: &MlpParams, x: &Vec1D) -> Result<usize> {
    Ok(forward(params, x)?.logits.argmax())
}

/// Batched forward trace, row-major `batch x width` buffers.
#[derive(Debug, Clone)]
pub(crate) struct BatchTrace {
    pub batch: usize,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn affine_batch(layer: &Layer, x: &[f64], batch: usize) -> Vec<f64> {
    let (out_dim, in_dim) = layer.weights.shape();
    let mut z = vec![0.0; batch * out_dim];
    numerics::gemm_nt(x, layer.weights.as_slice(), batch, in_dim, out_dim, &mut z);
    for row in z.chunks_exact_mut(out_dim) {
        for (v, b) in row.iter_mut().zip(layer.biases.iter()) {
            *v += b;
        }
    }
    z
}

pub(crate) fn forward_batch(params: &MlpParams, x: &[f64], batch: usize) -> BatchTrace {
    debug_assert_eq!(x.len(), batch * params.input_dim());
    let n_hidden = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
    for layer in &params.layers[..n_hidden] {
        let input = post.last().map_or(x, Vec::as_slice);
        let z = affine_batch(layer, input, batch);
        let h = z.iter().map(|v| v.max(0.0)).collect();
        pre.push(z);
        post.push(h);
    }
    let input = post.last().map_or(x, Vec::as_slice);
    let logits = affine_batch(params.classifier(), input, batch);
    BatchTrace {
        batch,
        pre,
        post,
        logits,
    }
}
