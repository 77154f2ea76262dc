//! Datasets: IDX (MNIST) ingestion, the confusable-pairs synthetic
//! generator, train-mean centering and deterministic splits.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Vec1D};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Labelled examples stored row-major: example `i` occupies
/// `features[i * feature_dim..(i + 1) * feature_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if feature_dim == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument(
                "feature_dim and n_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::dims(
                "Dataset::new",
                format!("{} labels x {feature_dim} features", labels.len()),
                format!("{} values", features.len()),
            ));
        }
        if let Some(y) = labels.iter().find(|y| **y >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Dataset features"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> Vec1D {
        Vec1D::from_vec_unchecked(self.features(i).to_vec())
    }

    pub fn all_features(&self) -> &[f64] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Widen the category count, e.g. so a test split that happens to miss
    /// the last class still agrees with its training split.
    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if n_classes < self.n_classes {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink {} classes to {n_classes}",
                self.n_classes
            )));
        }
        self.n_classes = n_classes;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: offset + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Load an IDX image/label pair. Pixels are scaled to `[0, 1]`; the category
/// count is the largest label plus one.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ipath, lpath) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ipath)?;
    let labels = read_file(lpath)?;

    check_magic(&images, IDX_IMAGES_MAGIC, ipath)?;
    check_magic(&labels, IDX_LABELS_MAGIC, lpath)?;

    let n_images = be_u32(&images, 4, ipath)? as usize;
    let rows = be_u32(&images, 8, ipath)? as usize;
    let cols = be_u32(&images, 12, ipath)? as usize;
    let n_labels = be_u32(&labels, 4, lpath)? as usize;

    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    if n_images == 0 {
        return Err(Error::EmptyDataset(format!("{} has no examples", ipath.display())));
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} declares {rows}x{cols} images",
            ipath.display()
        )));
    }

    let needed = 16 + n_images * dim;
    if images.len() < needed {
        return Err(Error::Truncated {
            path: ipath.to_path_buf(),
            needed,
            actual: images.len(),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(Error::Truncated {
            path: lpath.to_path_buf(),
            needed: 8 + n_labels,
            actual: labels.len(),
        });
    }

    let features = images[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    let ys: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let n_classes = ys.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, ys, n_classes, dim)
}

/// Write a dataset with features in `[0, 1]` as an IDX pair of `rows x cols`
/// images. Inverse of [`load_idx`] for data that came from IDX files.
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.feature_dim() {
        return Err(Error::dims("write_idx", format!("{rows}x{cols}"), dataset.feature_dim()));
    }
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.all_features().len());
    for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(
        dataset
            .all_features()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(dataset.labels().iter().map(|&y| y as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

/// Pairs of Gaussian classes. Classes `2p` and `2p + 1` form pair `p`; their
/// means sit on either side of the pair centre and move together as
/// `pair_overlap` approaches 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub pair_overlap: f64,
    pub dim: usize,
    pub per_class: usize,
    pub seed: u64,
}

/// In-pair distance between class means at zero overlap, in noise standard deviations.
pub const PAIR_SEPARATION: f64 = 12.0;

impl SyntheticSpec {
    pub fn n_classes(&self) -> usize {
        2 * self.n_pairs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.per_class == 0 {
            return Err(Error::InvalidArgument("n_pairs and per_class must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument("synthetic dim must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.pair_overlap) {
            return Err(Error::InvalidArgument(format!(
                "pair_overlap {} outside [0, 1)",
                self.pair_overlap
            )));
        }
        Ok(())
    }

    /// Class means, one row per class.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let radius = PAIR_SEPARATION * f64::max(2.0, 0.5 * self.n_pairs as f64);
        let half = 0.5 * (1.0 - self.pair_overlap) * PAIR_SEPARATION;
        let mut means = Vec::with_capacity(self.n_classes());
        for p in 0..self.n_pairs {
            let angle = std::f64::consts::TAU * p as f64 / self.n_pairs as f64;
            let (s, c) = angle.sin_cos();
            // centre on a circle in the first two coordinates, offsets along the tangent
            for sign in [-1.0, 1.0] {
                let mut m = vec![0.0; self.dim];
                m[0] = radius * c - sign * half * s;
                m[1] = radius * s + sign * half * c;
                means.push(m);
            }
        }
        means
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means();
    let n_classes = spec.n_classes();
    let mut rng = Rng::new(spec.seed);
    let mut features = Vec::with_capacity(n_classes * spec.per_class * spec.dim);
    let mut labels = Vec::with_capacity(n_classes * spec.per_class);
    for _ in 0..spec.per_class {
        for (class, mean) in means.iter().enumerate() {
            features.extend(mean.iter().map(|m| m + rng.normal()));
            labels.push(class);
        }
    }
    Dataset::new(features, labels, n_classes, spec.dim)
}

/// Subtract the per-feature mean of `train` from `train` and every dataset in
/// `others`. The mean is returned so it can be persisted with a model.
pub fn mean_center(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>, Vec1D)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("cannot centre on an empty training set".into()));
    }
    if let Some(bad) = others.iter().find(|d| d.feature_dim() != train.feature_dim()) {
        return Err(Error::dims("mean_center", train.feature_dim(), bad.feature_dim()));
    }
    let dim = train.feature_dim();
    let mut mean = vec![0.0; dim];
    for i in 0..train.len() {
        for (m, x) in mean.iter_mut().zip(train.features(i)) {
            *m += x;
        }
    }
    let n = train.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let centre = |d: &Dataset| {
        let mut out = d.clone();
        for row in out.features.chunks_exact_mut(dim) {
            for (x, m) in row.iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        out
    };
    let centred_train = centre(train);
    let centred_others = others.iter().map(centre).collect();
    Ok((centred_train, centred_others, Vec1D::from_vec_unchecked(mean)))
}

/// Deterministic shuffle-then-split into `(rest, holdout)`.
///
/// After shuffling, examples are dealt round-robin by class so the holdout
/// takes one of each class before taking a second of any. Both parts keep
/// the original example order.
pub fn split(data: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    if data.len() < 2 {
        return Err(Error::EmptyDataset("need at least two examples to split".into()));
    }
    let n_holdout = ((data.len() as f64 * holdout_fraction).round() as usize).clamp(1, data.len() - 1);

    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed).shuffle(&mut order);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for &i in &order {
        by_class[data.label(i)].push(i);
    }
    let mut dealt = Vec::with_capacity(data.len());
    let deepest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..deepest {
        for bucket in &by_class {
            if let Some(&i) = bucket.get(round) {
                dealt.push(i);
            }
        }
    }

    let mut holdout = dealt[..n_holdout].to_vec();
    let mut rest = dealt[n_holdout..].to_vec();
    holdout.sort_unstable();
    rest.sort_unstable();
    Ok((data.subset(&rest), data.subset(&holdout)))
}
