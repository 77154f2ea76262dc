//! Multi-warm labels: the categories a frozen baseline scores positively for
//! an input, plus the ground truth, as a uniform target distribution.

use std::fmt::Write as _;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, MlpParams};
use crate::numerics::{self, Vec1D};

/// The three stages of the label for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiWarmLabel {
    /// Categories with a strictly positive baseline logit.
    pub raw_positive: Vec<bool>,
    /// `raw_positive` with the ground truth switched on.
    pub clipped: Vec<bool>,
    /// `clipped` normalised to sum to one.
    pub normalized: Vec1D,
    pub support_size: usize,
}

impl MultiWarmLabel {
    fn from_raw(raw_positive: Vec<bool>, gt_index: usize) -> Self {
        let mut clipped = raw_positive.clone();
        clipped[gt_index] = true;
        let support_size = clipped.iter().filter(|b| **b).count();
        let w = 1.0 / support_size as f64;
        let normalized = clipped.iter().map(|&on| if on { w } else { 0.0 }).collect();
        Self {
            raw_positive,
            clipped,
            normalized: Vec1D::from_vec_unchecked(normalized),
            support_size,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.clipped.len()
    }

    /// Indices of the non-zero entries, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.clipped.iter().enumerate().filter(|(_, on)| **on).map(|(i, _)| i)
    }
}

fn check_gt(gt_index: usize, n: usize) -> Result<()> {
    if gt_index >= n {
        return Err(Error::InvalidArgument(format!(
            "ground-truth index {gt_index} out of range for {n} categories"
        )));
    }
    Ok(())
}

/// Label from baseline logits: entry `n` is switched on iff `z_b[n] > 0`
/// or `n` is the ground truth.
pub fn multi_warm(baseline_logits: &Vec1D, gt_index: usize) -> Result<MultiWarmLabel> {
    multi_warm_slice(baseline_logits.as_slice(), gt_index)
}

pub(crate) fn multi_warm_slice(baseline_logits: &[f64], gt_index: usize) -> Result<MultiWarmLabel> {
    check_gt(gt_index, baseline_logits.len())?;
    let raw = baseline_logits.iter().map(|z| *z > 0.0).collect();
    Ok(MultiWarmLabel::from_raw(raw, gt_index))
}

/// Same label computed from the cosine between each augmented classifier row
/// and `[h; 1]`. Kept as an independent cross-check of [`multi_warm`].
pub fn multi_warm_via_cosine(
    baseline: &MlpParams,
    x: &Vec1D,
    gt_index: usize,
) -> Result<MultiWarmLabel> {
    check_gt(gt_index, baseline.n_classes())?;
    let act = model::forward(baseline, x)?;
    let mut h = act.penultimate.into_vec();
    h.push(1.0);
    let h = Vec1D::from_vec_unchecked(h);
    let templates = model::augmented_classifier(baseline);
    let raw = (0..templates.rows())
        .map(|n| {
            let w = Vec1D::from_vec_unchecked(templates.row(n).to_vec());
            numerics::cosine_similarity(&w, &h)
                .map(|s| s > 0.0)
                .map_err(|_| Error::ZeroMagnitude(format!("classifier row {n} is all zeros")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiWarmLabel::from_raw(raw, gt_index))
}

/// Summary of multi-warm supports over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub n_classes: usize,
    /// Examples per ground-truth class.
    pub class_counts: Vec<usize>,
    /// `histogram[c][k - 1]`: examples of class `c` with support size `k`.
    pub histogram: Vec<Vec<usize>>,
    /// `cooccurrence[c][k]`: examples of class `c` whose support contains `k` (`k != c`).
    pub cooccurrence: Vec<Vec<usize>>,
}

impl LabelStats {
    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    fn support_sum(hist: &[usize]) -> usize {
        hist.iter().enumerate().map(|(k, n)| (k + 1) * n).sum()
    }

    pub fn mean_support(&self) -> f64 {
        let s: usize = self.histogram.iter().map(|h| Self::support_sum(h)).sum();
        s as f64 / self.total().max(1) as f64
    }

    pub fn frac_multi(&self) -> f64 {
        let multi: usize = self.histogram.iter().map(|h| h[1..].iter().sum::<usize>()).sum();
        multi as f64 / self.total().max(1) as f64
    }

    pub fn class_mean_support(&self, c: usize) -> f64 {
        Self::support_sum(&self.histogram[c]) as f64 / self.class_counts[c].max(1) as f64
    }

    pub fn class_frac_multi(&self, c: usize) -> f64 {
        self.histogram[c][1..].iter().sum::<usize>() as f64 / self.class_counts[c].max(1) as f64
    }

    /// Fraction of examples of class `a` or `b` whose support contains both.
    pub fn pair_rate(&self, a: usize, b: usize) -> f64 {
        let hits = self.cooccurrence[a][b] + self.cooccurrence[b][a];
        let n = self.class_counts[a] + self.class_counts[b];
        hits as f64 / n.max(1) as f64
    }

    /// `class_index,mean_support,frac_multi,hist_1..hist_N`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_index,mean_support,frac_multi");
        for k in 1..=self.n_classes {
            let _ = write!(out, ",hist_{k}");
        }
        out.push('\n');
        for c in 0..self.n_classes {
            let _ = write!(
                out,
                "{c},{},{}",
                self.class_mean_support(c),
                self.class_frac_multi(c)
            );
            for n in &self.histogram[c] {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
        }
        out
    }

    /// `class_a,class_b,rate` for every unordered pair.
    pub fn cooccurrence_csv(&self) -> String {
        let mut out = String::from("class_a,class_b,rate\n");
        for a in 0..self.n_classes {
            for b in a + 1..self.n_classes {
                let _ = writeln!(out, "{a},{b},{}", self.pair_rate(a, b));
            }
        }
        out
    }
}

const STATS_CHUNK: usize = 512;

pub fn label_stats(dataset: &Dataset, baseline: &MlpParams) -> Result<LabelStats> {
    if dataset.feature_dim() != baseline.input_dim() || dataset.n_classes() > baseline.n_classes() {
        return Err(Error::dims(
            "label_stats",
            format!("dataset {}-d with {} classes", dataset.feature_dim(), dataset.n_classes()),
            format!("baseline {}-d with {} classes", baseline.input_dim(), baseline.n_classes()),
        ));
    }
    let n = baseline.n_classes();
    let mut stats = LabelStats {
        n_classes: n,
        class_counts: vec![0; n],
        histogram: vec![vec![0; n]; n],
        cooccurrence: vec![vec![0; n]; n],
    };
    let dim = dataset.feature_dim();
    let features = dataset.all_features();
    for start in (0..dataset.len()).step_by(STATS_CHUNK) {
        let end = (start + STATS_CHUNK).min(dataset.len());
        let trace = model::forward_batch(baseline, &features[start * dim..end * dim], end - start);
        for (i, logits) in (start..end).zip(trace.logits.chunks_exact(n)) {
            let gt = dataset.label(i);
            let label = multi_warm_slice(logits, gt)?;
            stats.class_counts[gt] += 1;
            stats.histogram[gt][label.support_size - 1] += 1;
            for k in label.support().filter(|k| *k != gt) {
                stats.cooccurrence[gt][k] += 1;
            }
        }
    }
    Ok(stats)
}
