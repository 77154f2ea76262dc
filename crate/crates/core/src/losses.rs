//! Loss functions: plain cross-entropy, the focusing-picking loss with its
//! three components, and the label-smoothing and distillation comparisons.
//!
//! All log-probabilities come from `log_softmax`, never `ln(softmax(..))`.

use crate::error::{Error, Result};
use crate::labels::MultiWarmLabel;
use crate::numerics::{self, Vec1D};

/// Weights of the attention and entropy regularisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocusConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
        }
    }
}

impl FocusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha and beta must be finite and >= 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Temperature and mixing weight of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdConfig {
    pub temperature: f64,
    pub weight: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: 2.5,
            weight: 0.6,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidArgument(format!(
                "distillation weight must lie in [0, 1], got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Every quantity of the focusing-picking loss for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub r_attention: f64,
    pub r_entropy: f64,
    pub total: f64,
    /// `softmax(z) - softmax(z_b)`.
    pub d: Vec1D,
    /// `softmax(z + d)`.
    pub reweighted_probs: Vec1D,
}

fn same_len(op: &'static str, a: &Vec1D, b: &Vec1D) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dims(op, a.len(), b.len()));
    }
    Ok(())
}

fn check_index(gt_index: usize, n: usize) -> Result<()> {
    if gt_index >= n {
        return Err(Error::InvalidArgument(format!(
            "ground-truth index {gt_index} out of range for {n} categories"
        )));
    }
    Ok(())
}

/// `-sum_n target_n * ln(probs_n)`.
pub fn cross_entropy(probs: &Vec1D, target: &Vec1D) -> Result<f64> {
    same_len("cross_entropy", probs, target)?;
    numerics::check_distribution(probs.as_slice())?;
    numerics::check_distribution(target.as_slice())?;
    let mut acc = 0.0;
    for (n, (p, t)) in probs.iter().zip(target.iter()).enumerate() {
        if *t > 0.0 {
            if *p == 0.0 {
                return Err(Error::ZeroProbability(n));
            }
            acc -= t * p.ln();
        }
    }
    Ok(acc)
}

/// Returns `(softmax(z + d), d)` with `d = softmax(z) - softmax(z_b)`.
pub fn reweighted_probs(z: &Vec1D, z_b: &Vec1D) -> Result<(Vec1D, Vec1D)> {
    same_len("reweighted_probs", z, z_b)?;
    let d = difference(z.as_slice(), z_b.as_slice());
    let shifted: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z + d).collect();
    Ok((
        Vec1D::from_vec_unchecked(numerics::softmax_slice(&shifted)),
        Vec1D::from_vec_unchecked(d),
    ))
}

pub(crate) fn difference(z: &[f64], z_b: &[f64]) -> Vec<f64> {
    let p = numerics::softmax_slice(z);
    let p_b = numerics::softmax_slice(z_b);
    p.iter().zip(&p_b).map(|(a, b)| a - b).collect()
}

/// Scalar components of the focusing-picking loss, shared with the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FocusTerms {
    pub l_cls: f64,
    pub r_attention: f64,
    pub r_entropy: f64,
}

impl FocusTerms {
    pub fn total(&self, cfg: &FocusConfig) -> f64 {
        self.l_cls + cfg.alpha * self.r_attention - cfg.beta * self.r_entropy
    }
}

/// `d` must be `difference(z, z_b)`.
pub(crate) fn focus_terms(z: &[f64], d: &[f64], gt_index: usize, label: &[f64]) -> FocusTerms {
    let shifted: Vec<f64> = z.iter().zip(d).map(|(z, d)| z + d).collect();
    let l_cls = -numerics::log_softmax_slice(&shifted)[gt_index];
    let log_p = numerics::log_softmax_slice(z);
    let r_attention = -label
        .iter()
        .zip(&log_p)
        .filter(|(l, _)| **l > 0.0)
        .map(|(l, lp)| l * lp)
        .sum::<f64>();
    let r_entropy = -log_p.iter().map(|lp| lp.exp() * lp).sum::<f64>();
    FocusTerms {
        l_cls,
        r_attention,
        r_entropy,
    }
}

/// `L = L_cls + alpha * R_attention - beta * R_entropy` for one example, where
/// `L_cls` is the cross-entropy of the re-weighted softmax against the ground
/// truth and both regularisers use the plain softmax of `z`.
pub fn focusing_picking(
    z: &Vec1D,
    z_b: &Vec1D,
    gt_index: usize,
    label: &MultiWarmLabel,
    cfg: &FocusConfig,
) -> Result<LossBreakdown> {
    same_len("focusing_picking", z, z_b)?;
    same_len("focusing_picking", z, &label.normalized)?;
    check_index(gt_index, z.len())?;
    cfg.validate()?;
    let (probs, d) = reweighted_probs(z, z_b)?;
    let terms = focus_terms(z.as_slice(), d.as_slice(), gt_index, label.normalized.as_slice());
    Ok(LossBreakdown {
        l_cls: terms.l_cls,
        r_attention: terms.r_attention,
        r_entropy: terms.r_entropy,
        total: terms.total(cfg),
        d,
        reweighted_probs: probs,
    })
}

/// `-ln softmax(d + z)[gt]` with `d` supplied directly.
pub fn classification_loss_free_d(z: &Vec1D, d: &Vec1D, gt_index: usize) -> Result<f64> {
    same_len("classification_loss_free_d", z, d)?;
    check_index(gt_index, z.len())?;
    let shifted: Vec<f64> = z.iter().zip(d.iter()).map(|(z, d)| z + d).collect();
    Ok(-numerics::log_softmax_slice(&shifted)[gt_index])
}

/// Plain softmax cross-entropy against a one-hot target.
pub fn softmax_cross_entropy(z: &Vec1D, gt_index: usize) -> Result<f64> {
    check_index(gt_index, z.len())?;
    Ok(-numerics::log_softmax_slice(z.as_slice())[gt_index])
}

pub(crate) fn smoothed_target(n: usize, gt_index: usize, eps: f64) -> Vec<f64> {
    let uniform = eps / n as f64;
    (0..n)
        .map(|k| if k == gt_index { (1.0 - eps) + uniform } else { uniform })
        .collect()
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "label-smoothing eps must lie in [0, 1), got {eps}"
        )));
    }
    Ok(())
}

/// Cross-entropy against `(1 - eps) * one_hot + eps * uniform`.
pub fn label_smoothing_ce(z: &Vec1D, gt_index: usize, eps: f64) -> Result<f64> {
    check_index(gt_index, z.len())?;
    check_eps(eps)?;
    let target = smoothed_target(z.len(), gt_index, eps);
    let log_p = numerics::log_softmax_slice(z.as_slice());
    Ok(-target.iter().zip(&log_p).map(|(t, lp)| t * lp).sum::<f64>())
}

/// `(1 - w) * CE(softmax(z), y) + w * T^2 * CE(softmax(z / T), softmax(z_t / T))`.
pub fn kd_loss(z: &Vec1D, z_teacher: &Vec1D, gt_index: usize, cfg: &KdConfig) -> Result<f64> {
    same_len("kd_loss", z, z_teacher)?;
    check_index(gt_index, z.len())?;
    cfg.validate()?;
    Ok(kd_value(z.as_slice(), z_teacher.as_slice(), gt_index, cfg))
}

pub(crate) fn kd_value(z: &[f64], z_t: &[f64], gt_index: usize, cfg: &KdConfig) -> f64 {
    let t = cfg.temperature;
    let hard = -numerics::log_softmax_slice(z)[gt_index];
    let zs: Vec<f64> = z.iter().map(|v| v / t).collect();
    let zt: Vec<f64> = z_t.iter().map(|v| v / t).collect();
    let q = numerics::softmax_slice(&zt);
    let log_ps = numerics::log_softmax_slice(&zs);
    let soft = -q.iter().zip(&log_ps).map(|(q, lp)| q * lp).sum::<f64>();
    (1.0 - cfg.weight) * hard + cfg.weight * t * t * soft
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::multi_warm;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn v(xs: &[f64]) -> Vec1D {
        Vec1D::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn defaults() {
        assert_eq!(FocusConfig::default(), FocusConfig { alpha: 0.1, beta: 1.0 });
        assert_eq!(KdConfig::default(), KdConfig { temperature: 2.5, weight: 0.6 });
        assert!(FocusConfig { alpha: -0.1, beta: 1.0 }.validate().is_err());
        assert!(KdConfig { temperature: 0.0, weight: 0.5 }.validate().is_err());
        assert!(KdConfig { temperature: 1.0, weight: 1.5 }.validate().is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let y = v(&[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy(&y, &y).unwrap(), 0.0);
        let u = v(&[0.1; 10]);
        let y10 = Vec1D::one_hot(10, 3).unwrap();
        assert!((cross_entropy(&u, &y10).unwrap() - 10f64.ln()).abs() < 1e-14);
        let h = cross_entropy(&v(&[0.75, 0.25]), &v(&[0.5, 0.5])).unwrap();
        assert!((h - 0.836_988_216_785_835_8).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_errors() {
        assert!(matches!(
            cross_entropy(&v(&[1.0, 0.0]), &v(&[0.5, 0.5])),
            Err(Error::ZeroProbability(1))
        ));
        assert!(cross_entropy(&v(&[0.5, 0.5]), &v(&[1.0])).is_err());
        assert!(cross_entropy(&v(&[0.5, 0.6]), &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn reweighted_examples() {
        let z = v(&[0.3, -1.0, 2.0]);
        let (p, d) = reweighted_probs(&z, &z).unwrap();
        assert!(d.iter().all(|x| *x == 0.0));
        assert_eq!(p, numerics::softmax(&z));

        let (p, d) = reweighted_probs(&v(&[0.0, 0.0]), &v(&[3f64.ln(), 0.0])).unwrap();
        assert!((d[0] + 0.25).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);
        assert!((p[0] - 0.377_540_668_798_145_4).abs() < 1e-15);
        assert!((p[1] - 0.622_459_331_201_854_5).abs() < 1e-15);

        let (p, d) = reweighted_probs(&v(&[4.2]), &v(&[-7.0])).unwrap();
        assert_eq!((p.as_slice(), d.as_slice()), (&[1.0][..], &[0.0][..]));

        assert!(reweighted_probs(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn focusing_picking_examples() {
        let z = v(&[0.0, 0.0]);
        let label = multi_warm(&z, 0).unwrap();
        assert_eq!(label.normalized.as_slice(), &[1.0, 0.0]);
        let out = focusing_picking(&z, &z, 0, &label, &FocusConfig::default()).unwrap();
        assert!((out.l_cls - LN2).abs() < 1e-15);
        assert!((out.r_attention - LN2).abs() < 1e-15);
        assert!((out.r_entropy - LN2).abs() < 1e-15);
        assert!((out.total - 0.069_314_718_055_994_53).abs() < 1e-15);

        let z = v(&[0.4, -1.3, 2.2, 0.0]);
        let label = multi_warm(&v(&[1.0, -1.0, 0.5, 2.0]), 1).unwrap();
        let off = FocusConfig { alpha: 0.0, beta: 0.0 };
        let out = focusing_picking(&z, &z, 1, &label, &off).unwrap();
        assert_eq!(out.total, softmax_cross_entropy(&z, 1).unwrap());

        let z = v(&[0.0, 0.0]);
        let z_b = v(&[3f64.ln(), 0.0]);
        let label = multi_warm(&z_b, 0).unwrap();
        let out = focusing_picking(&z, &z_b, 0, &label, &FocusConfig::default()).unwrap();
        assert!((out.l_cls - 0.974_076_984_180_106_8).abs() < 1e-14);
        assert!(out.l_cls > softmax_cross_entropy(&z, 0).unwrap());
    }

    #[test]
    fn free_d_examples() {
        let z = v(&[0.5, -0.2, 1.1]);
        assert_eq!(
            classification_loss_free_d(&z, &v(&[0.0; 3]), 2).unwrap(),
            softmax_cross_entropy(&z, 2).unwrap()
        );
        let d = v(&[0.1, -0.3, 0.2]);
        let bumped = v(&[0.1, -0.3, 1.2]);
        assert!(
            classification_loss_free_d(&z, &bumped, 2).unwrap() < classification_loss_free_d(&z, &d, 2).unwrap()
        );
        let l = classification_loss_free_d(&v(&[0.0, 0.0]), &v(&[-0.25, 0.25]), 0).unwrap();
        assert!((l - 0.974_076_984_180_106_8).abs() < 1e-14);
    }

    #[test]
    fn label_smoothing_examples() {
        let z = v(&[1.5, -0.5, 0.25]);
        assert_eq!(label_smoothing_ce(&z, 0, 0.0).unwrap(), softmax_cross_entropy(&z, 0).unwrap());
        let near = label_smoothing_ce(&z, 0, 0.999).unwrap();
        let vs_uniform = cross_entropy(&numerics::softmax(&z), &v(&[1.0 / 3.0; 3])).unwrap();
        assert!((near - vs_uniform).abs() < 5e-3);
        assert!((label_smoothing_ce(&v(&[0.0, 0.0]), 1, 0.2).unwrap() - LN2).abs() < 1e-15);
        assert!(label_smoothing_ce(&z, 0, 1.0).is_err());
        assert!(label_smoothing_ce(&z, 0, -0.1).is_err());
    }

    #[test]
    fn kd_examples() {
        let z = v(&[0.3, 1.7, -0.4]);
        let teacher = v(&[5.0, -2.0, 1.0]);
        let plain = softmax_cross_entropy(&z, 1).unwrap();
        let off = KdConfig { temperature: 4.0, weight: 0.0 };
        assert_eq!(kd_loss(&z, &teacher, 1, &off).unwrap(), plain);

        for t in [0.5, 1.0, 2.5, 7.0] {
            let cfg = KdConfig { temperature: t, weight: 1.0 };
            let scaled: Vec<f64> = z.iter().map(|x| x / t).collect();
            let h = numerics::entropy(&numerics::softmax(&v(&scaled))).unwrap();
            assert!((kd_loss(&z, &z, 0, &cfg).unwrap() - t * t * h).abs() < 1e-12);
        }

        // student probs [0.5, 0.5] scored against teacher target [0.75, 0.25]:
        // -(0.75 ln 0.5 + 0.25 ln 0.5) = ln 2
        let cfg = KdConfig { temperature: 1.0, weight: 1.0 };
        let l = kd_loss(&v(&[0.0, 0.0]), &v(&[3f64.ln(), 0.0]), 0, &cfg).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        let p = numerics::softmax(&v(&[0.0, 0.0]));
        let q = numerics::softmax(&v(&[3f64.ln(), 0.0]));
        assert!((l - cross_entropy(&p, &q).unwrap()).abs() < 1e-15);
    }

    fn logit_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (1usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec(-8.0f64..8.0, n),
                prop::collection::vec(-8.0f64..8.0, n),
                0..n,
            )
        })
    }

    proptest! {
        #[test]
        fn difference_sums_to_zero((z, zb, _gt) in logit_pair()) {
            let (p, d) = reweighted_probs(&v(&z), &v(&zb)).unwrap();
            prop_assert!(d.iter().sum::<f64>().abs() <= 1e-12);
            prop_assert!(d.iter().all(|x| x.abs() <= 1.0));
            prop_assert!(numerics::check_distribution(p.as_slice()).is_ok());
        }

        #[test]
        fn total_recomposes((z, zb, gt) in logit_pair(), alpha in 0.0f64..2.0, beta in 0.0f64..2.0) {
            let label = multi_warm(&v(&zb), gt).unwrap();
            let cfg = FocusConfig { alpha, beta };
            let out = focusing_picking(&v(&z), &v(&zb), gt, &label, &cfg).unwrap();
            let recomposed = out.l_cls + alpha * out.r_attention - beta * out.r_entropy;
            prop_assert!((out.total - recomposed).abs() <= 1e-12);
            let p = numerics::softmax(&v(&z));
            prop_assert!((out.r_attention - cross_entropy(&p, &label.normalized).unwrap()).abs() <= 1e-12);
            prop_assert!((out.r_entropy - numerics::entropy(&p).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn identical_logits_give_plain_ce((z, _zb, gt) in logit_pair()) {
            let label = multi_warm(&v(&z), gt).unwrap();
            let out = focusing_picking(&v(&z), &v(&z), gt, &label, &FocusConfig { alpha: 0.0, beta: 0.0 }).unwrap();
            prop_assert_eq!(out.l_cls, softmax_cross_entropy(&v(&z), gt).unwrap());
            prop_assert_eq!(out.total, out.l_cls);
        }

        #[test]
        fn free_d_decreasing_in_gt_entry((z, d, gt) in logit_pair(), bump in 0.01f64..3.0) {
            let before = classification_loss_free_d(&v(&z), &v(&d), gt).unwrap();
            let mut d2 = d.clone();
            d2[gt] += bump;
            let after = classification_loss_free_d(&v(&z), &v(&d2), gt).unwrap();
            prop_assume!(z.len() > 1);
            prop_assert!(after < before);
        }

        #[test]
        fn attention_obeys_gibbs((z, zb, gt) in logit_pair()) {
            let label = multi_warm(&v(&zb), gt).unwrap();
            let out = focusing_picking(&v(&z), &v(&zb), gt, &label, &FocusConfig::default()).unwrap();
            let h_label = numerics::entropy(&label.normalized).unwrap();
            prop_assert!(out.r_attention >= h_label - 1e-12);
        }
    }

    #[test]
    fn gibbs_equality_when_softmax_matches_label() {
        // softmax(z) equals the label when z is 0 on the support and very negative elsewhere
        let label = multi_warm(&v(&[1.0, -1.0, 2.0, -3.0]), 1).unwrap();
        let z = v(&[0.0, 0.0, 0.0, -800.0]);
        let out = focusing_picking(&z, &z, 1, &label, &FocusConfig::default()).unwrap();
        assert!((out.r_attention - numerics::entropy(&label.normalized).unwrap()).abs() < 1e-12);
    }
}
