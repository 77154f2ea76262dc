//! Multi-warm labels from a handful of baseline logit vectors.
//!
//! A category joins the support when its baseline logit is strictly positive;
//! the ground truth is always added and the label is uniform over the support.

use clonalnet::labels::{multi_warm, multi_warm_via_cosine};
use clonalnet::model::{self, MlpConfig};
use clonalnet::numerics::{entropy, Vec1D};

fn main() -> clonalnet::Result<()> {
    let cases = [
        (vec![2.1, -0.3, 0.8, -1.5], 0),
        (vec![-1.0, -2.0, 3.0, 0.0], 1), // confidently wrong, zero logit excluded
        (vec![0.0, 0.0, 0.0, 0.0], 3),
        (vec![0.4, 0.2, 0.1, 0.3], 2),
    ];
    println!("baseline logits -> support, label, entropy");
    for (z, gt) in cases {
        let z = Vec1D::new(z)?;
        let l = multi_warm(&z, gt)?;
        let support: Vec<usize> = l.support().collect();
        println!(
            "{:?} gt={gt} -> {:?} {:?} H={:.4}",
            z.as_slice(),
            support,
            l.normalized.as_slice(),
            entropy(&l.normalized)?
        );
    }

    // the cosine route through a real network gives the same labels
    let net = model::init(&MlpConfig::new(5, &[7], 4, 3))?;
    let x = Vec1D::new(vec![0.3, -1.2, 0.5, 0.9, -0.1])?;
    let act = model::forward(&net, &x)?;
    let by_sign = multi_warm(&act.logits, 1)?;
    let by_cosine = multi_warm_via_cosine(&net, &x, 1)?;
    println!("sign route {:?}, cosine route {:?}", by_sign.clipped, by_cosine.clipped);
    assert_eq!(by_sign, by_cosine);
    Ok(())
}
