//! The focusing-picking loss on a single example, term by term, next to the
//! plain cross-entropy and the two comparison losses.

use clonalnet::labels::multi_warm;
use clonalnet::losses::{self, FocusConfig, KdConfig};
use clonalnet::numerics::{softmax, Vec1D};

fn show(name: &str, v: &Vec1D) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:+.4}")).collect();
    println!("{name:>10}: [{}]", cells.join(", "));
}

fn main() -> clonalnet::Result<()> {
    let gt = 1;
    let baseline = Vec1D::new(vec![1.4, 0.9, -0.7, 0.2, -2.0])?;
    let label = multi_warm(&baseline, gt)?;
    let cfg = FocusConfig::default();

    // a student that is less sure than the baseline on the ground truth is
    // treated as a hard example: d[gt] < 0 lowers its re-weighted probability
    for (tag, z) in [
        ("hard", vec![1.0, 0.3, -0.2, 0.4, -1.0]),
        ("easy", vec![0.2, 2.5, -1.0, 0.1, -1.5]),
    ] {
        let z = Vec1D::new(z)?;
        let fp = losses::focusing_picking(&z, &baseline, gt, &label, &cfg)?;
        println!("{tag} example");
        show("softmax", &softmax(&z));
        show("baseline", &softmax(&baseline));
        show("d", &fp.d);
        show("reweighted", &fp.reweighted_probs);
        show("label", &label.normalized);
        println!(
            "  l_cls {:.4}  r_att {:.4}  r_ent {:.4}  total {:.4} (alpha {}, beta {})",
            fp.l_cls, fp.r_attention, fp.r_entropy, fp.total, cfg.alpha, cfg.beta
        );
        println!(
            "  plain ce {:.4}  label smoothing {:.4}  kd {:.4}",
            losses::softmax_cross_entropy(&z, gt)?,
            losses::label_smoothing_ce(&z, gt, 0.1)?,
            losses::kd_loss(&z, &baseline, gt, &KdConfig::default())?
        );
    }
    Ok(())
}
