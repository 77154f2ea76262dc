//! Baseline then clonal training on MNIST, 784-[256]-10, 55K/5K split.
//!
//! Expects the four IDX files in `data/mnist` (or the directory given as the
//! first argument). The epoch count can be lowered with a second argument for
//! a quick look; the default matches the trainer default of 10.

use clonalnet::autograd::LossKind;
use clonalnet::trainer::{self, DataSource, PreparedData, TrainConfig};

fn main() -> clonalnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let epochs = args.next().map(|e| e.parse().expect("epochs must be an integer")).unwrap_or(10);
    let cfg = TrainConfig {
        epochs,
        dataset: DataSource::mnist(&dir),
        ..TrainConfig::default()
    };
    let data = PreparedData::load(&cfg.dataset, cfg.data_seed())?;
    println!(
        "train {} / val {} / test {}",
        data.train.len(),
        data.val.as_ref().map_or(0, |v| v.len()),
        data.test.len()
    );

    let (baseline, bm) = trainer::train_baseline(&cfg, &data)?;
    for r in &bm.rows {
        println!("baseline epoch {:>2}: loss {:.4} val {:.4} test {:.4}", r.epoch, r.train_loss, r.val_acc.unwrap_or(f64::NAN), r.test_acc);
    }
    let clonal_cfg = TrainConfig {
        loss_kind: LossKind::FocusingPicking,
        ..cfg
    };
    let (_, cm) = trainer::train_clonal(&clonal_cfg, &data, &baseline)?;
    for r in &cm.rows {
        println!(
            "clonal   epoch {:>2}: l_cls {:.4} r_att {:.4} r_ent {:.4} val {:.4} test {:.4}",
            r.epoch,
            r.mean_l_cls,
            r.mean_r_att.unwrap_or(f64::NAN),
            r.mean_r_ent,
            r.val_acc.unwrap_or(f64::NAN),
            r.test_acc
        );
    }
    let (b, c) = (bm.final_test_acc().unwrap(), cm.final_test_acc().unwrap());
    println!("test accuracy: baseline {b:.4}, clonal {c:.4} ({:+.2} pp)", 100.0 * (c - b));
    Ok(())
}
