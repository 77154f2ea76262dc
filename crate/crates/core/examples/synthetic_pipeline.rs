//! Full two-phase run on the confusable-pairs synthetic task: train a
//! baseline, derive multi-warm labels from it, train the clonal network, and
//! look at which categories end up sharing label supports.
//!
//! Run files land in `runs/example-synthetic/` unless a directory is given.

use std::path::PathBuf;

use clonalnet::autograd::LossKind;
use clonalnet::labels::label_stats;
use clonalnet::trainer::{self, DataSource, PreparedData, TrainConfig};

fn main() -> clonalnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs/example-synthetic"));
    let cfg = TrainConfig {
        seed: 3,
        hidden_dims: vec![64],
        dataset: DataSource::Synthetic {
            n_pairs: 3,
            pair_overlap: 0.7,
            dim: 10,
            per_class: 500,
        },
        ..TrainConfig::default()
    };
    let data = PreparedData::load(&cfg.dataset, cfg.data_seed())?;
    println!(
        "{} train / {} test examples, {} classes",
        data.train.len(),
        data.test.len(),
        data.n_classes()
    );

    let (baseline, base_metrics) = trainer::train_baseline(&cfg, &data)?;
    trainer::write_run(out.join("baseline"), &baseline, &base_metrics)?;

    let stats = label_stats(&data.train, &baseline)?;
    println!(
        "mean support {:.3}, multi-warm fraction {:.3}",
        stats.mean_support(),
        stats.frac_multi()
    );
    println!("pair co-occurrence (partners are 0-1, 2-3, 4-5):");
    for a in 0..stats.n_classes {
        let row: Vec<String> = (0..stats.n_classes)
            .map(|b| if a == b { "  -  ".to_string() } else { format!("{:.2}", stats.pair_rate(a, b)) })
            .collect();
        println!("  {a}: {}", row.join(" "));
    }

    let clonal_cfg = TrainConfig {
        loss_kind: LossKind::FocusingPicking,
        ..cfg.clone()
    };
    let (clonal, clonal_metrics) = trainer::train_clonal(&clonal_cfg, &data, &baseline)?;
    trainer::write_run(out.join("clonal"), &clonal, &clonal_metrics)?;

    for (name, m) in [("baseline", &base_metrics), ("clonal", &clonal_metrics)] {
        println!("{name:>8}: final test accuracy {:.4}", m.final_test_acc().unwrap_or(f64::NAN));
    }
    println!("runs written under {}", out.display());
    Ok(())
}
