//! Baseline, clonal, distillation and label smoothing over a few seeds on the
//! synthetic task, summarised the same way the `compare` subcommand does.

use clonalnet::autograd::LossKind;
use clonalnet::trainer::{self, DataSource, PreparedData, TrainConfig};

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn main() -> clonalnet::Result<()> {
    let seeds = 0..4u64;
    let kinds = [LossKind::BaselineCe, LossKind::FocusingPicking, LossKind::Kd, LossKind::LabelSmoothing];
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for seed in seeds {
        let cfg = TrainConfig {
            seed,
            hidden_dims: vec![64],
            dataset: DataSource::Synthetic {
                n_pairs: 3,
                pair_overlap: 0.7,
                dim: 10,
                per_class: 300,
            },
            ..TrainConfig::default()
        };
        let data = PreparedData::load(&cfg.dataset, seed)?;
        let (baseline, bm) = trainer::train_baseline(&cfg, &data)?;
        acc[0].push(bm.final_test_acc().unwrap());
        for (i, &kind) in kinds.iter().enumerate().skip(1) {
            let run_cfg = TrainConfig {
                loss_kind: kind,
                ..cfg.clone()
            };
            let (_, m) = match kind {
                LossKind::FocusingPicking => trainer::train_clonal(&run_cfg, &data, &baseline)?,
                _ => trainer::train_comparison(&run_cfg, &data, Some(&baseline))?,
            };
            acc[i].push(m.final_test_acc().unwrap());
        }
    }
    let (base_mean, _) = mean_std(&acc[0]);
    println!("method,n_runs,mean_test_acc,std_test_acc,improvement_pp");
    for (kind, a) in kinds.iter().zip(&acc) {
        let (m, s) = mean_std(a);
        println!("{kind},{},{m:.4},{s:.4},{:+.2}", a.len(), 100.0 * (m - base_mean));
    }
    Ok(())
}
