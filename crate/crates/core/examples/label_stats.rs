//! How wide multi-warm labels get as confusable pairs move closer together.

use clonalnet::labels::label_stats;
use clonalnet::trainer::{self, DataSource, PreparedData, TrainConfig};

fn main() -> clonalnet::Result<()> {
    println!("overlap,mean_support,frac_multi,partner_rate,other_rate");
    for overlap in [0.0, 0.3, 0.6, 0.9] {
        let cfg = TrainConfig {
            hidden_dims: vec![32],
            epochs: 5,
            dataset: DataSource::Synthetic {
                n_pairs: 2,
                pair_overlap: overlap,
                dim: 8,
                per_class: 300,
            },
            ..TrainConfig::default()
        };
        let data = PreparedData::load(&cfg.dataset, cfg.data_seed())?;
        let (baseline, _) = trainer::train_baseline(&cfg, &data)?;
        let s = label_stats(&data.train, &baseline)?;
        let partner = (s.pair_rate(0, 1) + s.pair_rate(2, 3)) / 2.0;
        let other = (s.pair_rate(0, 2) + s.pair_rate(0, 3) + s.pair_rate(1, 2) + s.pair_rate(1, 3)) / 4.0;
        println!("{overlap},{:.4},{:.4},{partner:.4},{other:.4}", s.mean_support(), s.frac_multi());
    }
    Ok(())
}
