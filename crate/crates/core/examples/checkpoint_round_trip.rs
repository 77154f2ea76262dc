//! Save a trained network as a text checkpoint, load it back, and confirm the
//! fingerprint and predictions survive.

use clonalnet::model::{self, MlpParams};
use clonalnet::trainer::{self, DataSource, PreparedData, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        epochs: 5,
        hidden_dims: vec![16, 8],
        dataset: DataSource::Synthetic {
            n_pairs: 2,
            pair_overlap: 0.5,
            dim: 6,
            per_class: 100,
        },
        ..TrainConfig::default()
    };
    let data = PreparedData::load(&cfg.dataset, cfg.data_seed())?;
    let (params, _) = trainer::train_baseline(&cfg, &data)?;

    let dir = std::env::temp_dir().join(format!("clonalnet-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    params.save(&path)?;
    let text = std::fs::read_to_string(&path)?;
    println!("checkpoint header:");
    for line in text.lines().take(2) {
        println!("  {line}");
    }
    println!("  ... {} lines, {} parameters", text.lines().count(), params.param_count());

    let loaded = MlpParams::load(&path)?;
    println!("fingerprint before {}", params.fingerprint());
    println!("fingerprint after  {}", loaded.fingerprint());
    assert_eq!(loaded, params);
    for i in 0..5 {
        let x = data.test.x(i);
        assert_eq!(model::predict(&params, &x)?, model::predict(&loaded, &x)?);
    }
    println!("test accuracy of reloaded model {:.4}", trainer::evaluate(&loaded, &data.test)?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
