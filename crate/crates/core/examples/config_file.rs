//! Build a run from `key = value` text, the same format `--config` reads and
//! the CLI writes next to every run as `config.txt`.

use clonalnet::config::Settings;

const TEXT: &str = "\
# clonal run on the synthetic pairs
loss = focusing_picking
alpha = 0.1
beta = 1.0
hidden = 64
epochs = 5
seed = 2
baseline = runs/synthetic-baseline/model.ckpt
dataset = synthetic
pair_overlap = 0.7
";

fn main() -> clonalnet::Result<()> {
    let settings = Settings::from_text(TEXT)?;
    let cfg = settings.resolve();
    println!("loss {} lr {} momentum {} batch {} epochs {}", cfg.loss_kind, cfg.lr, cfg.momentum, cfg.batch_size, cfg.epochs);
    println!("dataset {:?}", cfg.dataset);
    println!("\nfull settings as written back:\n{}", settings.to_text());

    for bad in ["learning_rate = 0.1", "detach_d = maybe", "seed = 1\nseed = 2"] {
        match Settings::from_text(bad) {
            Err(e) => println!("rejected {bad:?}: {e}"),
            Ok(_) => unreachable!(),
        }
    }
    Ok(())
}
