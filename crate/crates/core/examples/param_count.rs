//! Parameter budget of the network for a few recording setups.

use nlmda::model::{param_count, ModelConfig};

fn main() -> nlmda::Result<()> {
    let default = ModelConfig::default();
    for (name, n) in default.param_table()? {
        println!("{name:<22} {n:>8}");
    }
    println!("{:<22} {:>8}\n", "total", param_count(&default)?);

    for (fs_hz, n_train) in [(200, 28_497), (200, 2_000), (250, 500), (128, 150)] {
        let cfg = ModelConfig {
            fs_hz,
            n_train,
            samples: fs_hz,
            ..ModelConfig::default()
        };
        println!(
            "fs {fs_hz:>3} Hz, {n_train:>6} training epochs: pooling {:>2}, {} parameters",
            cfg.k_pooling()?,
            param_count(&cfg)?
        );
    }
    Ok(())
}
