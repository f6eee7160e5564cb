//! Trains the network on a synthetic set, scores the held-out part and
//! reloads the result from a checkpoint.

use nlmda::model::{read_checkpoint, write_checkpoint, ModelConfig, NlmdaNet};
use nlmda::pipeline::{stratified_split, synth_generate, SynthConfig};
use nlmda::train::{evaluate, fit, TrainConfig};

fn main() -> nlmda::Result<()> {
    let set = synth_generate(&SynthConfig {
        n_per_class: 150,
        ..SynthConfig::default()
    })?;
    let split = stratified_split(&set.labels, (70, 15, 15), 0)?;
    let (train, val, test) = (
        set.subset(&split.train)?,
        set.subset(&split.val)?,
        set.subset(&split.test)?,
    );

    let mut net = NlmdaNet::new(ModelConfig {
        n_train: train.len(),
        ..ModelConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let report = fit(&mut net, &train, &val, &cfg)?;
    for (epoch, (loss, acc)) in report
        .loss_curve
        .iter()
        .zip(&report.val_accuracy)
        .enumerate()
    {
        println!("epoch {epoch:>3}  loss {loss:.4}  val {acc:.3}");
    }
    println!("selected epoch {}", report.best_epoch);
    let acc = evaluate(&mut net, &test)?;
    println!("test accuracy {acc:.3}");

    let path = std::env::temp_dir().join("nlmda-example.ckpt");
    write_checkpoint(&net, &path)?;
    let mut restored = read_checkpoint(&path)?;
    println!(
        "restored checkpoint scores {:.3}",
        evaluate(&mut restored, &test)?
    );
    Ok(())
}
