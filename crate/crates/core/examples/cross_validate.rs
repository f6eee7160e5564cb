//! Five-fold stratified cross-validation of the network and of a logistic
//! baseline on the synthetic set. Pass the per-class size as the first
//! argument (default 300).

use nlmda::model::ModelConfig;
use nlmda::pipeline::{synth_generate, SynthConfig};
use nlmda::train::{cross_validate, cross_validate_with, LogisticModel, TrainConfig};

fn main() -> nlmda::Result<()> {
    let n_per_class = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(300);
    let set = synth_generate(&SynthConfig {
        n_per_class,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig::default();

    let net = cross_validate(&set, &ModelConfig::default(), &cfg, 5, 1)?;
    println!(
        "network   {:.4} ± {:.4}  folds {:?}",
        net.mean, net.ci95_halfwidth, net.fold_accuracies
    );
    for (k, fold) in net.folds.iter().enumerate() {
        println!(
            "  fold {k}: trained {} epochs, selected {}",
            fold.report.loss_curve.len(),
            fold.report.best_epoch
        );
    }

    let (c, t) = (set.channels(), set.samples());
    let base = cross_validate_with(&set, 5, &cfg, 1, |_, _| LogisticModel::new(c, t, 2))?;
    println!("logistic  {:.4} ± {:.4}", base.mean, base.ci95_halfwidth);
    Ok(())
}
