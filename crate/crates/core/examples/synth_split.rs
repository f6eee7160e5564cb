//! Generates the synthetic two-class EEG set, splits it and stores it on disk.

use nlmda::pipeline::{
    read_epochs, stratified_kfold, stratified_split, synth_generate, write_epochs, SynthConfig,
};

fn main() -> nlmda::Result<()> {
    let set = synth_generate(&SynthConfig {
        n_per_class: 200,
        ..SynthConfig::default()
    })?;
    println!(
        "generated {} epochs, class counts {:?}",
        set.len(),
        set.class_counts()
    );

    let split = stratified_split(&set.labels, (70, 15, 15), 0)?;
    println!(
        "70/15/15 split: {} / {} / {}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let plan = stratified_kfold(&set.labels, 5, 0)?;
    for (k, fold) in plan.folds.iter().enumerate() {
        let ones = fold.iter().filter(|&&i| set.labels[i] == 1).count();
        println!("fold {k}: {} epochs, {ones} drowsy", fold.len());
    }

    let dir = std::env::temp_dir().join("nlmda-synth-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("synth.neeg");
    write_epochs(&set, &path)?;
    let back = read_epochs(&path)?;
    println!(
        "round trip through {} exact: {}",
        path.display(),
        back == set
    );
    Ok(())
}
