//! Runs one forward pass and prints the channel and depth attention maps.

use nlmda::model::{init_params, model_forward, ModelConfig, ParamVars};
use nlmda::tensor::{Mode, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nlmda::Result<()> {
    let config = ModelConfig {
        use_batchnorm: false,
        ..ModelConfig::default()
    };
    let params = init_params(&config, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::randn([1, 1, config.channels, config.samples], 1.0, &mut rng);

    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &params);
    let xv = tape.constant(x);
    let trace = model_forward(&mut tape, &config, &vars, None, xv, Mode::Eval)?;

    let alpha = tape.value(trace.channel_attention.weights);
    println!("channel attention, one row per depth slice (sums to 1):");
    for d in 0..config.depth {
        let row: Vec<String> = (0..config.channels)
            .map(|c| format!("{:.3}", alpha.get(&[0, d, c])))
            .collect();
        println!("  d{d}: {}", row.join(" "));
    }

    let depth = tape.value(trace.backbone.depth_attention.weights);
    let t_o = depth.shape()[3];
    println!(
        "depth attention at t = 0 and t = {} (averages to 1):",
        t_o - 1
    );
    for d in 0..depth.shape()[1] {
        println!(
            "  d{d}: {:.3} {:.3}",
            depth.get(&[0, d, 0, 0]),
            depth.get(&[0, d, 0, t_o - 1])
        );
    }
    println!("logits: {:?}", tape.value(trace.logits).data());
    Ok(())
}
