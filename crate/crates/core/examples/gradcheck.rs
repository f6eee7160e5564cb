//! Compares analytic gradients with central differences, op by op and for a
//! small network.

use nlmda::model::{gradcheck_model, ModelConfig};
use nlmda::tensor::primitive_gradchecks;

fn main() -> nlmda::Result<()> {
    for (op, err) in primitive_gradchecks(0)? {
        println!("{op:<16} {err:.2e}");
    }
    let tiny = ModelConfig::tiny();
    println!(
        "{:<16} {:.2e}",
        "network",
        gradcheck_model(&tiny, 2, 0, None)?
    );

    let with_bn = ModelConfig {
        use_batchnorm: true,
        ..tiny
    };
    println!(
        "{:<16} {:.2e}",
        "network (bn)",
        gradcheck_model(&with_bn, 4, 0, None)?
    );
    Ok(())
}
