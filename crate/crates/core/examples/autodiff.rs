//! Records a small expression on a tape and reads back its gradients.

use nlmda::tensor::{Tape, Tensor};

fn main() -> nlmda::Result<()> {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?);
    let w = tape.param(Tensor::new([1, 3], vec![0.2, -0.4, 0.1])?);

    // loss = sum(tanh(x W^T) * x), the first factor broadcast along rows
    let h = tape.linear(x, w, None)?;
    let h = tape.tanh(h)?;
    let y = tape.hadamard(h, x)?;
    let loss = tape.sum(y)?;
    tape.backward(loss)?;

    println!("loss = {:.6}", tape.value(loss).item()?);
    println!("dL/dx = {:?}", tape.grad(x).unwrap().data());
    println!("dL/dw = {:?}", tape.grad(w).unwrap().data());
    Ok(())
}
