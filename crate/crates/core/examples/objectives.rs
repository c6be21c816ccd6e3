// Evaluate the margin and Fisher refinement losses and their gradients.

use margin_lab::autodiff::{Tape, Tensor};
use margin_lab::objectives::{cross_entropy, fisher_loss, fisher_loss_var, margin_loss};

fn main() {
    let logits = Tensor::from_rows(&[vec![2.0, 1.8, -0.5, 0.1], vec![3.0, 0.0, 0.5, -1.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.8, 0.6], vec![0.0, 1.0], vec![-0.6, 0.8]]).unwrap();

    println!("cross-entropy    {:.5}", cross_entropy(&logits, &[0, 0]).unwrap());
    println!("margin loss      {:.5}", margin_loss(&logits, 0.5).unwrap());
    println!("fisher loss (k3) {:.5}", fisher_loss(&logits, &w, 3, 1e-8).unwrap());

    let mut tape = Tape::new();
    let z = tape.param(logits);
    let u = tape.param(w);
    let loss = fisher_loss_var(&mut tape, z, u, 3, 1e-8).unwrap();
    let grads = tape.backward(loss);
    println!("d loss / d logits:\n{:?}", grads.get_or_zeros(z));
}
