//! Reverse-mode gradients on the tape, including a gradient of a gradient
//! norm as used by the gradient penalty.

use precip_downscale::tape::{Tape, Tensor};

fn main() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(vec![1, 1, 1, 3], vec![1.0, -2.0, 0.5]));
    let w = t.leaf(Tensor::new(vec![1, 1, 1, 3], vec![0.3, 0.6, -0.4]));
    // f(x) = sum(w * x^2); df/dx = 2 w x.
    let sq = t.square(x);
    let wx = t.mul(w, sq);
    let f = t.sum_all(wx);
    let g = t.grad(f, &[x])[0];
    println!("f = {}, df/dx = {:?}", t.value(f).item(), t.value(g).data);

    // (|df/dx| - 1)^2, differentiated again w.r.t. w.
    let g2 = t.square(g);
    let n2 = t.sum_all(g2);
    let norm = t.sqrt(n2);
    let d = t.add_scalar(norm, -1.0);
    let pen = t.square(d);
    let dw = t.grad(pen, &[w])[0];
    println!(
        "penalty = {:.6}, d penalty / dw = {:?}",
        t.value(pen).item(),
        t.value(dw).data
    );
    println!("{} nodes on the tape", t.len());
}
