//! Reverse-mode gradients of a dense-skip network against central finite
//! differences.
//!
//! cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecrl::nn::{Activation, DenseSkipNet, Matrix, Tape};

fn loss(net: &DenseSkipNet, x: &Matrix) -> f64 {
    net.forward(x).unwrap().data.iter().map(|v| v * v).sum::<f64>() / 2.0
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = DenseSkipNet::new(5, &[8, 8], 3, Activation::Elu);
    net.init_orthogonal(&mut rng, 2f64.sqrt(), 1.0);
    let x = Matrix::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect());

    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let y = net.forward_tape(&mut tape, input).unwrap();
    // d(½‖y‖²)/dy = y
    let seed = tape.value(y).clone();
    let grads = tape.backward(&net.param_refs(), vec![(y, seed)]);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..net.params().len() {
        for k in 0..net.params()[p].data.len() {
            let orig = net.params()[p].data[k];
            net.params_mut()[p].data[k] = orig + h;
            let up = loss(&net, &x);
            net.params_mut()[p].data[k] = orig - h;
            let down = loss(&net, &x);
            net.params_mut()[p].data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.params[p].data[k];
            worst = worst.max((an - fd).abs() / (an.abs() + fd.abs()).max(1e-8));
        }
    }
    println!("{} parameters, worst relative error {worst:.2e}", net.param_count());
}
